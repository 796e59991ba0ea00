"""Embedding losses and their exact gradients.

Four terms drive the per-episode embedding optimization:

* uniformity      : mean Gaussian affinity between class prototypes built
                    from decentralized (double-centered distance) rows;
                    minimizing it spreads prototypes apart.
* classification  : softmax cross-entropy of labeled samples against those
                    prototypes, with negative squared distances as logits.
* local alignment : similarity-weighted, sigmoid-scaled sum of pairwise
                    cosine similarities of the embeddings themselves.
* mixtures        : global = alpha*uniformity + (1-alpha)*classification,
                    total = eta*local + (1-eta)*global.

All gradients with respect to the raw embedding matrix Z are computed
analytically (the centering map is self-adjoint, so backpropagation through
the decov pipeline reuses the forward centering), and are validated against
central finite differences in the test suite.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .decov import SQRT_EPS, _center, elementwise_sqrt, pairwise_sq_dists
from .exceptions import (
    DegenerateCaseWarning,
    InvalidEpisodeError,
    InvalidInputError,
    InvalidStateError,
)

PAIR_SCOPES = ("all_pairs", "same_class_pairs")

UNIT_NORM_TOL = 1e-6


@dataclass(frozen=True)
class LossParams:
    """Hyperparameters of the combined loss.

    alpha   : weight of uniformity within the global loss, in (0, 1).
    eta     : weight of the local loss within the total, in (0, 1).
    gamma   : uniformity bandwidth, > 0. The default is sized to the
              prototype distances the decov rows of a ~100-sample episode
              produce (a few units); a bandwidth far below that scale
              saturates the uniformity term and leaves only noise-level
              gradients for the optimizer to amplify.
    lambda_w: sharpness of the adaptive pair weights, >= 0.
    mu      : sigmoid scale of the nonlinear similarity transform.
    pair_scope: "all_pairs" or "same_class_pairs" (pairs of labeled samples
                with equal class; unlabeled rows then have no active pairs).
    """

    alpha: float = 0.5
    eta: float = 0.5
    gamma: float = 4.0
    lambda_w: float = 10.0
    mu: float = 1.0
    pair_scope: str = "all_pairs"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise InvalidInputError(f"alpha must lie strictly in (0,1), got {self.alpha}")
        if not 0.0 < self.eta < 1.0:
            raise InvalidInputError(f"eta must lie strictly in (0,1), got {self.eta}")
        if self.gamma <= 0.0:
            raise InvalidInputError(f"gamma must be > 0, got {self.gamma}")
        if self.lambda_w < 0.0:
            raise InvalidInputError(f"lambda_w must be >= 0, got {self.lambda_w}")
        if self.pair_scope not in PAIR_SCOPES:
            raise InvalidInputError(f"pair_scope must be one of {PAIR_SCOPES}")


@dataclass(frozen=True)
class Prototypes:
    """Per-class prototype rows: row k-1 is the mean representation of class k."""

    p: np.ndarray


@dataclass(frozen=True)
class LossValue:
    """All loss components of one evaluation.

    Satisfies total == eta_eff*local + (1-eta_eff)*global_ and
    global_ == alpha*uniformity + (1-alpha)*classification by construction
    (disabled components are reported as 0 with the mix weight renormalized
    onto the remaining term).
    """

    total: float
    local: float
    global_: float
    uniformity: float
    classification: float


@dataclass(frozen=True)
class LossGradient:
    """Gradient of the total loss: ``g`` w.r.t. every entry of Z (pre-retraction),
    ``mu_grad`` w.r.t. the sigmoid scale (used when co-optimizing mu)."""

    g: np.ndarray
    mu_grad: float = 0.0


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def psi(s, mu: float):
    """Parameterized sigmoid sigma(mu*s) applied to a similarity value."""
    arr = _sigmoid(mu * np.asarray(s, dtype=float))
    return float(arr) if np.isscalar(s) else arr


def prototypes(rows, indices, classes, n_classes: int) -> Prototypes:
    """Class prototypes as arithmetic means of labeled representation rows.

    Parameters
    ----------
    rows : (n, p) array
        Per-sample representation rows (decov rows in the pipeline).
    indices, classes : int arrays
        Positions of the labeled samples in ``rows`` and their classes 1..N.
    n_classes : int
        N; every class 1..N must have at least one labeled sample.
    """
    rows = np.asarray(rows, dtype=float)
    indices = np.asarray(indices, dtype=int)
    classes = np.asarray(classes, dtype=int)
    p = np.empty((n_classes, rows.shape[1]))
    for k in range(1, n_classes + 1):
        members = indices[classes == k]
        if members.size == 0:
            raise InvalidEpisodeError(f"class {k} has no labeled samples")
        p[k - 1] = rows[members].mean(axis=0)
    return Prototypes(p=p)


def uniformity_loss(protos: Prototypes, gamma: float) -> float:
    """Mean Gaussian affinity exp(-||P_c - P_j||^2 / gamma^2) over ordered
    prototype pairs; 1 iff all prototypes coincide, -> 0 as they separate."""
    p = protos.p
    n_p = p.shape[0]
    if n_p < 2:
        warnings.warn("uniformity loss needs >= 2 prototypes; returning 0",
                      DegenerateCaseWarning, stacklevel=2)
        return 0.0
    w = np.exp(-pairwise_sq_dists(p) / gamma**2)
    np.fill_diagonal(w, 0.0)
    return float(w.sum() / (n_p * (n_p - 1)))


def _logits(rows_sel: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Negative squared distances of selected rows to every prototype."""
    d = (
        np.einsum("ij,ij->i", rows_sel, rows_sel)[:, None]
        + np.einsum("ij,ij->i", p, p)[None, :]
        - 2.0 * rows_sel @ p.T
    )
    return -np.maximum(d, 0.0)


def classification_loss(rows, protos: Prototypes, indices, classes) -> float:
    """Mean softmax cross-entropy of labeled rows against the prototypes,
    with logits -||row_i - P_c||^2."""
    indices = np.asarray(indices, dtype=int)
    classes = np.asarray(classes, dtype=int)
    if indices.size == 0:
        raise InvalidInputError("classification loss needs a nonempty labeled set")
    rows = np.asarray(rows, dtype=float)
    logits = _logits(rows[indices], protos.p)
    mx = logits.max(axis=1)
    lse = mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(indices.size), classes - 1]))


def global_loss(uniformity: float, classification: float, alpha: float) -> float:
    """Convex combination alpha*uniformity + (1-alpha)*classification."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie strictly in (0,1), got {alpha}")
    return alpha * uniformity + (1.0 - alpha) * classification


def pairwise_similarity(z) -> np.ndarray:
    """Cosine similarities z_i.z_j of unit-norm embedding rows.

    Rows whose norm deviates from 1 by more than ``UNIT_NORM_TOL`` raise an
    invalid-state error; the diagonal is forced to exactly 1.
    """
    z = np.asarray(z, dtype=float)
    norms = np.linalg.norm(z, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        worst = int(np.argmax(np.abs(norms - 1.0)))
        raise InvalidStateError(
            f"row {worst} has norm {norms[worst]:.9f}, not unit within {UNIT_NORM_TOL:g}"
        )
    p = z @ z.T
    np.fill_diagonal(p, 1.0)
    return p


def _scope_mask(n: int, pair_scope: str, labels) -> np.ndarray:
    mask = ~np.eye(n, dtype=bool)
    if pair_scope == "same_class_pairs":
        if labels is None:
            raise InvalidInputError("same_class_pairs scope requires labels")
        lab = np.asarray(labels, dtype=int)
        if lab.shape != (n,):
            raise InvalidInputError("labels must have one entry per sample")
        known = lab > 0
        mask &= (lab[:, None] == lab[None, :]) & known[:, None] & known[None, :]
    return mask


def adaptive_weights(p, lambda_w: float, pair_scope: str = "all_pairs",
                     labels=None) -> np.ndarray:
    """Row-wise softmax weights beta_ij = exp(lambda_w*p_ij) / sum_k exp(lambda_w*p_ik)
    over the active pair scope. Self-pairs are excluded from both the
    numerator domain and the normalizer; a row with no active pairs becomes
    all zeros (with a DegenerateCaseWarning).

    ``labels``: episode labels, class 1..N for labeled samples and 0 for
    unlabeled; only consulted under the same_class_pairs scope.
    """
    p = np.asarray(p, dtype=float)
    if lambda_w < 0.0:
        raise InvalidInputError(f"lambda_w must be >= 0, got {lambda_w}")
    if pair_scope not in PAIR_SCOPES:
        raise InvalidInputError(f"pair_scope must be one of {PAIR_SCOPES}")
    n = p.shape[0]
    mask = _scope_mask(n, pair_scope, labels)
    empty = ~mask.any(axis=1)
    if empty.any():
        warnings.warn(
            f"{int(empty.sum())} row(s) have an empty pair scope; their weights are 0",
            DegenerateCaseWarning, stacklevel=2,
        )
    scores = np.where(mask, lambda_w * p, -np.inf)
    rowmax = np.where(empty, 0.0, scores.max(axis=1))
    e = np.zeros_like(p)
    np.exp(scores - rowmax[:, None], out=e, where=mask)
    totals = e.sum(axis=1)
    totals[empty] = 1.0
    return e / totals[:, None]


def local_loss(z, params: LossParams, labels=None) -> float:
    """Local alignment loss -sum_{(i,j) active} beta_ij * p_ij * sigma(mu*p_ij)."""
    value, _, _ = _local_terms(np.asarray(z, dtype=float), params, labels, need_grad=False)
    return value


# ---------------------------------------------------------------------------
# Combined evaluation (shared by the public wrappers and the optimizer)
# ---------------------------------------------------------------------------

def _local_terms(z, params, labels, need_grad):
    """Value, dL/dZ, and dL/dmu of the local alignment loss."""
    p = z @ z.T
    beta = adaptive_weights(p, params.lambda_w, params.pair_scope, labels)
    sig = _sigmoid(params.mu * p)
    f = p * sig
    row_vals = (beta * f).sum(axis=1)
    value = float(-row_vals.sum())
    if not need_grad:
        return value, None, None
    sig_prime = sig * (1.0 - sig)
    f_prime = sig + p * params.mu * sig_prime
    g_sim = -(beta * f_prime + params.lambda_w * beta * (f - row_vals[:, None]))
    g_sim[beta == 0.0] = 0.0  # outside the active scope nothing propagates
    grad_z = (g_sim + g_sim.T) @ z
    mu_grad = float(-(beta * p * p * sig_prime).sum())
    return value, grad_z, mu_grad


def _global_terms(z, episode, params, norm_factor, w_unif, w_cls, need_grad):
    """Uniformity and classification values plus the weighted gradient
    w_unif*dU/dZ + w_cls*dC/dZ, backpropagated through the decov pipeline."""
    n = z.shape[0]
    m = n if norm_factor is None else norm_factor
    sup_pos = np.asarray(episode.support_positions, dtype=int)
    sup_cls = np.asarray(episode.support_classes, dtype=int)
    n_way = episode.n_way

    a = pairwise_sq_dists(z)
    b = elementwise_sqrt(a)
    dmat = _center(b, m)

    counts = np.bincount(sup_cls, minlength=n_way + 1)[1:].astype(float)
    protos = np.zeros((n_way, n))
    np.add.at(protos, sup_cls - 1, dmat[sup_pos])
    protos /= counts[:, None]

    # uniformity over ordered prototype pairs
    w = np.exp(-pairwise_sq_dists(protos) / params.gamma**2)
    np.fill_diagonal(w, 0.0)
    denom = n_way * (n_way - 1)
    u_val = float(w.sum() / denom) if n_way >= 2 else 0.0

    # classification over the labeled (support) rows
    rows_sel = dmat[sup_pos]
    logits = _logits(rows_sel, protos)
    mx = logits.max(axis=1)
    exps = np.exp(logits - mx[:, None])
    lse = mx + np.log(exps.sum(axis=1))
    c_val = float(np.mean(lse - logits[np.arange(sup_pos.size), sup_cls - 1]))

    if not need_grad:
        return u_val, c_val, None

    g_protos = np.zeros_like(protos)
    if n_way >= 2 and w_unif != 0.0:
        lap = np.diag(w.sum(axis=1)) - w
        g_protos += (-4.0 * w_unif / (params.gamma**2 * denom)) * (lap @ protos)

    g_rows = np.zeros((sup_pos.size, n))
    if w_cls != 0.0:
        soft = exps / exps.sum(axis=1, keepdims=True)
        resid = soft.copy()
        resid[np.arange(sup_pos.size), sup_cls - 1] -= 1.0  # s_ic - [c == y_i]
        scale = 2.0 * w_cls / sup_pos.size
        # dC/dP_c = scale * sum_i resid_ic (D_i - P_c)
        g_protos += scale * (resid.T @ rows_sel - resid.sum(axis=0)[:, None] * protos)
        # dC/dD_i = scale * (sum_c s_ic P_c - P_{y_i})
        g_rows = scale * (soft @ protos - protos[sup_cls - 1])

    # prototype means distribute onto their support decov rows
    g_dmat = np.zeros((n, n))
    g_dmat[sup_pos] += g_protos[sup_cls - 1] / counts[sup_cls - 1][:, None]
    g_dmat[sup_pos] += g_rows

    g_b = _center(g_dmat, m)  # the centering map is self-adjoint
    with np.errstate(divide="ignore", invalid="ignore"):
        g_a = np.where(a >= SQRT_EPS, g_b / (2.0 * b), 0.0)
    h = g_a + g_a.T
    grad_z = 2.0 * (h.sum(axis=1)[:, None] * z - h @ z)
    return u_val, c_val, grad_z


def _evaluate(z, episode, params, norm_factor, include_local, include_global, need_grad):
    z = np.asarray(z, dtype=float)
    if z.shape[0] != episode.n_samples:
        raise InvalidInputError(
            f"Z has {z.shape[0]} rows but the episode has {episode.n_samples} samples"
        )
    if include_local and include_global:
        eta_eff = params.eta
    else:
        eta_eff = 1.0 if include_local else 0.0

    local_val = 0.0
    grad = np.zeros_like(z) if need_grad else None
    mu_grad = 0.0
    if include_local:
        labels = episode.transductive_labels if params.pair_scope == "same_class_pairs" else None
        local_val, g_local, g_mu = _local_terms(z, params, labels, need_grad)
        if need_grad:
            grad += eta_eff * g_local
            mu_grad = eta_eff * g_mu

    u_val = c_val = glob_val = 0.0
    if include_global:
        w_glob = 1.0 - eta_eff
        u_val, c_val, g_glob = _global_terms(
            z, episode, params, norm_factor,
            w_unif=w_glob * params.alpha, w_cls=w_glob * (1.0 - params.alpha),
            need_grad=need_grad,
        )
        glob_val = params.alpha * u_val + (1.0 - params.alpha) * c_val
        if need_grad:
            grad += g_glob

    value = LossValue(
        total=eta_eff * local_val + (1.0 - eta_eff) * glob_val,
        local=local_val,
        global_=glob_val,
        uniformity=u_val,
        classification=c_val,
    )
    if not need_grad:
        return value, None
    return value, LossGradient(g=grad, mu_grad=mu_grad)


def total_loss(z, episode, params: LossParams, norm_factor: int | None = None,
               include_local: bool = True, include_global: bool = True) -> LossValue:
    """All loss components for embedding matrix ``z`` on ``episode``.

    ``z`` rows follow the episode-local order (support first, then queries,
    as produced by ``Episode.gather``). A disabled component is reported as
    0 and the total collapses onto the remaining term. Small deviations of
    the rows from unit norm are tolerated so the loss stays defined under
    finite-difference probing.
    """
    value, _ = _evaluate(z, episode, params, norm_factor,
                         include_local, include_global, need_grad=False)
    return value


def total_loss_gradient(z, episode, params: LossParams, norm_factor: int | None = None,
                        include_local: bool = True,
                        include_global: bool = True) -> LossGradient:
    """Exact gradient of ``total_loss`` w.r.t. every entry of ``z``
    (ambient gradient, before any reprojection onto the sphere)."""
    _, grad = _evaluate(z, episode, params, norm_factor,
                        include_local, include_global, need_grad=True)
    return grad


def total_loss_and_gradient(z, episode, params: LossParams,
                            norm_factor: int | None = None,
                            include_local: bool = True,
                            include_global: bool = True):
    """Value and gradient in one pass (the optimizer's inner call)."""
    return _evaluate(z, episode, params, norm_factor,
                     include_local, include_global, need_grad=True)
