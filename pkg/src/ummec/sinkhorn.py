"""Variational Sinkhorn classification: entropic optimal transport between
embedded samples and class centers, with iterative center refinement.

The outer loop alternates (i) solving an entropically regularized transport
problem from all episode samples to the current class centers and (ii)
moving each center a fractional step toward its transport barycenter. The
final centers classify queries by nearest squared distance; the transport
plan itself offers an equivalent row-argmax decision rule.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    DegenerateCaseWarning,
    DegenerateClassError,
    InvalidEpisodeError,
    InvalidInputError,
    NumericalUnderflowError,
)


@dataclass(frozen=True)
class ClassCenters:
    """Class centers in embedding space: row k-1 is the center of class k."""

    c: np.ndarray


@dataclass(frozen=True)
class TransportPlan:
    """Nonnegative coupling ``p`` (n x K) with source marginal ``r`` and
    target marginal ``c_marg``; ``iterations`` and ``residual`` report the
    scaling loop's effort and final max-norm marginal violation."""

    p: np.ndarray
    r: np.ndarray
    c_marg: np.ndarray
    iterations: int = 0
    residual: float = 0.0


@dataclass(frozen=True)
class SinkhornConfig:
    """Transport solver knobs.

    lambda_ot      : inverse entropic regularization (Gibbs kernel exp(-lambda*M)).
    step_size      : center update rate in [0, 1] (0 freezes the centers).
    outer_iters    : center-refinement iterations T.
    inner_tol      : max-norm marginal residual target of the scaling loop.
    inner_max_iters: scaling-iteration cap per outer step.
    """

    lambda_ot: float = 10.0
    step_size: float = 0.3
    outer_iters: int = 10
    inner_tol: float = 1e-6
    inner_max_iters: int = 200

    def __post_init__(self):
        if self.lambda_ot <= 0.0:
            raise InvalidInputError("lambda_ot must be > 0")
        if not 0.0 <= self.step_size <= 1.0:
            raise InvalidInputError("step_size must lie in [0, 1]")
        if self.outer_iters < 1 or self.inner_max_iters < 1:
            raise InvalidInputError("iteration counts must be >= 1")
        if self.inner_tol <= 0.0:
            raise InvalidInputError("inner_tol must be > 0")


CENTER_CONVERGENCE_TOL = 1e-8


def init_centers(state, support_positions, support_classes, n_classes: int) -> ClassCenters:
    """Initial center of class k: mean of its support embeddings.

    A center can be degenerate (e.g. the zero vector for two antipodal
    support points); that is allowed but flagged with a warning.
    """
    z = np.asarray(getattr(state, "z", state), dtype=float)
    support_positions = np.asarray(support_positions, dtype=int)
    support_classes = np.asarray(support_classes, dtype=int)
    c = np.empty((n_classes, z.shape[1]))
    for k in range(1, n_classes + 1):
        members = support_positions[support_classes == k]
        if members.size == 0:
            raise InvalidEpisodeError(f"class {k} has no support samples")
        c[k - 1] = z[members].mean(axis=0)
    tiny = np.linalg.norm(c, axis=1) < 1e-9
    if tiny.any():
        warnings.warn(
            f"{int(tiny.sum())} class center(s) are numerically zero vectors",
            DegenerateCaseWarning, stacklevel=2,
        )
    return ClassCenters(c=c)


def cost_matrix(state, centers: ClassCenters) -> np.ndarray:
    """M[i, k] = ||z_i - c_k||^2 for every sample/center pair."""
    z = np.asarray(getattr(state, "z", state), dtype=float)
    c = centers.c
    if z.shape[1] != c.shape[1]:
        raise InvalidInputError(
            f"embedding dim {z.shape[1]} != center dim {c.shape[1]}"
        )
    m = (
        np.einsum("ij,ij->i", z, z)[:, None]
        + np.einsum("ij,ij->i", c, c)[None, :]
        - 2.0 * z @ c.T
    )
    return np.maximum(m, 0.0)


def sinkhorn_plan(m, r, c_marg, config: SinkhornConfig) -> TransportPlan:
    """Solve min_P <P, M> + (1/lambda) KL(P || r c^T) over couplings with
    marginals (r, c_marg) by Sinkhorn scaling of the Gibbs kernel.

    Starts from u = 1, v = 1 and K = exp(-lambda*M), then alternates
    u <- r / (K v), v <- c_marg / (K^T u) until both marginal residuals
    (max norm) drop below ``inner_tol`` or ``inner_max_iters`` is reached.

    Raises NumericalUnderflowError if the kernel underflows to an all-zero
    row or column (remedy: decrease lambda_ot).
    """
    m = np.asarray(m, dtype=float)
    r = np.asarray(r, dtype=float)
    c_marg = np.asarray(c_marg, dtype=float)
    n, k = m.shape
    if r.shape != (n,) or c_marg.shape != (k,):
        raise InvalidInputError("marginal lengths must match the cost matrix shape")
    if np.any(r <= 0.0) or np.any(c_marg <= 0.0):
        raise InvalidInputError("marginals must be strictly positive")
    if not (np.isclose(r.sum(), 1.0, atol=1e-9) and np.isclose(c_marg.sum(), 1.0, atol=1e-9)):
        raise InvalidInputError("marginals must each sum to 1")

    kernel = np.exp(-config.lambda_ot * m)
    if np.any(kernel.sum(axis=1) == 0.0) or np.any(kernel.sum(axis=0) == 0.0):
        raise NumericalUnderflowError(
            "Gibbs kernel exp(-lambda_ot*M) underflowed to an all-zero row or "
            "column; use a smaller lambda_ot"
        )

    u = np.ones(n)
    v = np.ones(k)
    iterations = 0
    residual = np.inf
    for _ in range(config.inner_max_iters):
        kv = kernel @ v
        if np.any(kv == 0.0) or not np.all(np.isfinite(kv)):
            raise NumericalUnderflowError(
                "Sinkhorn scaling degenerated; use a smaller lambda_ot"
            )
        u = r / kv
        ktu = kernel.T @ u
        if np.any(ktu == 0.0) or not np.all(np.isfinite(ktu)):
            raise NumericalUnderflowError(
                "Sinkhorn scaling degenerated; use a smaller lambda_ot"
            )
        v = c_marg / ktu
        iterations += 1
        plan = u[:, None] * kernel * v[None, :]
        residual = max(
            np.abs(plan.sum(axis=1) - r).max(),
            np.abs(plan.sum(axis=0) - c_marg).max(),
        )
        if residual < config.inner_tol:
            break
    plan = u[:, None] * kernel * v[None, :]
    return TransportPlan(p=plan, r=r, c_marg=c_marg, iterations=iterations,
                         residual=float(residual))


def update_centers(plan: TransportPlan, state, centers: ClassCenters,
                   step_size: float) -> ClassCenters:
    """Move each center a fraction ``step_size`` toward its transport
    barycenter Omega_k = sum_i P[i,k] z_i / sum_i P[i,k]."""
    z = np.asarray(getattr(state, "z", state), dtype=float)
    mass = plan.p.sum(axis=0)
    if np.any(mass <= 0.0):
        dead = int(np.argmin(mass)) + 1
        raise DegenerateClassError(f"class {dead} received zero transport mass")
    omega = (plan.p.T @ z) / mass[:, None]
    return ClassCenters(c=centers.c + step_size * (omega - centers.c))


def transport_objective(plan: TransportPlan, m, lambda_ot: float) -> float:
    """<P, M> + (1/lambda) KL(P || r c^T), the quantity the inner loop minimizes."""
    p = plan.p
    ref = plan.r[:, None] * plan.c_marg[None, :]
    pos = p > 0.0
    kl = float((p[pos] * np.log(p[pos] / ref[pos])).sum())
    return float((p * m).sum() + kl / lambda_ot)


def variational_sinkhorn(state, centers0: ClassCenters, config: SinkhornConfig,
                         r=None, c_marg=None, log: bool = False,
                         diagnostics_path: str | None = None):
    """Alternate transport solving and center refinement for ``outer_iters``
    rounds (early exit once the max center displacement drops below 1e-8).

    ``r`` defaults to the uniform distribution over all episode samples and
    ``c_marg`` to uniform class mass, matching a balanced N-way protocol.
    Returns ``(centers, plan)``; with ``log=True`` a third dict records per
    outer iteration the transport objective, marginal residual, center
    displacement, and inner iteration count (also dumpable as CSV via
    ``diagnostics_path``).
    """
    z = np.asarray(getattr(state, "z", state), dtype=float)
    n = z.shape[0]
    k = centers0.c.shape[0]
    if r is None:
        r = np.full(n, 1.0 / n)
    if c_marg is None:
        c_marg = np.full(k, 1.0 / k)

    centers = centers0
    plan = None
    history = []
    for _ in range(config.outer_iters):
        m = cost_matrix(z, centers)
        plan = sinkhorn_plan(m, r, c_marg, config)
        new_centers = update_centers(plan, z, centers, config.step_size)
        displacement = float(np.linalg.norm(new_centers.c - centers.c, axis=1).max())
        history.append({
            "objective": transport_objective(plan, m, config.lambda_ot),
            "marginal_residual": plan.residual,
            "center_displacement": displacement,
            "inner_iterations": plan.iterations,
        })
        centers = new_centers
        if displacement < CENTER_CONVERGENCE_TOL:
            break

    if diagnostics_path is not None:
        with open(diagnostics_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(history[0]))
            writer.writeheader()
            writer.writerows(history)
    if log:
        return centers, plan, history
    return centers, plan


def classify_queries(query_rows, centers: ClassCenters) -> np.ndarray:
    """Nearest-center rule: class of argmin_k ||z_q - c_k||^2, ties to the
    smallest class index. Returns classes 1..K."""
    q = np.asarray(query_rows, dtype=float)
    if not np.all(np.isfinite(centers.c)):
        raise InvalidInputError("centers contain non-finite entries")
    m = cost_matrix(q, centers)
    return np.argmin(m, axis=1) + 1


def classify_by_plan(plan: TransportPlan, query_positions) -> np.ndarray:
    """Row-argmax rule on the transport plan, same tie behavior. Returns
    classes 1..K for the given plan rows."""
    rows = plan.p[np.asarray(query_positions, dtype=int)]
    return np.argmax(rows, axis=1) + 1
