"""Per-episode embedding optimization on the unit hypersphere.

The embedding matrix Z itself is the free parameter: rows start as the
L2-normalized input features and are refined by Adam steps on the exact
loss gradient, with each row renormalized to unit length after every update
(projection retraction). No network is trained; the whole optimization is
transductive and local to one episode.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .exceptions import DivergedError, InvalidInputError
from .losses import LossParams, total_loss_and_gradient

# A row already unit to the last bit is left untouched so zero updates stay
# bit-stable; any real update drifts past this and gets renormalized.
RETRACT_EPS = 1e-12


@dataclass(frozen=True)
class EmbeddingState:
    """Embedding matrix with unit-norm rows (points on the sphere)."""

    z: np.ndarray

    def row_norms(self) -> np.ndarray:
        return np.linalg.norm(self.z, axis=1)


@dataclass(frozen=True)
class OptimConfig:
    """Adam schedule for the per-episode optimization.

    ``seed`` is echoed into run configurations for reproducibility records;
    the optimizer itself is deterministic and does not consume randomness.
    ``learn_mu`` co-optimizes the sigmoid scale of the local loss alongside Z.
    """

    steps: int = 150
    learning_rate: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    learn_mu: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise InvalidInputError(f"steps must be >= 1, got {self.steps}")
        if self.learning_rate < 0.0:
            raise InvalidInputError("learning_rate must be >= 0")
        if not (0.0 <= self.adam_beta1 < 1.0 and 0.0 <= self.adam_beta2 < 1.0):
            raise InvalidInputError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0.0:
            raise InvalidInputError("adam_eps must be > 0")


def _retract(z: np.ndarray) -> None:
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms < 1e-12):
        raise InvalidInputError("a row collapsed to zero norm; cannot project to the sphere")
    adjust = np.abs(norms - 1.0) > RETRACT_EPS
    if adjust.any():
        z[adjust] /= norms[adjust, None]


def init_embeddings(x) -> EmbeddingState:
    """Project episode feature rows onto the unit sphere: z_i = x_i / ||x_i||."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 2:
        raise InvalidInputError(f"expected a 2-D feature matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("feature matrix contains non-finite entries")
    norms = np.linalg.norm(x, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise InvalidInputError(f"sample {int(bad[0])} has a zero-norm feature vector")
    return EmbeddingState(z=x / norms[:, None])


def optimize_episode(z0: EmbeddingState, episode, loss_params: LossParams,
                     optim_config: OptimConfig, *, norm_factor: int | None = None,
                     include_local: bool = True, include_global: bool = True,
                     callback=None, trace_path: str | None = None, log: bool = False):
    """Run ``steps`` Adam updates on the total-loss gradient with per-step
    sphere retraction.

    The loss is evaluated at the start of each step (pre-update); the
    optional ``callback(step, z, value)`` fires after the step's update and
    retraction with a copy of the new state. ``trace_path`` writes a CSV of
    (step, total, local, global, uniformity, classification). With
    ``log=True`` returns ``(state, log_dict)`` where the dict carries the
    loss trace and the final sigmoid scale.

    Deterministic: identical inputs and config give bit-identical output on
    a fixed platform. Raises DivergedError (with the step index) if the loss
    or gradient turns non-finite.
    """
    z = np.array(z0.z, dtype=float)
    mu = loss_params.mu
    m1 = np.zeros_like(z)
    m2 = np.zeros_like(z)
    mu_m1 = mu_m2 = 0.0
    b1, b2 = optim_config.adam_beta1, optim_config.adam_beta2
    lr, eps = optim_config.learning_rate, optim_config.adam_eps
    trace = []

    for step in range(optim_config.steps):
        params = replace(loss_params, mu=mu) if optim_config.learn_mu else loss_params
        value, grad = total_loss_and_gradient(
            z, episode, params, norm_factor=norm_factor,
            include_local=include_local, include_global=include_global,
        )
        if not np.isfinite(value.total):
            raise DivergedError(f"non-finite loss at step {step}", step)
        if not np.all(np.isfinite(grad.g)):
            raise DivergedError(f"non-finite gradient at step {step}", step)
        trace.append((step, value.total, value.local, value.global_,
                      value.uniformity, value.classification))

        t = step + 1
        m1 = b1 * m1 + (1.0 - b1) * grad.g
        m2 = b2 * m2 + (1.0 - b2) * grad.g**2
        m1_hat = m1 / (1.0 - b1**t)
        m2_hat = m2 / (1.0 - b2**t)
        z -= lr * m1_hat / (np.sqrt(m2_hat) + eps)
        _retract(z)

        if optim_config.learn_mu:
            mu_m1 = b1 * mu_m1 + (1.0 - b1) * grad.mu_grad
            mu_m2 = b2 * mu_m2 + (1.0 - b2) * grad.mu_grad**2
            mu -= lr * (mu_m1 / (1.0 - b1**t)) / (np.sqrt(mu_m2 / (1.0 - b2**t)) + eps)

        if callback is not None:
            callback(step, z.copy(), value)

    if trace_path is not None:
        write_loss_trace(trace_path, trace)
    state = EmbeddingState(z=z)
    if log:
        return state, {"loss_trace": trace, "final_mu": mu}
    return state


def write_loss_trace(path: str, trace) -> None:
    """Dump a per-step loss trace as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "local", "global", "uniformity", "classification"])
        writer.writerows(trace)
