"""Finite-difference validation of the analytic loss gradient.

The probe only ever calls ``total_loss`` (the value path), so it stays an
independent oracle for ``total_loss_gradient`` (the analytic path).
"""

from __future__ import annotations

import numpy as np

from .episodes import Episode
from .losses import LossParams, total_loss, total_loss_gradient


def finite_difference_gradient(z, episode, params: LossParams, h: float = 1e-5,
                               norm_factor: int | None = None,
                               include_local: bool = True,
                               include_global: bool = True) -> np.ndarray:
    """Central-difference gradient of total_loss, entry by entry."""
    z = np.array(z, dtype=float)
    grad = np.zeros_like(z)
    for i in range(z.shape[0]):
        for j in range(z.shape[1]):
            orig = z[i, j]
            z[i, j] = orig + h
            up = total_loss(z, episode, params, norm_factor,
                            include_local, include_global).total
            z[i, j] = orig - h
            down = total_loss(z, episode, params, norm_factor,
                              include_local, include_global).total
            z[i, j] = orig
            grad[i, j] = (up - down) / (2.0 * h)
    return grad


def random_instance(rng, n_way: int = 5, k_shot: int = 1, n_queries: int = 1,
                    dim: int = 4):
    """A synthetic episode plus unit-norm embeddings for gradient probing."""
    n = n_way * (k_shot + n_queries)
    episode = Episode(
        support_rows=np.arange(n_way * k_shot),
        support_classes=np.repeat(np.arange(1, n_way + 1), k_shot),
        query_rows=np.arange(n_way * k_shot, n),
        query_classes=np.repeat(np.arange(1, n_way + 1), n_queries),
        n_way=n_way,
        k_shot=k_shot,
        n_queries=n_queries,
    )
    z = rng.standard_normal((n, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z, episode


def gradient_check_suite(instances: int = 10, seed: int = 0, h: float = 1e-5,
                         tol: float = 1e-4):
    """Compare analytic and finite-difference gradients on random 5-way
    instances (n <= 12, d <= 5). Returns one record per instance with the
    max-norm relative error and a pass flag."""
    rng = np.random.default_rng(seed)
    records = []
    for idx in range(instances):
        dim = int(rng.integers(2, 6))
        z, episode = random_instance(rng, dim=dim)
        params = LossParams(
            alpha=float(rng.uniform(0.2, 0.8)),
            eta=float(rng.uniform(0.2, 0.8)),
            gamma=float(rng.uniform(0.5, 2.0)),
            lambda_w=float(rng.uniform(0.0, 8.0)),
            mu=float(rng.uniform(0.5, 2.0)),
        )
        analytic = total_loss_gradient(z, episode, params).g
        probe = finite_difference_gradient(z, episode, params, h=h)
        scale = max(float(np.abs(probe).max()), 1e-12)
        rel_err = float(np.abs(analytic - probe).max() / scale)
        records.append({
            "instance": idx,
            "n": z.shape[0],
            "dim": dim,
            "rel_error": rel_err,
            "passed": rel_err < tol,
        })
    return records
