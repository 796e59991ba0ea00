"""Pairwise distance matrices and the double-centered "decentralized covariance" matrix.

The embedding losses do not act on raw vectors but on rows of a
double-centered pairwise Euclidean distance matrix. Removing row, column,
and grand means from the distance matrix strips the global offsets that let
a few samples act as near neighbors of almost everything else (hubness), so
classes are compared through their relative distance structure instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

# Squared distances below this are treated as exact zeros with zero
# derivative: sqrt has an unbounded slope at 0 and self-distances carry no
# useful gradient.
SQRT_EPS = 1e-12

# Negative squared distances larger than this cannot be round-off from the
# norm-expansion identity and are rejected instead of clamped.
NEG_TOL = 1e-9


@dataclass(frozen=True)
class DistanceMatrices:
    """Squared (``delta_e``) and plain (``delta_b``) Euclidean distance matrices.

    Both are symmetric with a zero diagonal, and ``delta_b**2 == delta_e``
    up to floating round-off.
    """

    delta_e: np.ndarray
    delta_b: np.ndarray


@dataclass(frozen=True)
class DecovMatrix:
    """Double-centered distance matrix.

    ``d`` is the n-by-n centered matrix; row i is the decentralized
    representation of sample i. ``norm_factor`` is the divisor used for the
    row/column/grand means. With ``norm_factor == n`` the row and column
    sums of ``d`` vanish; other divisors rescale the correction terms.
    """

    d: np.ndarray
    norm_factor: int


def _as_matrix(z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 2 or z.shape[0] < 1 or z.shape[1] < 1:
        raise InvalidInputError(f"expected a 2-D matrix with n, d >= 1, got shape {z.shape}")
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("input matrix contains non-finite entries")
    return z


def pairwise_sq_dists(z) -> np.ndarray:
    """Squared Euclidean distances between all row pairs of ``z``.

    Uses the norm-expansion identity
    ``||z_i - z_j||^2 = ||z_i||^2 + ||z_j||^2 - 2 z_i.z_j``; small negative
    values produced by round-off are clamped to 0.

    Parameters
    ----------
    z : (n, d) array
        Row vectors; all entries must be finite.

    Returns
    -------
    (n, n) array
        Symmetric, nonnegative, zero diagonal.
    """
    z = _as_matrix(z)
    sq = np.einsum("ij,ij->i", z, z)
    d = sq[:, None] + sq[None, :] - 2.0 * (z @ z.T)
    d = 0.5 * (d + d.T)  # gemm round-off can break exact symmetry
    np.maximum(d, 0.0, out=d)
    np.fill_diagonal(d, 0.0)
    return d


def elementwise_sqrt(delta_e) -> np.ndarray:
    """Entrywise square root of a squared-distance matrix.

    Entries below ``SQRT_EPS`` map to exactly 0 (and are treated as having
    zero derivative by the gradient code). Entries more negative than
    ``-NEG_TOL`` are rejected.
    """
    a = np.asarray(delta_e, dtype=float)
    if np.any(a < -NEG_TOL):
        raise InvalidInputError(
            f"negative entries below -{NEG_TOL:g} in squared-distance matrix"
        )
    out = np.sqrt(np.maximum(a, 0.0))
    out[a < SQRT_EPS] = 0.0
    return out


def _center(mat: np.ndarray, norm_factor: float) -> np.ndarray:
    """Subtract column means, row means, and add back the grand mean, all
    with divisor ``norm_factor``. Self-adjoint as a linear map, which is why
    the loss gradients reuse it for backpropagation."""
    m = float(norm_factor)
    col = mat.sum(axis=0, keepdims=True) / m
    row = mat.sum(axis=1, keepdims=True) / m
    grand = mat.sum() / (m * m)
    return mat - col - row + grand


def double_center(delta_b, norm_factor: int) -> DecovMatrix:
    """Double-center a (symmetric) distance matrix.

    Parameters
    ----------
    delta_b : (n, n) array
        Pairwise distance matrix; expected symmetric and nonnegative.
    norm_factor : int
        Divisor for the mean-removal terms. ``norm_factor == n`` gives the
        classical double centering ``J @ delta_b @ J`` with
        ``J = I - (1/n) 11^T`` and makes all row and column sums vanish.

    Returns
    -------
    DecovMatrix
    """
    b = np.asarray(delta_b, dtype=float)
    if b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise InvalidInputError(f"double centering requires a square matrix, got {b.shape}")
    if int(norm_factor) < 1:
        raise InvalidInputError("norm_factor must be a positive integer")
    return DecovMatrix(d=_center(b, norm_factor), norm_factor=int(norm_factor))


def distance_matrices(z) -> DistanceMatrices:
    """Both distance matrices of the rows of ``z`` in one call."""
    delta_e = pairwise_sq_dists(z)
    return DistanceMatrices(delta_e=delta_e, delta_b=elementwise_sqrt(delta_e))


def decov_rows(z, norm_factor: int | None = None) -> DecovMatrix:
    """Full pipeline: squared distances -> entrywise sqrt -> double centering.

    Row i of the result is the decentralized representation of sample i in
    R^n, the input to the prototype-based losses.

    ``norm_factor`` defaults to n (the number of rows of ``z``), the only
    divisor for which row/column sums of the output vanish.
    """
    z = _as_matrix(z)
    m = z.shape[0] if norm_factor is None else norm_factor
    return double_center(elementwise_sqrt(pairwise_sq_dists(z)), m)
