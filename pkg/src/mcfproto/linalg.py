"""Small dense linear algebra: symmetric eigensolver, covariance, norms.

All matrices here are tiny (dimension <= 16), so the eigensolver uses
cyclic Jacobi sweeps, which are simple and robust at this scale.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels

MAX_DIM = 16
_JACOBI_TOL = 1e-12
_MAX_SWEEPS = 100


class LinalgError(ValueError):
    pass


@dataclass(frozen=True)
class SymmetricEigen:
    """Eigendecomposition of a symmetric matrix.

    values are sorted descending; vectors[:, i] is the orthonormal
    eigenvector paired with values[i].
    """

    values: np.ndarray
    vectors: np.ndarray

    def reconstruct(self):
        return self.vectors @ np.diag(self.values) @ self.vectors.T


def check_finite(a, name="array"):
    a = np.asarray(a, dtype=float)
    if not np.all(np.isfinite(a)):
        raise LinalgError(f"{name} contains non-finite entries")
    return a


def sym_eigen(A):
    """Eigendecomposition of a symmetric matrix via cyclic Jacobi sweeps.

    Raises LinalgError for non-symmetric, non-finite, or oversized input.
    Eigenvector signs are fixed so the largest-magnitude component of each
    vector is nonnegative.
    """
    A = check_finite(A, "matrix")
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise LinalgError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > MAX_DIM:
        raise LinalgError(f"dimension {n} exceeds supported maximum {MAX_DIM}")
    scale = np.abs(A).max()
    if scale > 0 and np.abs(A - A.T).max() > 1e-12 * max(scale, 1.0):
        raise LinalgError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    w, V = kernels.jacobi_eigh(A, _JACOBI_TOL, _MAX_SWEEPS)
    order = np.argsort(w)[::-1]
    w = w[order]
    V = V[:, order]
    # deterministic sign convention
    for i in range(n):
        j = np.argmax(np.abs(V[:, i]))
        if V[j, i] < 0:
            V[:, i] = -V[:, i]
    return SymmetricEigen(values=w, vectors=V)


def covariance(samples, centered=True):
    """Unbiased (N-1 denominator) sample covariance matrix.

    samples: (N, dim) array or sequence of equal-length vectors.
    centered=True subtracts the sample mean first.
    """
    X = check_finite(np.asarray(samples, dtype=float), "samples")
    if X.ndim != 2:
        raise LinalgError(f"expected a 2-d sample array, got shape {X.shape}")
    n = X.shape[0]
    if n < 2:
        raise LinalgError("covariance needs at least 2 samples")
    if centered:
        X = X - X.mean(axis=0)
    return (X.T @ X) / (n - 1)


def frobenius_sq(A):
    """Sum of squared entries."""
    A = check_finite(A, "matrix")
    return float((A * A).sum())
