"""The numba and numpy kernel variants must agree exactly (same formulas)."""

import numpy as np

from mcfproto import kernels


def test_jacobi_variants_agree():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(8, 8))
    A = 0.5 * (A + A.T)
    w1, v1 = kernels.jacobi_eigh_numba(A, 1e-12, 100)
    w2, v2 = kernels.jacobi_eigh_numpy(A, 1e-12, 100)
    assert np.array_equal(w1, w2)
    assert np.array_equal(v1, v2)


def test_decode6d_variants_agree():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(200, 6))
    r1 = kernels.decode6d_batch_numba(p)
    r2 = kernels.decode6d_batch_numpy(p)
    assert np.abs(r1 - r2).max() < 1e-15


def test_pairwise_variants_agree():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(100, 6))
    d1 = kernels.pairwise_mean_distance_numba(X)
    d2 = kernels.pairwise_mean_distance_numpy(X)
    assert abs(d1 - d2) < 1e-12


def test_mc_l1_variants_agree():
    rng = np.random.default_rng(3)
    A = rng.normal(size=(1000, 3))
    R = np.linalg.qr(rng.normal(size=(3, 3)))[0]
    v1 = kernels.mc_l1_objective_numba(R, A)
    v2 = kernels.mc_l1_objective_numpy(R, A)
    assert abs(v1 - v2) < 1e-12
