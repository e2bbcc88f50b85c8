"""Numerical verification that the expected-L1 concentration objective over
rotations is minimized by the eigenframe of the sample covariance.

Three independent routes are checked against each other:
  * the closed form  J(R) = c * sum_i sqrt((R^T Sigma R)_ii),
  * a Monte-Carlo estimate of E ||R^T a||_1 under an elliptical sampler,
  * multi-restart gradient minimization over SO(d), whose optimum must land
    on the eigenframe (modulo signed permutation) with value c * sum sqrt(lambda_i),
together with the Schur-Horn majorization and Karamata inequality the
minimality argument rests on.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import linalg, so3

GAUSSIAN_C = np.sqrt(2.0 / np.pi)  # E|z_1| for a standard normal


def sigma_sqrt(sigma):
    eig = linalg.sym_eigen(sigma)
    if np.any(eig.values < -1e-12 * max(abs(eig.values[0]), 1.0)):
        raise ValueError("sigma must be positive semidefinite")
    root = np.sqrt(np.maximum(eig.values, 0.0))
    return eig.vectors @ np.diag(root) @ eig.vectors.T


@dataclass
class EllipticalSampler:
    """Draws a = Sigma^{1/2} z with z spherically symmetric, identity
    covariance. base: "gaussian" (c = sqrt(2/pi)) or "sphere" (uniform on
    the radius-sqrt(d) sphere)."""

    sigma: np.ndarray
    base: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=float)
        self.dim = self.sigma.shape[0]
        self.root = sigma_sqrt(self.sigma)
        if self.base not in ("gaussian", "sphere"):
            raise ValueError(f"unknown base distribution: {self.base}")

    def sample(self, n, stream=0):
        rng = np.random.Generator(np.random.Philox(key=[self.seed, stream]))
        z = rng.normal(size=(n, self.dim))
        if self.base == "sphere":
            z = z / np.linalg.norm(z, axis=1, keepdims=True) * np.sqrt(self.dim)
        return z @ self.root.T

    @property
    def c(self):
        if self.base == "gaussian":
            return GAUSSIAN_C
        # E|z_1| for z uniform on the radius-sqrt(d) sphere: sqrt(d) * E|u_1|
        # with u uniform on S^{d-1}; computed by quadrature-free closed form
        # E|u_1| = Gamma(d/2) / (sqrt(pi) * Gamma((d+1)/2)).
        from math import gamma, pi, sqrt

        d = self.dim
        return sqrt(d) * gamma(d / 2.0) / (sqrt(pi) * gamma((d + 1) / 2.0))


def _check_orthogonal(R, tol=1e-9):
    R = np.asarray(R, dtype=float)
    if np.linalg.norm(R.T @ R - np.eye(R.shape[0])) > tol:
        raise ValueError("R is not orthogonal within tolerance")
    return R


def j_closed_form(R, sigma, c=GAUSSIAN_C):
    """c * sum_i sqrt((R^T Sigma R)_ii)."""
    R = _check_orthogonal(R)
    diag = np.diagonal(R.T @ np.asarray(sigma, float) @ R)
    if np.any(diag < -1e-12):
        raise ValueError("R^T Sigma R has a negative diagonal entry")
    return float(c * np.sqrt(np.maximum(diag, 0.0)).sum())


def j_monte_carlo(R, sampler, n, stream=0):
    """Sample mean of ||R^T a||_1 with its standard error."""
    if n < 1000:
        raise ValueError("need at least 1000 samples")
    R = _check_orthogonal(R)
    a = sampler.sample(n, stream=stream)
    per_sample = np.abs(a @ R).sum(axis=1)
    return float(per_sample.mean()), float(per_sample.std(ddof=1) / np.sqrt(n))


def analytic_minimum(sigma, c=GAUSSIAN_C):
    lam = np.maximum(linalg.sym_eigen(sigma).values, 0.0)
    return float(c * np.sqrt(lam).sum())


# ---------------------------------------------------------------------------
# minimization over SO(d)
# ---------------------------------------------------------------------------

def _j_node_3d(p6, sigma_const, c):
    R = ad.gram_schmidt_6d(p6)
    M = ad.matmul(ad.matmul(ad.transpose(R), sigma_const), R)
    return ad.affine(ad.arr_sum(ad.sqrt(ad.diagonal(M))), c)


def _minimize_3d(sigma, c, rng, iters=400, lr=0.05):
    init = so3.encode_6d(so3.random_rotation(rng)) + rng.normal(0, 1e-3, 6)
    p = ad.Param(init, "p6")
    sigma_const = ad.constant(sigma)
    m = np.zeros(6)
    v = np.zeros(6)
    for t in range(1, iters + 1):
        node = _j_node_3d(p, sigma_const, c)
        p.zero_grad()
        ad.backward(node)
        g = p.grad
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        step_lr = lr * 0.5 * (1.0 + np.cos(np.pi * (t - 1) / iters))
        p.value -= step_lr * (m / (1 - 0.9 ** t)) / (
            np.sqrt(v / (1 - 0.999 ** t)) + 1e-12
        )
    R = so3.decode_6d(p.value)
    return R, j_closed_form(R, sigma, c)


def _cayley(theta, dim):
    A = np.zeros((dim, dim))
    k = 0
    for i in range(dim):
        for j in range(i + 1, dim):
            A[i, j] = theta[k]
            A[j, i] = -theta[k]
            k += 1
    eye = np.eye(dim)
    return np.linalg.solve(eye - A, eye + A)


def _minimize_general(sigma, c, rng, dim, iters=400, lr=0.05, fd_step=1e-6):
    n_par = dim * (dim - 1) // 2
    theta = rng.normal(0.0, 0.5, n_par)
    m = np.zeros(n_par)
    v = np.zeros(n_par)

    def obj(th):
        return j_closed_form(_cayley(th, dim), sigma, c)

    for t in range(1, iters + 1):
        g = np.empty(n_par)
        for k in range(n_par):
            up = theta.copy()
            dn = theta.copy()
            up[k] += fd_step
            dn[k] -= fd_step
            g[k] = (obj(up) - obj(dn)) / (2 * fd_step)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        step_lr = lr * 0.5 * (1.0 + np.cos(np.pi * (t - 1) / iters))
        theta -= step_lr * (m / (1 - 0.9 ** t)) / (
            np.sqrt(v / (1 - 0.999 ** t)) + 1e-12
        )
    R = _cayley(theta, dim)
    return R, obj(theta)


def alignment_report(R, sigma, degenerate_gap=1e-6):
    """Per-column minimum unsigned angle (deg) between R's columns and the
    nearest eigenvector of sigma; degenerate eigenspaces are compared by
    principal angles between subspaces."""
    eig = linalg.sym_eigen(sigma)
    lam, V = eig.values, eig.vectors
    dim = len(lam)
    groups = []
    start = 0
    for i in range(1, dim + 1):
        if i == dim or lam[start] - lam[i] > degenerate_gap * max(abs(lam[0]), 1.0):
            groups.append(list(range(start, i)))
            start = i
    angles = np.full(dim, np.nan)
    used = set()
    for g in groups:
        sub_v = V[:, g]
        # columns of R best matching this eigenspace
        scores = np.linalg.norm(sub_v.T @ R, axis=0)
        cols = [c for c in np.argsort(-scores) if c not in used][: len(g)]
        used.update(cols)
        sv = np.linalg.svd(sub_v.T @ R[:, cols], compute_uv=False)
        principal = np.degrees(np.arccos(np.clip(sv, 0.0, 1.0)))
        for c, a in zip(cols, principal):
            angles[c] = a
    return {"angles_deg": angles, "max_angle_deg": float(np.nanmax(angles))}


def minimize_over_so(sigma, c=GAUSSIAN_C, restarts=32, seed=0, iters=400):
    """Multi-restart gradient minimization of the closed form over SO(d).

    Returns dict with R_star, j_star, the analytic optimum, and the
    axis-alignment report against sigma's eigenvectors.
    """
    sigma = np.asarray(sigma, dtype=float)
    dim = sigma.shape[0]
    if dim < 2 or dim > 6:
        raise ValueError("dimension must be in [2, 6]")
    best = None
    for r in range(restarts):
        rng = np.random.Generator(np.random.Philox(key=[seed, r]))
        if dim == 3:
            R, val = _minimize_3d(sigma, c, rng, iters=iters)
        else:
            R, val = _minimize_general(sigma, c, rng, dim, iters=iters)
        if best is None or val < best[1]:
            best = (R, val)
    R_star, j_star = best
    target = analytic_minimum(sigma, c)
    report = alignment_report(R_star, sigma)
    converged = j_star <= target * (1.0 + 1e-6) + 1e-9
    return {
        "R_star": R_star,
        "j_star": j_star,
        "j_analytic": target,
        "alignment": report,
        "converged": bool(converged),
        "restarts": restarts,
        "seed": seed,
    }


def majorization_check(sigma, R, tol=1e-10):
    """Schur-Horn partial sums and the Karamata sqrt-sum direction."""
    sigma = np.asarray(sigma, dtype=float)
    R = _check_orthogonal(R)
    diag = np.sort(np.diagonal(R.T @ sigma @ R))[::-1]
    lam = linalg.sym_eigen(sigma).values
    scale = max(abs(lam[0]), 1.0)
    partial_margins = np.cumsum(lam) - np.cumsum(diag)
    trace_gap = abs(partial_margins[-1])
    sqrt_margin = np.sqrt(np.maximum(diag, 0.0)).sum() - np.sqrt(
        np.maximum(lam, 0.0)
    ).sum()
    ok = bool(
        np.all(partial_margins >= -tol * scale)
        and trace_gap <= tol * scale
        and sqrt_margin >= -tol * max(np.sqrt(scale), 1.0)
    )
    return {
        "pass": ok,
        "partial_sum_margins": partial_margins,
        "trace_gap": float(trace_gap),
        "sqrt_sum_margin": float(sqrt_margin),
    }


def random_spd(rng, dim, eigengap_ratio=1.05, lam_range=(0.2, 9.0)):
    """Random SPD matrix whose sorted eigenvalues keep a minimum ratio gap."""
    while True:
        lam = np.sort(rng.uniform(*lam_range, dim))[::-1]
        if np.all(lam[:-1] / lam[1:] > eigengap_ratio):
            break
    Q = so3.random_rotation(rng) if dim == 3 else _random_orthogonal(rng, dim)
    return Q @ np.diag(lam) @ Q.T


def _random_orthogonal(rng, dim):
    M = rng.normal(size=(dim, dim))
    Q, Rm = np.linalg.qr(M)
    Q = Q * np.sign(np.diagonal(Rm))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def verify(dim=3, trials=20, seed=0, mc_samples=10 ** 5, restarts=8):
    """Full verification sweep; returns per-check results and overall pass."""
    rng = np.random.Generator(np.random.Philox(key=[seed, 0xABCD]))
    checks = []
    for trial in range(trials):
        sigma = random_spd(rng, dim)
        sampler = EllipticalSampler(sigma, seed=seed * 1000 + trial)
        R = _random_orthogonal(rng, dim)
        if np.linalg.det(R) < 0:
            R[:, [0, 1]] = R[:, [1, 0]]
        mc, se = j_monte_carlo(R, sampler, mc_samples)
        closed = j_closed_form(R, sigma)
        mc_ok = abs(mc - closed) <= 3.0 * se
        opt = minimize_over_so(sigma, restarts=restarts, seed=seed * 77 + trial)
        opt_ok = (
            abs(opt["j_star"] - opt["j_analytic"]) <= 1e-6 * max(opt["j_analytic"], 1.0)
            and opt["alignment"]["max_angle_deg"] <= 0.5
        )
        maj = majorization_check(sigma, R)
        checks.append({
            "trial": trial,
            "mc_vs_closed": {"mc": mc, "stderr": se, "closed": closed, "pass": bool(mc_ok)},
            "minimization": {
                "j_star": opt["j_star"],
                "j_analytic": opt["j_analytic"],
                "max_angle_deg": opt["alignment"]["max_angle_deg"],
                "pass": bool(opt_ok),
            },
            "majorization": {"pass": maj["pass"]},
            "pass": bool(mc_ok and opt_ok and maj["pass"]),
        })
    overall = all(c["pass"] for c in checks)
    return {"dim": dim, "trials": trials, "seed": seed, "checks": checks,
            "pass": overall}
