"""SO(3) geometry: 6D rotation decode, geodesic smoothness, axis-angle.

Rotations are plain (…, 3, 3) float arrays; validity means R^T R = I and
det R = +1 within tolerance. The 6D parameterization is two raw 3-vectors
(a1, a2) decoded by Gram-Schmidt plus cross product into columns
(b1, b2, b1 x b2).
"""

import numpy as np

from . import kernels

GS_EPS = 1e-8
ROT_TOL = 1e-9


class DegenerateParamError(ValueError):
    """Raised when a 6D parameter cannot be decoded (near-zero norm or
    near-collinear a1, a2)."""


def is_rotation(R, tol=ROT_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        return False
    err = np.linalg.norm(R.swapaxes(-1, -2) @ R - np.eye(3), axis=(-2, -1))
    det = np.linalg.det(R)
    return bool(np.all(err < tol) and np.all(np.abs(det - 1.0) < tol))


def decode_6d(p):
    """Decode 6D rotation parameters (…, 6) to rotation matrices (…, 3, 3).

    Columns are (b1, b2, b1 x b2) with b1 = a1/|a1| and b2 the normalized
    Gram-Schmidt residual of a2. Raises DegenerateParamError when either
    normalization is below GS_EPS.
    """
    p = np.asarray(p, dtype=float)
    if p.shape[-1] != 6:
        raise ValueError(f"expected trailing dimension 6, got {p.shape}")
    flat = p.reshape(-1, 6)
    if not np.all(np.isfinite(flat)):
        raise DegenerateParamError("non-finite 6D parameters")
    n1 = np.linalg.norm(flat[:, :3], axis=1)
    if np.any(n1 < GS_EPS):
        raise DegenerateParamError("first 6D column has near-zero norm")
    b1 = flat[:, :3] / n1[:, None]
    resid = flat[:, 3:] - (b1 * flat[:, 3:]).sum(axis=1, keepdims=True) * b1
    if np.any(np.linalg.norm(resid, axis=1) < GS_EPS):
        raise DegenerateParamError("6D columns are near-collinear")
    R = kernels.decode6d_batch(np.ascontiguousarray(flat))
    return R.reshape(p.shape[:-1] + (3, 3))


def encode_6d(R):
    """First two columns of R, flattened to (…, 6). Left inverse of decode_6d."""
    R = np.asarray(R, dtype=float)
    return np.concatenate([R[..., :, 0], R[..., :, 1]], axis=-1)


def geodesic_cos(r_prev, r_cur):
    """cos of the geodesic angle between two rotations, clamped to [-1, 1].

    Computed as (tr(r_cur r_prev^T) - 1) / 2; tr(A B^T) is the elementwise
    product sum, so no explicit matmul is needed.
    """
    r_prev = np.asarray(r_prev, dtype=float)
    r_cur = np.asarray(r_cur, dtype=float)
    tr = (r_cur * r_prev).sum(axis=(-2, -1))
    return np.clip((tr - 1.0) / 2.0, -1.0, 1.0)


def smoothness_loss(r_prev, r_cur):
    """1 - cos(geodesic angle); 0 for identical rotations, 2 at 180 degrees."""
    return 1.0 - geodesic_cos(r_prev, r_cur)


def rotate_vec(R, v):
    """Apply rotation(s) to vector(s): (…, 3, 3) x (…, 3) -> (…, 3)."""
    return np.einsum("...ij,...j->...i", np.asarray(R, float), np.asarray(v, float))


def axis_angle_to_rotation(w):
    """Rodrigues formula: rotation vector (…, 3) -> rotation matrix (…, 3, 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    out = np.broadcast_to(np.eye(3), w.shape[:-1] + (3, 3)).copy()
    mask = theta > 0
    if not np.any(mask):
        return out
    flat_w = w.reshape(-1, 3)
    flat_t = theta.reshape(-1)
    flat_out = out.reshape(-1, 3, 3)
    idx = np.nonzero(flat_t > 0)[0]
    axis = flat_w[idx] / flat_t[idx, None]
    K = np.zeros((len(idx), 3, 3))
    K[:, 0, 1] = -axis[:, 2]
    K[:, 0, 2] = axis[:, 1]
    K[:, 1, 0] = axis[:, 2]
    K[:, 1, 2] = -axis[:, 0]
    K[:, 2, 0] = -axis[:, 1]
    K[:, 2, 1] = axis[:, 0]
    s = np.sin(flat_t[idx])[:, None, None]
    c = (1.0 - np.cos(flat_t[idx]))[:, None, None]
    flat_out[idx] = np.eye(3) + s * K + c * (K @ K)
    return flat_out.reshape(out.shape)


def _sample_uniform_angle(rng, size):
    # inverse-CDF of the uniform-SO(3) angle density (1 - cos t)/pi on [0, pi],
    # solved by bisection; vectorized and deterministic.
    u = rng.uniform(0.0, 1.0, size=size)
    lo = np.zeros(size)
    hi = np.full(size, np.pi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        cdf = (mid - np.sin(mid)) / np.pi
        take_hi = cdf < u
        lo = np.where(take_hi, mid, lo)
        hi = np.where(take_hi, hi, mid)
    return 0.5 * (lo + hi)


def random_rotation(rng, size=None):
    """Uniform (Haar) random rotation(s) via random axis + uniform-SO(3) angle."""
    squeeze = size is None
    n = 1 if squeeze else int(np.prod(size))
    axis = rng.normal(size=(n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    angle = _sample_uniform_angle(rng, n)
    R = axis_angle_to_rotation(axis * angle[:, None])
    if squeeze:
        return R[0]
    return R.reshape(tuple(np.atleast_1d(size)) + (3, 3))
