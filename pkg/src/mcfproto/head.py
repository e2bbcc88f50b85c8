"""The motion-centric prototype action head.

Pipeline per observation: a small tanh encoder produces a latent h; from h
the head predicts, for every step of a horizon-long action chunk, a local
frame rotation (6D decode), gating distributions over translation/rotation
prototype dictionaries, latent scale vectors, and the gripper channel.
Local actions are composed as gating-weighted prototype outputs and rotated
into the world frame by the predicted frame.

Ablation rows are config specializations, not separate code paths:
``learn_frame=False`` freezes the frame to identity, ``k_trans=k_rot=1``
reduces prototype composition to a single linear map (the softmax of one
logit is identically [1]).
"""

import json
import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class ActionLayout:
    """Index sets of the action vector; disjoint and covering by invariant."""

    i_trans: tuple = (0, 1, 2)
    i_rot: tuple = (3, 4, 5)
    i_grip: tuple = (6,)
    dim: int = 7

    def __post_init__(self):
        all_idx = sorted(self.i_trans + self.i_rot + self.i_grip)
        if all_idx != list(range(self.dim)):
            raise ValueError("layout index sets must be disjoint and cover 0..dim-1")
        if len(self.i_trans) != 3 or len(self.i_rot) != 3:
            raise ValueError("translation and rotation blocks must be 3-dimensional")


@dataclass
class HeadConfig:
    obs_dim: int = 15
    hidden: int = 64
    d: int = 3
    k_trans: int = 16
    k_rot: int = 16
    horizon: int = 7
    lambda_ortho: float = 1e-3
    lambda_smooth: float = 1e-2
    beta: float = 1.0
    learn_frame: bool = True

    def __post_init__(self):
        for name in ("obs_dim", "hidden", "d", "k_trans", "k_rot", "horizon"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def layout(self):
        return ActionLayout()


@dataclass
class HeadOutput:
    """Forward-pass bundle; fields are tape nodes (use .value for arrays)."""

    latent: ad.Node
    frames: ad.Node          # (B, H, 3, 3)
    gating_trans: ad.Node    # (B, H, K_t)
    gating_rot: ad.Node      # (B, H, K_r)
    scales_trans: ad.Node    # (B, H, d)
    scales_rot: ad.Node      # (B, H, d)
    local_trans: ad.Node     # (B, H, 3)
    local_rot: ad.Node       # (B, H, 3)
    world_action: ad.Node    # (B, H, dim)


def _parseval_rows(rng, rows, dim):
    """Random rows whitened so their frame operator is the identity.

    Returns a (rows, dim) matrix V with V.T @ V = I_dim; needs rows >= dim.
    """
    v = rng.normal(size=(rows, dim))
    w, u = np.linalg.eigh(v.T @ v)
    return v @ (u / np.sqrt(w)) @ u.T


def _init_dictionary(rng, k, d, roll_atoms=False):
    """Prototype stack (k, 3, d) sitting at the orthogonality-penalty floor.

    The flattened prototypes form a Parseval frame of R^{3d} (or orthonormal
    rows when k < 3d), so the tight-frame penalty starts at its minimum and
    anchors the dictionary there instead of fighting the action loss.

    For the rotation dictionary (roll_atoms) the first d prototypes are pure
    first-axis atoms e_1 z_j^T: they are the only prototypes whose output
    spans the first local axis, so motions that roll about that axis can only
    be composed through them. The remaining prototypes form a Parseval frame
    of the complementary (second/third axis) output subspace.
    """
    flat_dim = 3 * d
    if roll_atoms and k >= flat_dim and d >= 1:
        atoms = np.zeros((d, flat_dim))
        atoms[np.arange(d), np.arange(d)] = 1.0
        rest = np.zeros((k - d, flat_dim))
        rest[:, d:] = _parseval_rows(rng, k - d, flat_dim - d)
        flat = np.concatenate([atoms, rest])
    elif k >= flat_dim:
        flat = _parseval_rows(rng, k, flat_dim)
    else:
        q, _ = np.linalg.qr(rng.normal(size=(flat_dim, k)))
        flat = q.T
    return np.ascontiguousarray(flat.reshape(k, 3, d))


def init_params(config, rng):
    """Initialize all trainable tensors.

    The frame head's final layer starts near (e1, e2) so the initial frames
    are approximately identity, keeping the Gram-Schmidt decode far from
    degeneracy. Every architecture variant draws the same tensors in the
    same order, so seed-matched ablation rows share initialization wherever
    shapes coincide. Prototype dictionaries start at the tight-frame floor
    of the orthogonality penalty (see _init_dictionary).
    """
    c = config
    n_grip = c.layout.dim - 6

    def dense(name, out_dim, in_dim, std=None):
        std = 1.0 / np.sqrt(in_dim) if std is None else std
        return ad.Param(rng.normal(0.0, std, (out_dim, in_dim)), name)

    params = {
        "enc.w1": dense("enc.w1", c.hidden, c.obs_dim),
        "enc.b1": ad.Param(np.zeros(c.hidden), "enc.b1"),
        "enc.w2": dense("enc.w2", c.hidden, c.hidden),
        "enc.b2": ad.Param(np.zeros(c.hidden), "enc.b2"),
        "frame.w1": dense("frame.w1", c.hidden, c.hidden),
        "frame.b1": ad.Param(np.zeros(c.hidden), "frame.b1"),
        "frame.w2": dense("frame.w2", c.horizon * 6, c.hidden, std=1e-3),
        "frame.b2": ad.Param(
            np.tile([1.0, 0.0, 0.0, 0.0, 1.0, 0.0], c.horizon), "frame.b2"
        ),
        "gate_t.w": dense("gate_t.w", c.horizon * c.k_trans, c.hidden),
        "gate_t.b": ad.Param(np.zeros(c.horizon * c.k_trans), "gate_t.b"),
        "gate_r.w": dense("gate_r.w", c.horizon * c.k_rot, c.hidden),
        "gate_r.b": ad.Param(np.zeros(c.horizon * c.k_rot), "gate_r.b"),
        "scale_t.w": dense("scale_t.w", c.horizon * c.d, c.hidden),
        "scale_t.b": ad.Param(np.zeros(c.horizon * c.d), "scale_t.b"),
        "scale_r.w": dense("scale_r.w", c.horizon * c.d, c.hidden),
        "scale_r.b": ad.Param(np.zeros(c.horizon * c.d), "scale_r.b"),
        "rest.w": dense("rest.w", c.horizon * n_grip, c.hidden),
        "rest.b": ad.Param(np.zeros(c.horizon * n_grip), "rest.b"),
        "dict_trans": ad.Param(
            _init_dictionary(rng, c.k_trans, c.d), "dict_trans"
        ),
        "dict_rot": ad.Param(
            _init_dictionary(rng, c.k_rot, c.d, roll_atoms=True), "dict_rot"
        ),
    }
    return params


def encode(obs, params):
    """Two-layer tanh encoder: observation features -> latent h."""
    obs = obs if isinstance(obs, ad.Node) else ad.constant(obs)
    h1 = ad.tanh(ad.linear(obs, params["enc.w1"], params["enc.b1"]))
    return ad.tanh(ad.linear(h1, params["enc.w2"], params["enc.b2"]))


def predict_frame(h, params, config):
    """Frame head: latent -> per-step rotations (B, H, 3, 3)."""
    batch = h.shape[0]
    fh = ad.tanh(ad.linear(h, params["frame.w1"], params["frame.b1"]))
    p6 = ad.linear(fh, params["frame.w2"], params["frame.b2"])
    p6 = ad.reshape(p6, (batch, config.horizon, 6))
    flat = p6.value.reshape(-1, 6)
    n1 = np.linalg.norm(flat[:, :3], axis=1)
    b1 = flat[:, :3] / np.maximum(n1, 1e-300)[:, None]
    resid = flat[:, 3:] - (b1 * flat[:, 3:]).sum(axis=1, keepdims=True) * b1
    if np.any(n1 < 1e-8) or np.any(np.linalg.norm(resid, axis=1) < 1e-8):
        from .so3 import DegenerateParamError

        raise DegenerateParamError("frame head produced degenerate 6D parameters")
    return ad.gram_schmidt_6d(p6)


def _head_branch(h, params, config, prefix, k, dict_name):
    batch = h.shape[0]
    logits = ad.linear(h, params[f"gate_{prefix}.w"], params[f"gate_{prefix}.b"])
    pi = ad.softmax(ad.reshape(logits, (batch, config.horizon, k)))
    z = ad.linear(h, params[f"scale_{prefix}.w"], params[f"scale_{prefix}.b"])
    z = ad.reshape(z, (batch, config.horizon, config.d))
    local = ad.compose_protos(pi, params[dict_name], z)
    return pi, z, local


def compose_local(h, params, config, kind):
    """Gating-weighted prototype composition for one dictionary.

    kind is "trans" or "rot"; returns (local (B,H,3), pi, z) nodes.
    """
    prefix = "t" if kind == "trans" else "r"
    k = config.k_trans if kind == "trans" else config.k_rot
    pi, z, local = _head_branch(h, params, config, prefix, k, f"dict_{kind}")
    return local, pi, z


def head_forward(obs, params, config):
    """Full forward pass; obs is (B, obs_dim)."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    batch = obs.shape[0]
    h = encode(obs, params)
    if config.learn_frame:
        frames = predict_frame(h, params, config)
    else:
        frames = ad.constant(
            np.broadcast_to(np.eye(3), (batch, config.horizon, 3, 3)).copy()
        )
    local_t, pi_t, z_t = compose_local(h, params, config, "trans")
    local_r, pi_r, z_r = compose_local(h, params, config, "rot")
    world_t = ad.apply_frame(frames, local_t)
    world_r = ad.apply_frame(frames, local_r)
    n_grip = config.layout.dim - 6
    rest = ad.linear(h, params["rest.w"], params["rest.b"])
    rest = ad.reshape(rest, (batch, config.horizon, n_grip))
    layout = config.layout
    dim = layout.dim
    world = ad.add(
        ad.add(
            ad.scatter_last(world_t, layout.i_trans, dim),
            ad.scatter_last(world_r, layout.i_rot, dim),
        ),
        ad.scatter_last(rest, layout.i_grip, dim),
    )
    return HeadOutput(
        latent=h,
        frames=frames,
        gating_trans=pi_t,
        gating_rot=pi_r,
        scales_trans=z_t,
        scales_rot=z_r,
        local_trans=local_t,
        local_rot=local_r,
        world_action=world,
    )


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_act(pred, target, layout, beta):
    """Summed action loss: L1 on trans and grip blocks, Smooth-L1 on rot."""
    target = np.asarray(target, dtype=float)
    lt = ad.l1_loss(ad.take_last(pred, layout.i_trans), target[..., layout.i_trans])
    lg = ad.l1_loss(ad.take_last(pred, layout.i_grip), target[..., layout.i_grip])
    lr = ad.smooth_l1_loss(
        ad.take_last(pred, layout.i_rot), target[..., layout.i_rot], beta
    )
    return ad.add(ad.add(lt, lg), lr)


def loss_ortho(dict_trans, dict_rot):
    """Gram-matrix orthogonality penalty on both dictionaries.

    Each 3xd prototype is flattened (row-major) to a length-3d vector; the
    flattened prototypes form the columns of a (3d x K) matrix B and the
    penalty is ||B^T B - I_K||_F^2, summed over the two dictionaries.
    """
    total = None
    for dic in (dict_trans, dict_rot):
        k = dic.shape[0]
        flat = ad.reshape(dic, (k, dic.shape[1] * dic.shape[2]))
        gram = ad.matmul(flat, ad.transpose(flat))
        err = ad.sub(gram, np.eye(k))
        term = ad.arr_sum(ad.mul(err, err))
        total = term if total is None else ad.add(total, term)
    return total


def loss_smooth_chunk(frames):
    """Mean geodesic smoothness over consecutive frame pairs within chunks.

    frames: (B, H, 3, 3) node; returns a scalar node (0 if H == 1).
    """
    horizon = frames.shape[1]
    if horizon < 2:
        log.warning("no consecutive frame pairs in chunk; smoothness term is 0")
        return ad.constant(0.0)
    prev = ad.slice_axis(frames, 1, 0, horizon - 1)
    cur = ad.slice_axis(frames, 1, 1, horizon)
    tr = ad.sum_last2(ad.mul(prev, cur))
    cos = ad.clamp(ad.affine(tr, 0.5, -0.5), -1.0, 1.0)
    return ad.arr_mean(ad.affine(cos, -1.0, 1.0))


def loss_total(obs, targets, params, config):
    """Total objective on a batch of chunks.

    obs: (B, obs_dim); targets: (B, H, dim). Returns (loss_node, parts)
    where parts holds the float values of the individual terms.
    """
    out = head_forward(obs, params, config)
    n_steps = out.world_action.value.shape[0] * out.world_action.value.shape[1]
    act = ad.affine(
        loss_act(out.world_action, targets, config.layout, config.beta),
        1.0 / n_steps,
    )
    ortho = loss_ortho(params["dict_trans"], params["dict_rot"])
    smooth = loss_smooth_chunk(out.frames)
    total = ad.add(
        act,
        ad.add(
            ad.affine(ortho, config.lambda_ortho),
            ad.affine(smooth, config.lambda_smooth),
        ),
    )
    parts = {
        "loss_act": float(act.value),
        "loss_ortho": float(ortho.value),
        "loss_smooth": float(smooth.value),
        "loss_total": float(total.value),
    }
    return total, parts


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, params, config, extra=None):
    """JSON checkpoint; float repr round-trips exactly, so save -> load ->
    forward is bitwise identical."""
    doc = {
        "schema_version": CHECKPOINT_SCHEMA,
        "config": asdict(config),
        "params": {k: p.value.tolist() for k, p in params.items()},
    }
    if extra:
        doc["extra"] = extra
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("schema_version") != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema: {doc.get('schema_version')}")
    config = HeadConfig(**doc["config"])
    params = {k: ad.Param(np.array(v, dtype=float), k) for k, v in doc["params"].items()}
    return params, config, doc.get("extra")
