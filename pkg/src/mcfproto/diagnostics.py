"""Structural diagnostics over world- or local-frame actions.

Four families: task-wise action concentration statistics, axis-motion
compatibility angles, prototype-usage matrices, and dominant-axis
timelines. All functions are pure over immutable inputs; the model enters
only through forward passes on frozen weights.
"""

import numpy as np

from . import head as head_mod
from . import kernels, linalg

MAX_EXACT_PAIRS = 10 ** 6


# ---------------------------------------------------------------------------
# concentration
# ---------------------------------------------------------------------------

def _spectrum(actions):
    cov = linalg.covariance(actions, centered=True)
    lam = np.maximum(linalg.sym_eigen(cov).values, 0.0)
    return cov, lam


def _effective_rank(lam):
    total = lam.sum()
    if total <= 0:
        return 1.0
    p = lam / total
    p = p[p > 0]
    return float(np.exp(-(p * np.log(p)).sum()))


def _pairwise_distance(actions, seed=0):
    n = len(actions)
    n_pairs = n * (n - 1) // 2
    if n_pairs <= MAX_EXACT_PAIRS:
        return float(kernels.pairwise_mean_distance(np.ascontiguousarray(actions)))
    rng = np.random.Generator(np.random.Philox(key=[seed, n]))
    i = rng.integers(0, n, MAX_EXACT_PAIRS)
    j = rng.integers(0, n - 1, MAX_EXACT_PAIRS)
    j = np.where(j >= i, j + 1, j)  # unordered pairs, no self-pairs
    return float(np.linalg.norm(actions[i] - actions[j], axis=1).mean())


def concentration(actions_by_task, seed=0):
    """Task-wise concentration statistics over 6-dim action vectors.

    actions_by_task: {task: (N, 6) array}, N >= 2 per task. Returns per-task
    values plus mean/std across tasks for each of: covariance trace, average
    pairwise distance, top-3 explained variance, effective rank.
    """
    per_task = {}
    for task, actions in actions_by_task.items():
        actions = np.asarray(actions, dtype=float)
        if actions.shape[0] < 2:
            raise ValueError(f"task {task!r} needs at least 2 actions")
        cov, lam = _spectrum(actions)
        total = lam.sum()
        if total <= 0:
            per_task[task] = {
                "covariance_trace": 0.0,
                "avg_pairwise_distance": 0.0,
                "pca_top3_ev": 1.0,
                "effective_rank": 1.0,
            }
            continue
        per_task[task] = {
            "covariance_trace": float(np.trace(cov)),
            "avg_pairwise_distance": _pairwise_distance(actions, seed=seed),
            "pca_top3_ev": float(lam[:3].sum() / total),
            "effective_rank": _effective_rank(lam),
        }
    metrics = ["covariance_trace", "avg_pairwise_distance", "pca_top3_ev",
               "effective_rank"]
    summary = {}
    for m in metrics:
        vals = np.array([per_task[t][m] for t in per_task])
        summary[m] = {"mean": float(vals.mean()), "std": float(vals.std(ddof=0))}
    return {"per_task": per_task, "summary": summary}


# ---------------------------------------------------------------------------
# local actions
# ---------------------------------------------------------------------------

def local_actions(actions, frames):
    """Map world 6-dim action blocks into per-step frames: u = (R^T dx, R^T dr).

    actions: (T, >=6); frames: (T, 3, 3). Norm of each 3-block is preserved.
    """
    actions = np.asarray(actions, dtype=float)
    frames = np.asarray(frames, dtype=float)
    lt = np.einsum("tji,tj->ti", frames, actions[:, :3])
    lr = np.einsum("tji,tj->ti", frames, actions[:, 3:6])
    return np.concatenate([lt, lr], axis=1)


# ---------------------------------------------------------------------------
# compatibility
# ---------------------------------------------------------------------------

def min_axis_angle_deg(directions, frames):
    """Minimum unsigned angle (deg) between unit directions and frame axes."""
    dots = np.abs(np.einsum("ti,tij->tj", directions, frames))
    return np.degrees(np.arccos(np.clip(dots.max(axis=1), 0.0, 1.0)))


def compatibility(steps_by_task, min_displacement=None):
    """Angular compatibility between displacement directions and frame axes.

    steps_by_task: {task: list of (trans_actions (T, 3), frames (T, 3, 3))}.
    Steps with displacement below min_displacement (default: 10% of the
    dataset-wide median step norm) are filtered; a task with no surviving
    steps is reported as empty rather than zero.
    """
    all_norms = np.concatenate([
        np.linalg.norm(np.asarray(t), axis=1)
        for entries in steps_by_task.values() for t, _ in entries
    ])
    if min_displacement is None:
        min_displacement = 0.1 * float(np.median(all_norms))
    per_task = {}
    records = {}
    for task, entries in steps_by_task.items():
        angles = []
        recs = []
        for trans, frames in entries:
            trans = np.asarray(trans, dtype=float)
            frames = np.asarray(frames, dtype=float)
            norms = np.linalg.norm(trans, axis=1)
            keep = norms >= min_displacement
            if not np.any(keep):
                continue
            v = trans[keep] / norms[keep, None]
            fr = frames[keep]
            dots = np.abs(np.einsum("ti,tij->tj", v, fr))
            best = dots.argmax(axis=1)
            ang = np.degrees(np.arccos(np.clip(dots.max(axis=1), 0.0, 1.0)))
            angles.append(ang)
            recs.extend(
                {"direction": vi.tolist(), "best_axis": int(b), "angle_deg": float(a)}
                for vi, b, a in zip(v, best, ang)
            )
        if angles:
            angles = np.concatenate(angles)
            per_task[task] = {
                "mean_deg": float(angles.mean()),
                "std_deg": float(angles.std(ddof=0)),
                "n_steps": int(len(angles)),
            }
        else:
            per_task[task] = {"mean_deg": None, "std_deg": None, "n_steps": 0}
        records[task] = recs
    means = [v["mean_deg"] for v in per_task.values() if v["n_steps"] > 0]
    return {
        "per_task": per_task,
        "overall_mean_deg": float(np.mean(means)) if means else None,
        "min_displacement": float(min_displacement),
        "records": records,
    }


def random_min_angle_mc(n=10 ** 6, seed=0):
    """Monte-Carlo E[arccos(max_i |v_i|)] in degrees for uniform v on S^2.

    Baseline for compatibility of random frames against random directions.
    """
    rng = np.random.Generator(np.random.Philox(key=[seed, 0xBA5E]))
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return float(np.degrees(np.arccos(np.abs(v).max(axis=1))).mean())


# ---------------------------------------------------------------------------
# model-conditioned analyses
# ---------------------------------------------------------------------------

def predict_step_outputs(params, config, obs):
    """Per-step head outputs for one episode's observations.

    Runs the head on every step and keeps the first horizon slot, giving one
    frame / gating / local action per time step.
    """
    out = head_mod.head_forward(obs, params, config)
    return {
        "frames": out.frames.value[:, 0],
        "gating_trans": out.gating_trans.value[:, 0],
        "gating_rot": out.gating_rot.value[:, 0],
        "local_trans": out.local_trans.value[:, 0],
        "local_rot": out.local_rot.value[:, 0],
        "world_action": out.world_action.value[:, 0],
    }


def usage_matrix(params, config, dataset):
    """Mean gating weights per task: {kind: (tasks, K) rows on the simplex}."""
    sums_t = {t: np.zeros(config.k_trans) for t in dataset.task_names}
    sums_r = {t: np.zeros(config.k_rot) for t in dataset.task_names}
    counts = {t: 0 for t in dataset.task_names}
    for ep in dataset.episodes:
        out = predict_step_outputs(params, config, ep.obs)
        sums_t[ep.task] += out["gating_trans"].sum(axis=0)
        sums_r[ep.task] += out["gating_rot"].sum(axis=0)
        counts[ep.task] += len(ep.obs)
    rows_t = np.array([sums_t[t] / counts[t] for t in dataset.task_names])
    rows_r = np.array([sums_r[t] / counts[t] for t in dataset.task_names])
    return {"tasks": list(dataset.task_names), "trans": rows_t, "rot": rows_r}


def row_entropy(rows):
    p = np.clip(np.asarray(rows, dtype=float), 1e-12, None)
    p = p / p.sum(axis=-1, keepdims=True)
    return -(p * np.log(p)).sum(axis=-1)


def axis_timeline(local_by_episode, time_bins=10):
    """Per-time-bin distribution of the dominant local-action axis.

    local_by_episode: list of (T, 6) local actions for one task. Episodes are
    time-normalized into time_bins bins; returns (time_bins, 3) distributions
    for the translation and rotation blocks.
    """
    counts_t = np.zeros((time_bins, 3))
    counts_r = np.zeros((time_bins, 3))
    for local in local_by_episode:
        local = np.asarray(local, dtype=float)
        t_total = len(local)
        bins = np.minimum(
            (np.arange(t_total) * time_bins) // max(t_total, 1), time_bins - 1
        )
        dom_t = np.abs(local[:, :3]).argmax(axis=1)
        dom_r = np.abs(local[:, 3:6]).argmax(axis=1)
        for b, dt, dr in zip(bins, dom_t, dom_r):
            counts_t[b, dt] += 1
            counts_r[b, dr] += 1
    def norm(c):
        tot = c.sum(axis=1, keepdims=True)
        return c / np.maximum(tot, 1.0)
    return {"trans": norm(counts_t), "rot": norm(counts_r)}


def dominant_axis_phases(timeline, min_share=0.5):
    """Sequence of (axis, start_bin, end_bin) phases where one axis holds a
    majority share; consecutive equal axes are merged."""
    dom = timeline.argmax(axis=1)
    share = timeline.max(axis=1)
    phases = []
    for b, (axis, s) in enumerate(zip(dom, share)):
        if s < min_share:
            continue
        if phases and phases[-1][0] == axis and phases[-1][2] == b - 1:
            phases[-1] = (axis, phases[-1][1], b)
        else:
            phases.append((int(axis), b, b))
    return phases
