"""Mini-batch training loop: AdamW, cosine schedule with warmup,
checkpointing, and the hierarchical ablation suite.

Determinism: all per-step randomness comes from counter-based generators
keyed as (seed, step), so resuming from a checkpoint continues the exact
same batch sequence and two runs with the same seed/config produce
bitwise-identical metric logs.
"""

import csv
import logging
import os
from dataclasses import dataclass, asdict, replace

import numpy as np

from . import autodiff as ad
from . import head as head_mod

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["step", "lr", "loss_total", "loss_act", "loss_ortho",
                  "loss_smooth", "val_loss_act"]


class TrainingDiverged(RuntimeError):
    def __init__(self, step, value):
        super().__init__(f"non-finite loss at step {step}: {value}")
        self.step = step


@dataclass
class TrainConfig:
    seed: int = 0
    batch_size: int = 64
    steps: int = 20000
    warmup: int = 500
    lr: float = 1e-3
    weight_decay: float = 1e-4
    weight_decay_scale: float = 10.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    eval_interval: int = 500
    ckpt_interval: int = 0      # 0 disables periodic checkpoints
    val_fraction: float = 0.2

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup > self.steps:
            raise ValueError("warmup must not exceed total steps")


def cosine_lr(step, config):
    """Linear warmup 0 -> lr, then cosine decay to 0 at config.steps."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if config.warmup > 0 and step < config.warmup:
        return config.lr * step / config.warmup
    if config.steps == config.warmup:
        return config.lr
    progress = (step - config.warmup) / (config.steps - config.warmup)
    return float(config.lr * 0.5 * (1.0 + np.cos(np.pi * min(progress, 1.0))))


class AdamW:
    """Adam with decoupled weight decay.

    Weight decay is not applied to the prototype dictionaries: decay would
    pull them toward zero and fight the tight-frame optimum of the
    orthogonality penalty. The scale heads get their own (stronger) decay:
    a mixture of prototypes can never exceed the gain of its best component,
    so keeping the composition scales small makes the gating weights carry
    output magnitude, concentrating usage where the motion demands it.
    """

    def __init__(self, params, config):
        self.params = params
        self.cfg = config
        self.step_count = 0
        self.m = {k: np.zeros_like(p.value) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.value) for k, p in params.items()}

    def step(self, lr):
        self.step_count += 1
        c = self.cfg
        bc1 = 1.0 - c.beta1 ** self.step_count
        bc2 = 1.0 - c.beta2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = c.beta1 * self.m[k] + (1.0 - c.beta1) * g
            self.v[k] = c.beta2 * self.v[k] + (1.0 - c.beta2) * g * g
            update = (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + c.eps)
            if k.startswith("scale_"):
                decay = c.weight_decay_scale
            elif k.startswith("dict_"):
                decay = 0.0
            else:
                decay = c.weight_decay
            if decay > 0:
                update = update + decay * p.value
            p.value -= lr * update

    def state(self):
        return {
            "step_count": self.step_count,
            "m": {k: v.tolist() for k, v in self.m.items()},
            "v": {k: v.tolist() for k, v in self.v.items()},
        }

    def load_state(self, state):
        self.step_count = state["step_count"]
        self.m = {k: np.array(v, dtype=float) for k, v in state["m"].items()}
        self.v = {k: np.array(v, dtype=float) for k, v in state["v"].items()}


# ---------------------------------------------------------------------------
# chunked dataset view
# ---------------------------------------------------------------------------

def build_chunks(episodes, horizon):
    """One chunk per step: obs at t, targets t..t+H-1 (final action repeated
    past the episode end so every step is a valid chunk start)."""
    obs_list, tgt_list = [], []
    for ep in episodes:
        t_total = len(ep.actions)
        padded = np.concatenate(
            [ep.actions, np.repeat(ep.actions[-1:], horizon, axis=0)], axis=0
        )
        for t in range(t_total):
            obs_list.append(ep.obs[t])
            tgt_list.append(padded[t:t + horizon])
    return np.array(obs_list), np.array(tgt_list)


def split_dataset(dataset, val_fraction, seed):
    """Deterministic episode-level train/val split, stratified by task."""
    rng = np.random.Generator(np.random.Philox(key=[seed, 0xDA7A]))
    train_eps, val_eps = [], []
    for task in dataset.task_names:
        eps = [e for e in dataset.episodes if e.task == task]
        perm = rng.permutation(len(eps))
        n_val = max(1, int(round(val_fraction * len(eps)))) if len(eps) > 1 else 0
        for i, j in enumerate(perm):
            (val_eps if i < n_val else train_eps).append(eps[j])
    return train_eps, val_eps


def eval_loss_act(obs, targets, params, config, batch=512):
    """Mean per-step action loss over a chunk set (no regularizers)."""
    total = 0.0
    n = len(obs)
    for i in range(0, n, batch):
        out = head_mod.head_forward(obs[i:i + batch], params, config)
        node = head_mod.loss_act(
            out.world_action, targets[i:i + batch], config.layout, config.beta
        )
        total += float(node.value) / config.horizon
    return total / n


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(dataset, head_config, train_config, out_dir=None, resume=None):
    """Train the head; returns (params, metrics, best) where metrics is a
    list of row dicts (METRIC_COLUMNS) and best = (val_loss, step).

    resume: path to a checkpoint written by this function (periodic or
    final); continues bitwise-identically to an uninterrupted run.
    """
    hc, tc = head_config, train_config
    if not dataset.episodes:
        raise ValueError("dataset is empty")
    train_eps, val_eps = split_dataset(dataset, tc.val_fraction, tc.seed)
    if not train_eps:
        train_eps = list(dataset.episodes)
    tr_obs, tr_tgt = build_chunks(train_eps, hc.horizon)
    if val_eps:
        va_obs, va_tgt = build_chunks(val_eps, hc.horizon)
    else:
        va_obs, va_tgt = tr_obs, tr_tgt

    params = head_mod.init_params(hc, np.random.Generator(np.random.Philox(key=[tc.seed, 0x1417])))
    opt = AdamW(params, tc)
    start_step = 0
    best_val = np.inf
    best_step = -1
    best_snapshot = {k: p.value.copy() for k, p in params.items()}
    metrics = []

    if resume is not None:
        params, loaded_hc, extra = head_mod.load_checkpoint(resume)
        if asdict(loaded_hc) != asdict(hc):
            raise ValueError("checkpoint head config does not match")
        opt = AdamW(params, tc)
        opt.load_state(extra["optimizer"])
        start_step = extra["step"]
        best_val = extra.get("best_val", np.inf)
        best_step = extra.get("best_step", -1)
        best_snapshot = {k: p.value.copy() for k, p in params.items()}

    writer = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        mode = "a" if resume is not None else "w"
        f = open(os.path.join(out_dir, "metrics.csv"), mode)
        writer = csv.writer(f)
        if mode == "w":
            writer.writerow(METRIC_COLUMNS)

    n_chunks = len(tr_obs)
    try:
        for step in range(start_step, tc.steps):
            rng = np.random.Generator(np.random.Philox(key=[tc.seed, 1 + step]))
            idx = rng.integers(0, n_chunks, tc.batch_size)
            loss_node, parts = head_mod.loss_total(
                tr_obs[idx], tr_tgt[idx], params, hc
            )
            if not np.isfinite(loss_node.value):
                raise TrainingDiverged(step, float(loss_node.value))
            for p in params.values():
                p.zero_grad()
            ad.backward(loss_node)
            lr = cosine_lr(step, tc)
            opt.step(lr)

            row = None
            if (step + 1) % tc.eval_interval == 0 or step + 1 == tc.steps:
                val = eval_loss_act(va_obs, va_tgt, params, hc)
                if val < best_val:
                    best_val = val
                    best_step = step + 1
                    best_snapshot = {k: p.value.copy() for k, p in params.items()}
                row = [step + 1, lr, parts["loss_total"], parts["loss_act"],
                       parts["loss_ortho"], parts["loss_smooth"], val]
            elif (step + 1) % 100 == 0 or step == start_step:
                row = [step + 1, lr, parts["loss_total"], parts["loss_act"],
                       parts["loss_ortho"], parts["loss_smooth"], ""]
            if row is not None:
                metrics.append(dict(zip(METRIC_COLUMNS, row)))
                if writer is not None:
                    writer.writerow([repr(x) if isinstance(x, float) else x
                                     for x in row])
            if (out_dir is not None and tc.ckpt_interval
                    and (step + 1) % tc.ckpt_interval == 0):
                head_mod.save_checkpoint(
                    os.path.join(out_dir, f"ckpt_{step + 1}.json"), params, hc,
                    extra={"step": step + 1, "optimizer": opt.state(),
                           "best_val": best_val, "best_step": best_step},
                )
    finally:
        if writer is not None:
            f.close()

    if out_dir is not None:
        head_mod.save_checkpoint(
            os.path.join(out_dir, "ckpt_final.json"), params, hc,
            extra={"step": tc.steps, "optimizer": opt.state(),
                   "best_val": best_val, "best_step": best_step},
        )
        best_params = {k: ad.Param(v, k) for k, v in best_snapshot.items()}
        head_mod.save_checkpoint(
            os.path.join(out_dir, "ckpt_best.json"), best_params, hc,
            extra={"step": best_step, "best_val": best_val},
        )
    return params, metrics, (best_val, best_step)


# ---------------------------------------------------------------------------
# hierarchical ablation suite
# ---------------------------------------------------------------------------

ABLATION_ROWS = [
    # name, learn_frame, prototypes, ortho, smooth
    ("bc-mlp", False, False, False, False),
    ("mcf-only", True, False, False, False),
    ("world-proto", False, True, False, False),
    ("mcf-proto", True, True, False, False),
    ("mcf-proto-ortho", True, True, True, False),
    ("mcf-proto-full", True, True, True, True),
]


def ablation_config(base, name):
    """Map an ablation row name to a head-config specialization."""
    rows = {r[0]: r for r in ABLATION_ROWS}
    _, frame, protos, ortho, smooth = rows[name]
    return replace(
        base,
        learn_frame=frame,
        k_trans=base.k_trans if protos else 1,
        k_rot=base.k_rot if protos else 1,
        lambda_ortho=base.lambda_ortho if ortho else 0.0,
        lambda_smooth=base.lambda_smooth if smooth else 0.0,
    )


def ablation_suite(dataset, head_config, train_config, seeds=(0, 1, 2),
                   out_path=None):
    """Run all six ablation rows over the given seeds.

    Returns a list of row dicts with per-seed validation losses and
    mean/std; continues remaining rows if one fails.
    """
    results = []
    for name, *_ in ABLATION_ROWS:
        hc = ablation_config(head_config, name)
        vals = []
        errors = []
        for seed in seeds:
            tc = replace(train_config, seed=seed)
            try:
                _, _, (best_val, _) = train(dataset, hc, tc)
                vals.append(best_val)
            except Exception as exc:  # keep remaining rows running
                log.error("ablation row %s seed %d failed: %s", name, seed, exc)
                errors.append(str(exc))
        row = {
            "row": name,
            "seeds": list(seeds),
            "val_loss_act": vals,
            "mean": float(np.mean(vals)) if vals else None,
            "std": float(np.std(vals, ddof=0)) if vals else None,
            "errors": errors,
        }
        results.append(row)
    if out_path is not None:
        with open(out_path, "w") as f:
            w = csv.writer(f)
            w.writerow(["row", "mean_val_loss_act", "std", "n_seeds", "seeds",
                        "per_seed"])
            for r in results:
                w.writerow([
                    r["row"],
                    repr(r["mean"]) if r["mean"] is not None else "",
                    repr(r["std"]) if r["std"] is not None else "",
                    len(r["val_loss_act"]),
                    " ".join(str(s) for s in r["seeds"]),
                    " ".join(repr(v) for v in r["val_loss_act"]),
                ])
    return results
