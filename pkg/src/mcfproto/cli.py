"""Command-line entry point.

Subcommands: gen-data, train, ablate, diagnose, verify-theorem. Every
command writes its fully resolved config (JSON) next to its outputs, and
rerunning from that file reproduces numeric outputs bitwise.

Exit codes: 0 success, 1 validation failure, 2 runtime/numerical failure.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, fields

import numpy as np

from . import diagnostics, so3, synthgym, theoremlab, trainer
from .head import HeadConfig, load_checkpoint
from .trainer import TrainConfig, TrainingDiverged

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2

DEFAULT_OUT_ROOT_ENV = "MCFPROTO_OUT"


class ConfigError(ValueError):
    pass


def default_config():
    return {
        "gym": {
            "episodes_per_task": 200,
            "noise_scale": None,       # None -> 2% of max step size
            "seed": 0,
            "frame_randomize": True,
            "max_step": synthgym.DEFAULT_MAX_STEP,
        },
        "head": asdict(HeadConfig()),
        "train": asdict(TrainConfig()),
        "diagnostics": {
            "time_bins": 10,
            "min_displacement": None,  # None -> 10% of median step norm
            "random_baseline_samples": 200000,
        },
    }


def load_config(path):
    merged = default_config()
    if path is None:
        return merged
    with open(path) as f:
        user = json.load(f)
    for section, values in user.items():
        if section not in merged:
            raise ConfigError(f"unknown config section: {section!r}")
        if not isinstance(values, dict):
            raise ConfigError(f"config section {section!r} must be an object")
        for key, val in values.items():
            if key not in merged[section]:
                raise ConfigError(f"unknown config key: {section}.{key}")
            merged[section][key] = val
    return merged


def head_config_from(cfg):
    return HeadConfig(**cfg["head"])


def train_config_from(cfg):
    return TrainConfig(**cfg["train"])


def write_resolved(cfg, out_dir, name="config.resolved.json"):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, name), "w") as f:
        json.dump(cfg, f, indent=2)


def _float_repr(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = load_config(args.config)
    g = cfg["gym"]
    if args.episodes is not None:
        g["episodes_per_task"] = args.episodes
    if args.noise is not None:
        g["noise_scale"] = args.noise
    if args.seed is not None:
        g["seed"] = args.seed
    templates = synthgym.default_templates(max_step=g["max_step"])
    dataset = synthgym.generate(
        templates,
        episodes_per_task=g["episodes_per_task"],
        noise_scale=g["noise_scale"],
        seed=g["seed"],
        frame_randomize=g["frame_randomize"],
        max_step=g["max_step"],
    )
    out_dir = os.path.dirname(os.path.abspath(args.out)) or "."
    os.makedirs(out_dir, exist_ok=True)
    synthgym.save_jsonl(dataset, args.out)
    stats = synthgym.world_vs_canonical_stats(dataset)
    with open(args.out + ".stats.json", "w") as f:
        json.dump(_to_jsonable(stats), f, indent=2)
    write_resolved(cfg, out_dir, name=os.path.basename(args.out) + ".config.json")
    print(f"wrote {len(dataset.episodes)} episodes to {args.out}")
    return EXIT_OK


def cmd_train(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["train"]["seed"] = args.seed
    dataset = synthgym.load_jsonl(args.data)
    hc = head_config_from(cfg)
    tc = train_config_from(cfg)
    if dataset.obs_dim != hc.obs_dim:
        raise ConfigError(
            f"dataset obs dim {dataset.obs_dim} != head.obs_dim {hc.obs_dim}"
        )
    write_resolved(cfg, args.out)
    try:
        _, metrics, (best_val, best_step) = trainer.train(
            dataset, hc, tc, out_dir=args.out, resume=args.resume
        )
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"best val_loss_act {best_val!r} at step {best_step}")
    return EXIT_OK


def cmd_ablate(args):
    cfg = load_config(args.config)
    dataset = synthgym.load_jsonl(args.data)
    hc = head_config_from(cfg)
    tc = train_config_from(cfg)
    seeds = [int(s) for s in args.seeds.split(",")]
    write_resolved(cfg, args.out)
    out_csv = os.path.join(args.out, "ablation.csv")
    results = trainer.ablation_suite(dataset, hc, tc, seeds=seeds,
                                     out_path=out_csv)
    failed = [r["row"] for r in results if r["mean"] is None]
    for r in results:
        mean = "failed" if r["mean"] is None else f"{r['mean']:.6f}"
        print(f"{r['row']:>18s}  val_loss_act {mean}")
    if failed:
        print(f"error: rows failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_diagnose(args):
    cfg = load_config(args.config)
    dcfg = cfg["diagnostics"]
    dataset = synthgym.load_jsonl(args.data)
    params, hc, _ = load_checkpoint(args.ckpt)
    if dataset.obs_dim != hc.obs_dim:
        raise ConfigError(
            f"dataset obs dim {dataset.obs_dim} != checkpoint obs_dim {hc.obs_dim}"
        )
    os.makedirs(args.out, exist_ok=True)
    write_resolved(cfg, args.out)

    world = {}
    learned_local = {}
    compat_learned = {}
    compat_gt = {}
    compat_random = {}
    local_by_task = {}
    rng = np.random.Generator(np.random.Philox(key=[0xD1A6, 0]))
    for ep in dataset.episodes:
        out = diagnostics.predict_step_outputs(params, hc, ep.obs)
        frames = out["frames"]
        w6 = ep.actions[:, :6]
        world.setdefault(ep.task, []).append(w6)
        loc = diagnostics.local_actions(ep.actions, frames)
        learned_local.setdefault(ep.task, []).append(loc)
        local_by_task.setdefault(ep.task, []).append(loc)
        compat_learned.setdefault(ep.task, []).append((ep.actions[:, :3], frames))
        gt = np.broadcast_to(ep.q, frames.shape).copy()
        compat_gt.setdefault(ep.task, []).append((ep.actions[:, :3], gt))
        rnd = so3.random_rotation(rng, size=len(frames))
        compat_random.setdefault(ep.task, []).append((ep.actions[:, :3], rnd))

    world = {k: np.concatenate(v) for k, v in world.items()}
    learned_local = {k: np.concatenate(v) for k, v in learned_local.items()}

    conc = {
        "world": diagnostics.concentration(world),
        "learned_local": diagnostics.concentration(learned_local),
    }
    compat = {
        "learned": diagnostics.compatibility(
            compat_learned, min_displacement=dcfg["min_displacement"]),
        "ground_truth": diagnostics.compatibility(
            compat_gt, min_displacement=dcfg["min_displacement"]),
        "random": diagnostics.compatibility(
            compat_random, min_displacement=dcfg["min_displacement"]),
        "random_mc_baseline_deg": diagnostics.random_min_angle_mc(
            n=dcfg["random_baseline_samples"]),
    }
    usage = diagnostics.usage_matrix(params, hc, dataset)
    timelines = {
        task: diagnostics.axis_timeline(local_by_task[task],
                                        time_bins=dcfg["time_bins"])
        for task in dataset.task_names
    }

    _write_concentration_csv(os.path.join(args.out, "concentration.csv"), conc)
    _write_compat_csv(os.path.join(args.out, "compatibility.csv"), compat)
    _write_usage_csv(os.path.join(args.out, "usage_matrix.csv"), usage)
    _write_timeline_csv(os.path.join(args.out, "axis_timeline.csv"), timelines)
    report = {
        "schema_version": 1,
        "concentration": conc,
        "compatibility": {k: v for k, v in compat.items() if k != "records"},
        "usage_matrix": usage,
        "axis_timelines": timelines,
    }
    with open(os.path.join(args.out, "report.json"), "w") as f:
        json.dump(_to_jsonable(report), f, indent=2)
    print(f"diagnostics written to {args.out}")
    return EXIT_OK


def cmd_verify_theorem(args):
    if args.trials < 1:
        print("error: --trials must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    if not 2 <= args.dim <= 6:
        print("error: --dim must be in [2, 6]", file=sys.stderr)
        return EXIT_VALIDATION
    result = theoremlab.verify(dim=args.dim, trials=args.trials, seed=args.seed)
    for c in result["checks"]:
        print(
            f"trial {c['trial']:3d}  "
            f"mc {'pass' if c['mc_vs_closed']['pass'] else 'FAIL'}  "
            f"min {'pass' if c['minimization']['pass'] else 'FAIL'} "
            f"(angle {c['minimization']['max_angle_deg']:.4f} deg)  "
            f"majorization {'pass' if c['majorization']['pass'] else 'FAIL'}"
        )
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "theorem_report.json"), "w") as f:
            json.dump(_to_jsonable(result), f, indent=2)
    print("overall:", "pass" if result["pass"] else "FAIL")
    return EXIT_OK if result["pass"] else EXIT_RUNTIME


# ---------------------------------------------------------------------------
# report writers
# ---------------------------------------------------------------------------

def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def _write_concentration_csv(path, conc):
    metrics = ["covariance_trace", "avg_pairwise_distance", "pca_top3_ev",
               "effective_rank"]
    with open(path, "w") as f:
        w = csv.writer(f)
        w.writerow(["frame", "task"] + metrics)
        for frame_name, stats in conc.items():
            for task, vals in stats["per_task"].items():
                w.writerow([frame_name, task] + [_float_repr(vals[m]) for m in metrics])
            w.writerow([frame_name, "__mean__"]
                       + [_float_repr(stats["summary"][m]["mean"]) for m in metrics])
            w.writerow([frame_name, "__std__"]
                       + [_float_repr(stats["summary"][m]["std"]) for m in metrics])


def _write_compat_csv(path, compat):
    with open(path, "w") as f:
        w = csv.writer(f)
        w.writerow(["frames", "task", "mean_deg", "std_deg", "n_steps"])
        for name in ("learned", "ground_truth", "random"):
            for task, v in compat[name]["per_task"].items():
                w.writerow([
                    name, task,
                    "" if v["mean_deg"] is None else _float_repr(v["mean_deg"]),
                    "" if v["std_deg"] is None else _float_repr(v["std_deg"]),
                    v["n_steps"],
                ])


def _write_usage_csv(path, usage):
    with open(path, "w") as f:
        w = csv.writer(f)
        k = usage["trans"].shape[1]
        w.writerow(["dictionary", "task"] + [f"proto_{i}" for i in range(k)])
        for kind in ("trans", "rot"):
            for task, row in zip(usage["tasks"], usage[kind]):
                w.writerow([kind, task] + [_float_repr(x) for x in row])


def _write_timeline_csv(path, timelines):
    with open(path, "w") as f:
        w = csv.writer(f)
        w.writerow(["task", "block", "bin", "x", "y", "z"])
        for task, tl in timelines.items():
            for block in ("trans", "rot"):
                for b, row in enumerate(tl[block]):
                    w.writerow([task, block, b] + [_float_repr(x) for x in row])


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="mcfproto",
        description="Motion-centric prototype action head laboratory",
    )
    parser.add_argument("--print-config", action="store_true",
                        help="print the fully resolved default config and exit")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("gen-data", help="generate a synthetic dataset (JSONL)")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--episodes", type=int)
    p.add_argument("--noise", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train the action head")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--resume")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ablate", help="run the six-row ablation suite")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("diagnose", help="run diagnostics on a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("verify-theorem",
                       help="verify the eigenframe-optimality proposition")
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify_theorem)

    return parser


def resolve_out(path):
    root = os.environ.get(DEFAULT_OUT_ROOT_ENV)
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_config:
        print(json.dumps(default_config(), indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION
    if getattr(args, "out", None):
        args.out = resolve_out(args.out)
    try:
        return args.func(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (TrainingDiverged, RuntimeError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
