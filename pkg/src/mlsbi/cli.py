"""Command-line entry points: simulate, train, evaluate, run, plan, validate.

Experiment configs are JSON files validated against the published schema in
:mod:`mlsbi.experiments`; command-line flags override config fields.  The
``plan`` verb exposes the sample-allocation planners directly.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .allocation import CostModel, plan_pilot, plan_theorem_allocation
from .datasets import save_dataset
from .experiments import EXPERIMENTS, ExperimentConfig, _build_estimator, _eval_pack, _evaluate, _training_batches, run, validate
from .mdn import load_estimator, save_estimator
from .mlmc import Task
from .rng import SeedKey
from .training import TrainConfig, train

__all__ = ["main"]


def _load_config(args) -> ExperimentConfig:
    with open(args.config) as fh:
        data = json.load(fh)
    for name in ("seed", "epochs", "method", "output_dir", "replicates"):
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if getattr(args, "full", False):
        data["full_scale"] = True
    return ExperimentConfig.from_dict(data)


def _setup(config: ExperimentConfig):
    resolved = config.resolved()
    preset = EXPERIMENTS[resolved["experiment"]]
    sim = preset["simulator"](config)
    task = preset["task"]
    return resolved, sim, task


def _cmd_validate(args) -> int:
    with open(args.config) as fh:
        data = json.load(fh)
    diagnostics = validate(data)
    for diag in diagnostics:
        print(diag)
    if not diagnostics:
        print("config valid")
    return 1 if diagnostics else 0


def _cmd_simulate(args) -> int:
    config = _load_config(args)
    resolved, sim, task = _setup(config)
    key = SeedKey(resolved["seed"]).child(0).child(0)
    batches = _training_batches(sim, resolved, key)
    out = Path(resolved["output_dir"]) / "data" / "rep000"
    path = save_dataset(out, batches, sim, key, resolved["m"], summary_scheme=task.summary_scheme if task.kind == "npe" else None)
    print(f"wrote {path} ({sum(b.n for b in batches)} samples)")
    return 0


def _cmd_train(args) -> int:
    config = _load_config(args)
    resolved, sim, task = _setup(config)
    exp_key = SeedKey(resolved["seed"])
    batches = _training_batches(sim, resolved, exp_key.child(0).child(0))
    mdn = _build_estimator(sim, task, resolved, batches)
    train_config = TrainConfig(
        epochs=resolved["epochs"],
        seed=exp_key.child(1).child(0),
        adjust_gradients=resolved["adjust_gradients"],
        weight_decay=resolved["weight_decay"],
        learning_rate=resolved["learning_rate"],
    )
    phi, log = train(mdn, task, batches, train_config)
    out_dir = Path(resolved["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    ckpt = out_dir / "checkpoints" / "rep000.mlsbi"
    ckpt.parent.mkdir(exist_ok=True)
    save_estimator(ckpt, mdn, phi)
    with open(out_dir / "training_log.jsonl", "w") as fh:
        for record in log:
            fh.write(json.dumps({"replicate": 0, **record}) + "\n")
    print(f"trained {resolved['epochs']} epochs, final loss {log[-1]['total']:.6f}, checkpoint {ckpt}")
    return 0


def _cmd_evaluate(args) -> int:
    config = _load_config(args)
    resolved, sim, task = _setup(config)
    mdn, phi = load_estimator(args.checkpoint)
    exp_key = SeedKey(resolved["seed"])
    pack = _eval_pack(sim, task, resolved, exp_key.child(2))
    evaluation = _evaluate(sim, task, mdn, phi, pack, resolved, exp_key.child(2))
    out_dir = Path(resolved["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [{"method": resolved["method"], "replicate": 0, **row} for row in evaluation["rows"]]
    import csv

    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "replicate", "index", "value"])
        for row in rows:
            writer.writerow([row["method"], row["metric"], row["replicate"], row["index"], repr(row["value"])])
    medians = {}
    for row in rows:
        medians.setdefault(row["metric"], []).append(row["value"])
    for metric, values in sorted(medians.items()):
        finite = [v for v in values if np.isfinite(v)]
        print(f"{metric}: median {np.median(finite):.6g} over {len(values)} entries")
    return 0


def _cmd_run(args) -> int:
    config = _load_config(args)
    bundle = run(config)
    print(json.dumps(bundle.get("summary", bundle.get("sweep")), indent=2))
    print(f"results written to {config.resolved()['output_dir']}")
    return 0


def _parse_floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _cmd_plan(args) -> int:
    costs = CostModel(tuple(_parse_floats(args.costs)))
    if (args.norms is None) == (args.variances is None):
        print("plan: provide exactly one of --norms or --variances", file=sys.stderr)
        return 1
    if args.norms is not None:
        plan = plan_theorem_allocation(costs, _parse_floats(args.norms), args.budget, cost_kernel=args.kernel)
    else:
        plan = plan_pilot(costs, _parse_floats(args.variances), args.budget)
    payload = plan.to_dict()
    print(json.dumps(payload, indent=2))
    if args.output:
        with open(args.output, "w") as fh:
            json.dump(payload, fh, indent=2)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mlsbi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config_args(p, checkpoint=False):
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--epochs", type=int, help="override the epoch count")
        p.add_argument("--method", choices=("mc_low", "mc_mid", "mc_high", "mlmc"), help="override the method")
        p.add_argument("--output-dir", dest="output_dir", help="override the output directory")
        p.add_argument("--replicates", type=int, help="override the replicate count")
        p.add_argument("--full", action="store_true", help="full-scale preset (paper epochs and learning rate)")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="estimator checkpoint to evaluate")

    add_config_args(sub.add_parser("simulate", help="generate and persist the training dataset"))
    add_config_args(sub.add_parser("train", help="train one estimator and save a checkpoint"))
    add_config_args(sub.add_parser("evaluate", help="evaluate a checkpoint on the experiment metrics"), checkpoint=True)
    add_config_args(sub.add_parser("run", help="dataset + training + evaluation + results bundle"))
    sub.add_parser("validate", help="validate a config file").add_argument("--config", required=True)

    plan = sub.add_parser("plan", help="per-level sample allocation under a budget")
    plan.add_argument("--costs", required=True, help="comma-separated unit costs C_0<...<C_L")
    plan.add_argument("--budget", type=float, required=True)
    plan.add_argument("--norms", help="generator norms for the closed-form planner")
    plan.add_argument("--variances", help="pilot variances for the empirical planner")
    plan.add_argument("--kernel", choices=("prev", "next"), default="prev", help="cost kernel in the closed-form weights")
    plan.add_argument("--output", help="also write the plan JSON here")

    args = parser.parse_args(argv)
    commands = {
        "validate": _cmd_validate,
        "simulate": _cmd_simulate,
        "train": _cmd_train,
        "evaluate": _cmd_evaluate,
        "run": _cmd_run,
        "plan": _cmd_plan,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
