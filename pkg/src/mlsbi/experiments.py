"""Experiment orchestration: configs, dataset generation, training, metrics.

Each experiment bundles a simulator, a task, an estimator preset and a metric
set.  Runs are deterministic functions of the config: every random choice is
derived from the config seed, evaluation datasets are shared across methods
and replicates for paired comparisons, and all outputs (datasets, checkpoints,
training log, metric tables) land in the output directory.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .allocation import CostModel, cost_of, mc_size_for_budget
from .datasets import save_dataset, simulate_level_batches, simulate_mc_batch
from .mdn import AffineMap, MdnConfig, MixtureDensityNetwork, save_estimator
from .metrics import (
    EvalGrid,
    aggregate_nlpd,
    coverage_curve,
    credibility_grid,
    grid_ise,
    grid_kld,
    hpd_covered,
    mmd,
    recovery_stats,
)
from .mlmc import Task
from .reference import reference_npe
from .rng import SeedKey
from .simulators import (
    GandKSimulator,
    LinearGaussianSimulator,
    OrnsteinUhlenbeckSimulator,
    ToggleSwitchSimulator,
    gk_exact_logpdf,
    summarize,
)
from .training import TrainConfig, train

__all__ = ["ExperimentConfig", "EXPERIMENTS", "validate", "run", "worker_count"]

METHODS = ("mc_low", "mc_mid", "mc_high", "mlmc")

EXPERIMENTS = {
    "gk_nle": {
        "simulator": lambda cfg: GandKSimulator(),
        "task": Task("nle"),
        "n_default": [10000, 100],
        "m": 1,
        "epochs_full": 10000,
        "hidden_layers": (50, 50, 50),
        "n_components": 5,
        "learning_rate": 1e-3,
        "metrics": ["grid_kld", "grid_ise"],
        "n_eval": 10,
    },
    "gk_npe": {
        "simulator": lambda cfg: GandKSimulator(),
        "task": Task("npe", "gk_quantiles4"),
        "n_default": [1000, 100],
        "m": 1000,
        "epochs_full": 800,
        "hidden_layers": (50, 50),
        "n_components": 5,
        "learning_rate": 1e-3,
        "metrics": ["nlpd", "coverage", "recovery"],
        "n_eval": 200,
    },
    "ou_npe": {
        "simulator": lambda cfg: OrnsteinUhlenbeckSimulator(drift_dt=cfg.ou_drift_dt),
        "task": Task("npe", "ou_logspace5"),
        "n_default": [10000, 1000],
        "m": 1,
        "epochs_full": 500,
        "hidden_layers": (20,),
        "n_components": 3,
        "learning_rate": 1e-3,
        "metrics": ["nlpd", "kld_to_reference"],
        "n_eval": 100,
    },
    "toggle_nle": {
        "simulator": lambda cfg: ToggleSwitchSimulator(),
        "task": Task("nle"),
        "n_default": [10000, 500, 300],
        "m": 1,
        "epochs_full": 10000,
        "hidden_layers": (20, 20),
        "n_components": 2,
        "learning_rate": 1e-3,
        "metrics": ["mmd"],
        "n_eval": 100,
    },
    "lingauss_calibration": {
        "simulator": lambda cfg: LinearGaussianSimulator(dim=2),
        "task": Task("npe", "identity"),
        "n_default": [5000],
        "m": 1,
        "epochs_full": 3000,
        "hidden_layers": (24, 24),
        "n_components": 1,
        "learning_rate": 3e-3,
        "metrics": ["posterior_mean_error", "coverage"],
        "n_eval": 300,
    },
}

# JSON schema of the experiment config file (informal but complete); the
# validate() pass below additionally applies the cross-field rules.
CONFIG_SCHEMA = {
    "type": "object",
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": sorted(EXPERIMENTS)},
        "method": {"enum": list(METHODS)},
        "n_per_level": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "seed": {"type": "integer", "minimum": 0},
        "epochs": {"type": "integer", "minimum": 1},
        "m": {"type": "integer", "minimum": 1},
        "replicates": {"type": "integer", "minimum": 1},
        "n_eval": {"type": "integer", "minimum": 1},
        "full_scale": {"type": "boolean"},
        "adjust_gradients": {"type": "boolean"},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "weight_decay": {"type": "number", "minimum": 0},
        "hidden_layers": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "n_components": {"type": "integer", "minimum": 1},
        "metrics": {"type": "array", "items": {"type": "string"}},
        "output_dir": {"type": "string"},
        "sweep_n1": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "ou_drift_dt": {"type": "boolean"},
        "persist_datasets": {"type": "boolean"},
        "n_reference": {"type": "integer", "minimum": 10},
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    method: str = "mlmc"
    n_per_level: list | None = None
    seed: int = 0
    epochs: int | None = None
    m: int | None = None
    replicates: int = 1
    n_eval: int | None = None
    full_scale: bool = False
    adjust_gradients: bool = True
    learning_rate: float | None = None
    weight_decay: float = 1e-5
    hidden_layers: list | None = None
    n_components: int | None = None
    metrics: list | None = None
    output_dir: str = "results"
    sweep_n1: list | None = None
    ou_drift_dt: bool = False
    persist_datasets: bool = True
    n_reference: int = 10000

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        diagnostics = validate(data)
        if diagnostics:
            raise ValueError("invalid config: " + "; ".join(diagnostics))
        return cls(**data)

    def resolved(self) -> dict:
        """Config with every preset default filled in (stored with results)."""
        preset = EXPERIMENTS[self.experiment]
        out = asdict(self)
        out["n_per_level"] = list(self.n_per_level or preset["n_default"])
        out["epochs"] = self.epochs or (preset["epochs_full"] if self.full_scale else max(1, preset["epochs_full"] // 10))
        out["m"] = self.m or preset["m"]
        out["n_eval"] = self.n_eval or preset["n_eval"]
        out["learning_rate"] = self.learning_rate or (1e-4 if self.full_scale else preset["learning_rate"])
        out["hidden_layers"] = list(self.hidden_layers or preset["hidden_layers"])
        out["n_components"] = self.n_components or preset["n_components"]
        out["metrics"] = list(self.metrics or preset["metrics"])
        out["version"] = __version__
        return out


def validate(data: dict) -> list:
    """Schema plus cross-field diagnostics; empty list when the config is valid."""
    diags = []
    if not isinstance(data, dict):
        return ["config: expected a JSON object"]
    known = set(ExperimentConfig.__dataclass_fields__)
    for field_name in data:
        if field_name not in known:
            diags.append(f"{field_name}: unknown field")
    exp = data.get("experiment")
    if exp not in EXPERIMENTS:
        diags.append(f"experiment: must be one of {sorted(EXPERIMENTS)}")
        return diags
    method = data.get("method", "mlmc")
    if method not in METHODS:
        diags.append(f"method: must be one of {METHODS}")
    seed = data.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        diags.append("seed: must be a non-negative integer")
    for name in ("epochs", "m", "replicates", "n_eval", "n_components", "n_reference"):
        value = data.get(name)
        if value is not None and (not isinstance(value, int) or value < 1):
            diags.append(f"{name}: must be a positive integer")
    n_levels = {"gk_nle": 2, "gk_npe": 2, "ou_npe": 2, "toggle_nle": 3, "lingauss_calibration": 1}[exp]
    n_per_level = data.get("n_per_level")
    if n_per_level is not None:
        if not all(isinstance(v, int) for v in n_per_level):
            diags.append("n_per_level: entries must be integers")
        elif any(v < 1 for v in n_per_level):
            diags.append("n_per_level: every level needs at least one sample (n_l >= 1 floor)")
        elif method == "mlmc" and len(n_per_level) != n_levels:
            diags.append(f"n_per_level: {exp} has a {n_levels}-level ladder, got {len(n_per_level)} entries")
        elif method != "mlmc" and len(n_per_level) not in (1, n_levels):
            diags.append("n_per_level: single-level methods take one count or the full ladder for budget matching")
    if method == "mc_mid" and n_levels != 3:
        diags.append(f"method: mc_mid needs a three-level ladder, {exp} has {n_levels}")
    if method != "mlmc" and n_levels == 1 and method != "mc_high":
        diags.append(f"method: {exp} has a single level; use mc_high or mlmc")
    if data.get("sweep_n1") is not None and (method != "mlmc" or n_levels != 2):
        diags.append("sweep_n1: only applies to two-level mlmc runs")
    return diags


def worker_count() -> int:
    """Replicate fan-out limit, capped by the MLSBI_THREADS environment variable."""
    raw = os.environ.get("MLSBI_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Run machinery


def _mc_level(sim, method: str) -> int:
    if method == "mc_high":
        return sim.ladder.top
    if method == "mc_mid":
        return 1
    return 0


def _training_batches(sim, resolved: dict, data_key: SeedKey):
    """Batches for one replicate, with budget matching for single-level runs."""
    n_per_level = resolved["n_per_level"]
    method = resolved["method"]
    m = resolved["m"]
    if method == "mlmc":
        if len(n_per_level) == 1:
            return [simulate_mc_batch(sim, data_key, n_per_level[0], sim.ladder.top, m)]
        return simulate_level_batches(sim, data_key, n_per_level, m)
    level = _mc_level(sim, method)
    if len(n_per_level) == 1:
        n = n_per_level[0]
    else:
        budget = cost_of(n_per_level, CostModel(sim.ladder.unit_costs))
        n = mc_size_for_budget(budget, sim.ladder.unit_costs[level])
    return [simulate_mc_batch(sim, data_key, n, level, m)]


def _build_estimator(sim, task: Task, resolved: dict, batches) -> MixtureDensityNetwork:
    conditions, targets = task.pairs(batches[0].thetas, batches[0].x_hi)
    config = MdnConfig(
        condition_dim=conditions.shape[1],
        target_dim=targets.shape[1],
        hidden_layers=tuple(resolved["hidden_layers"]),
        n_components=resolved["n_components"],
    )
    pooled_c = [task.pairs(b.thetas, b.x_hi)[0] for b in batches]
    pooled_t = [task.pairs(b.thetas, b.x_hi)[1] for b in batches]
    return MixtureDensityNetwork(
        config,
        cond_map=AffineMap.from_data(np.vstack(pooled_c)),
        target_map=AffineMap.from_data(np.vstack(pooled_t)),
    )


def _posterior_mean(mdn, phi, condition) -> np.ndarray:
    w, mu, _ = mdn.mixture_parameters(phi, condition)
    mean_std = (w[0][:, None] * mu[0]).sum(axis=0)
    return mdn.target_map.inverse(mean_std)


# -- evaluation packs (shared across methods and replicates) ----------------


def _eval_pack(sim, task, resolved, eval_key: SeedKey):
    exp = resolved["experiment"]
    n_eval = resolved["n_eval"]
    if exp == "gk_nle":
        thetas = sim.prior.sample(eval_key.child(0), n_eval)
        return {"thetas": thetas, "grid": EvalGrid(-30.0, 30.0, 2000)}
    if exp in ("gk_npe", "ou_npe"):
        thetas = sim.prior.sample(eval_key.child(0), n_eval)
        noise = sim.sample_noise(eval_key.child(1), n_eval, resolved["m"], sim.ladder.top)
        x = sim.simulate(thetas, noise, sim.ladder.top)
        return {"thetas": thetas, "summaries": summarize(x, task.summary_scheme)}
    if exp == "toggle_nle":
        thetas = sim.prior.sample(eval_key.child(0), n_eval)
        sims = np.empty((n_eval, 500))
        for i in range(n_eval):  # chunked: the top-level noise block is wide
            noise = sim.sample_noise(eval_key.child(1).child(i), 1, 500, sim.ladder.top)
            sims[i] = sim.simulate(thetas[i : i + 1], noise, sim.ladder.top)[0, :, 0]
        return {"thetas": thetas, "simulated": sims}
    if exp == "lingauss_calibration":
        thetas = sim.prior.sample(eval_key.child(0), n_eval)
        noise = sim.sample_noise(eval_key.child(1), n_eval, resolved["m"], 0)
        x = sim.simulate(thetas, noise, 0)
        return {"thetas": thetas, "summaries": summarize(x, "identity"), "observations": x}
    raise ValueError(exp)


def _posterior_rows(mdn, phi, pack, resolved, eval_key, metric_names):
    """Metrics for posterior-estimation experiments (shared machinery)."""
    thetas = pack["thetas"]
    summaries = pack["summaries"]
    rows = []
    indicators = []
    medians = np.empty_like(thetas)
    creds = credibility_grid()
    for i in range(thetas.shape[0]):
        cond = summaries[i]
        lp_true = float(mdn.logpdf(phi, cond[None, :], thetas[i][None, :])[0])
        if "nlpd" in metric_names:
            rows.append({"metric": "nlpd", "index": i, "value": -lp_true})
        if "coverage" in metric_names or "recovery" in metric_names:
            draws = mdn.sample(phi, cond, 2000, eval_key.child(10_000 + i))
            if "coverage" in metric_names:
                lps = mdn.logpdf(phi, np.tile(cond, (draws.shape[0], 1)), draws)
                indicators.append(hpd_covered(lps, lp_true, creds))
            medians[i] = np.median(draws, axis=0)
    out = {"rows": rows}
    if indicators:
        out["coverage"] = coverage_curve(np.asarray(indicators), creds)
    if "recovery" in metric_names:
        r, r2 = recovery_stats(thetas, medians)
        for j in range(thetas.shape[1]):
            rows.append({"metric": "recovery_r", "index": j, "value": float(r[j])})
            rows.append({"metric": "recovery_r2", "index": j, "value": float(r2[j])})
    return out


def _evaluate(sim, task, mdn, phi, pack, resolved, eval_key, reference=None):
    exp = resolved["experiment"]
    metric_names = resolved["metrics"]
    if exp == "gk_nle":
        grid = pack["grid"]
        rows = []
        for i, theta in enumerate(pack["thetas"]):
            exact = lambda xs: gk_exact_logpdf(theta, xs)
            approx = lambda xs: mdn.logpdf(phi, np.tile(theta, (xs.size, 1)), xs[:, None])
            if "grid_kld" in metric_names:
                rows.append({"metric": "grid_kld", "index": i, "value": grid_kld(exact, approx, grid)})
            if "grid_ise" in metric_names:
                rows.append({"metric": "grid_ise", "index": i, "value": grid_ise(exact, approx, grid)})
        return {"rows": rows}
    if exp == "toggle_nle":
        rows = []
        for i, theta in enumerate(pack["thetas"]):
            draws = mdn.sample(phi, theta, 500, eval_key.child(20_000 + i))
            value = mmd(pack["simulated"][i][:, None], draws)
            rows.append({"metric": "mmd", "index": i, "value": value})
        return {"rows": rows}
    if exp == "lingauss_calibration":
        out = _posterior_rows(mdn, phi, pack, resolved, eval_key, metric_names)
        if "posterior_mean_error" in metric_names:
            for i in range(pack["thetas"].shape[0]):
                analytic_mean, _ = sim.posterior(pack["observations"][i])
                estimate = _posterior_mean(mdn, phi, pack["summaries"][i])
                out["rows"].append(
                    {"metric": "posterior_mean_error", "index": i, "value": float(np.linalg.norm(estimate - analytic_mean))}
                )
        return out
    out = _posterior_rows(mdn, phi, pack, resolved, eval_key, metric_names)
    if exp == "ou_npe" and "kld_to_reference" in metric_names and reference is not None:
        ref_mdn, ref_phi = reference
        values = []
        for i in range(pack["thetas"].shape[0]):
            cond = pack["summaries"][i]
            draws = ref_mdn.sample(ref_phi, cond, 2000, eval_key.child(30_000 + i))
            lp_ref = ref_mdn.logpdf(ref_phi, np.tile(cond, (2000, 1)), draws)
            lp_target = mdn.logpdf(phi, np.tile(cond, (2000, 1)), draws)
            value = float("inf") if not np.all(np.isfinite(lp_target)) else float(np.mean(lp_ref - lp_target))
            values.append(value)
            out["rows"].append({"metric": "kld_to_reference", "index": i, "value": value})
    return out


def _replicate_job(resolved: dict, replicate: int, pack: dict, reference) -> dict:
    exp_key = SeedKey(resolved["seed"])
    preset = EXPERIMENTS[resolved["experiment"]]
    sim = preset["simulator"](ExperimentConfig(**{k: v for k, v in resolved.items() if k in ExperimentConfig.__dataclass_fields__}))
    task = preset["task"]
    data_key = exp_key.child(0).child(replicate)
    batches = _training_batches(sim, resolved, data_key)
    mdn = _build_estimator(sim, task, resolved, batches)
    train_config = TrainConfig(
        epochs=resolved["epochs"],
        seed=exp_key.child(1).child(replicate),
        adjust_gradients=resolved["adjust_gradients"],
        weight_decay=resolved["weight_decay"],
        learning_rate=resolved["learning_rate"],
    )
    phi, log = train(mdn, task, batches, train_config)
    evaluation = _evaluate(sim, task, mdn, phi, pack, resolved, exp_key.child(2), reference)
    return {
        "replicate": replicate,
        "batches": batches,
        "sim": sim,
        "mdn": mdn,
        "phi": phi,
        "log": log,
        "evaluation": evaluation,
    }


def _write_metrics_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "replicate", "index", "value"])
        for row in rows:
            writer.writerow([row["method"], row["metric"], row["replicate"], row["index"], repr(row["value"])])


def _write_coverage_csv(path, curves):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "replicate", "nominal", "empirical"])
        for method, replicate, curve in curves:
            for a, b in zip(curve.levels, curve.empirical):
                writer.writerow([method, replicate, repr(float(a)), repr(float(b))])


def _write_loss_components_csv(path, log_rows):
    if not log_rows:
        return
    n_h = max(len(r["h"]) for _, r in log_rows)
    header = ["replicate", "epoch", "total"] + [f"h_{l}" for l in range(n_h)] + [
        f"f_plus_{l}" for l in range(n_h)
    ] + [f"f_minus_{l}" for l in range(n_h - 1)] + ["grad_norm", "update_norm"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for replicate, r in log_rows:
            row = [replicate, r["epoch"], repr(r["total"])]
            row += [repr(v) for v in r["h"]] + [""] * (n_h - len(r["h"]))
            row += [repr(v) for v in r["f_plus"]] + [""] * (n_h - len(r["f_plus"]))
            row += [repr(v) for v in r["f_minus"]] + [""] * (n_h - 1 - len(r["f_minus"]))
            row += [repr(r["grad_norm"]), repr(r["update_norm"])]
            writer.writerow(row)


def run(config: ExperimentConfig) -> dict:
    """Execute one experiment config end to end and write the results bundle."""
    resolved = config.resolved()
    out_dir = Path(resolved["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    if resolved["sweep_n1"]:
        return _run_sweep(config, resolved, out_dir)

    preset = EXPERIMENTS[resolved["experiment"]]
    sim = preset["simulator"](config)
    task = preset["task"]
    exp_key = SeedKey(resolved["seed"])
    pack = _eval_pack(sim, task, resolved, exp_key.child(2))

    reference = None
    if resolved["experiment"] == "ou_npe" and "kld_to_reference" in resolved["metrics"]:
        ref_mdn, ref_phi, _ = reference_npe(
            sim, task.summary_scheme, resolved["n_reference"], exp_key.child(3), m=resolved["m"],
            epochs=resolved["epochs"],
        )
        reference = (ref_mdn, ref_phi)

    replicates = list(range(resolved["replicates"]))
    n_workers = min(worker_count(), len(replicates))
    if n_workers > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_replicate_job, [resolved] * len(replicates), replicates, [pack] * len(replicates), [reference] * len(replicates)))
    else:
        results = [_replicate_job(resolved, r, pack, reference) for r in replicates]
    results.sort(key=lambda r: r["replicate"])

    metric_rows = []
    curves = []
    log_rows = []
    for res in results:
        rep = res["replicate"]
        if resolved["persist_datasets"]:
            save_dataset(
                out_dir / "data" / f"rep{rep:03d}", res["batches"], res["sim"], SeedKey(resolved["seed"]).child(0).child(rep),
                resolved["m"], summary_scheme=task.summary_scheme if task.kind == "npe" else None,
            )
        ckpt_dir = out_dir / "checkpoints"
        ckpt_dir.mkdir(exist_ok=True)
        save_estimator(ckpt_dir / f"rep{rep:03d}.mlsbi", res["mdn"], res["phi"])
        for row in res["evaluation"]["rows"]:
            metric_rows.append({"method": resolved["method"], "replicate": rep, **row})
        if "coverage" in res["evaluation"]:
            curves.append((resolved["method"], rep, res["evaluation"]["coverage"]))
        log_rows.extend((rep, r) for r in res["log"])

    with open(out_dir / "training_log.jsonl", "w") as fh:
        for rep, record in log_rows:
            fh.write(json.dumps({"replicate": rep, **record}) + "\n")
    _write_metrics_csv(out_dir / "metrics.csv", metric_rows)
    _write_loss_components_csv(out_dir / "loss_components.csv", log_rows)
    if curves:
        _write_coverage_csv(out_dir / "coverage_curve.csv", curves)

    summary = {}
    for row in metric_rows:
        summary.setdefault(row["metric"], []).append(row["value"])
    summary_stats = {}
    for metric, values in summary.items():
        if metric == "nlpd":
            med, excluded = aggregate_nlpd(values)
            summary_stats[metric] = {"median": med, "n_excluded": excluded}
        else:
            finite = [v for v in values if np.isfinite(v)]
            summary_stats[metric] = {
                "median": float(np.median(finite)) if finite else float("nan"),
                "q25": float(np.percentile(finite, 25)) if finite else float("nan"),
                "q75": float(np.percentile(finite, 75)) if finite else float("nan"),
                "n": len(values),
            }
    results_bundle = {"config": resolved, "summary": summary_stats}
    with open(out_dir / "results.json", "w") as fh:
        json.dump(results_bundle, fh, indent=2)
    return results_bundle


def _run_sweep(config: ExperimentConfig, resolved: dict, out_dir: Path) -> dict:
    """Metric-vs-n1 sweep for two-level mlmc runs."""
    sweep_rows = []
    bundles = {}
    for n1 in resolved["sweep_n1"]:
        sub = ExperimentConfig(**{
            **{k: v for k, v in asdict(config).items()},
            "n_per_level": [resolved["n_per_level"][0], int(n1)],
            "sweep_n1": None,
            "output_dir": str(out_dir / f"n1_{n1}"),
        })
        bundle = run(sub)
        bundles[int(n1)] = bundle
        for metric, stats in bundle["summary"].items():
            sweep_rows.append({"n1": int(n1), "metric": metric, "median": stats["median"]})
    with open(out_dir / "sweep.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["n1", "metric", "median"])
        for row in sweep_rows:
            writer.writerow([row["n1"], row["metric"], repr(row["median"])])
    bundle = {"config": resolved, "sweep": sweep_rows}
    with open(out_dir / "results.json", "w") as fh:
        json.dump(bundle, fh, indent=2)
    return bundle
