"""Dataset generation and persistence for multilevel training.

Level batches are produced from a seed-keyed tree of streams: level ``l``
draws its own parameters and noise, pushes them through the level-``l``
generator and (for ``l >= 1``) through the level-``l-1`` generator on the
identical draws.  Datasets persist as CSV (one row per coupled sample) with a
JSON sidecar carrying the seed, counts and costs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .mlmc import LevelBatch
from .rng import SeedKey
from .simulators import Simulator, summarize

__all__ = ["simulate_level_batches", "simulate_mc_batch", "save_dataset", "load_dataset"]


def simulate_mc_batch(sim: Simulator, key: SeedKey, n: int, level: int, m: int = 1) -> LevelBatch:
    """One single-level batch of n draws at the given fidelity."""
    if n < 1:
        raise ValueError("need at least one sample")
    thetas = sim.prior.sample(key.child(0), n)
    noise = sim.sample_noise(key.child(1), n, m, level)
    x = sim.simulate(thetas, noise, level)
    return LevelBatch(level=level, thetas=thetas, x_hi=x)


def simulate_level_batches(
    sim: Simulator,
    key: SeedKey,
    n_per_level,
    m: int = 1,
    couple: bool = True,
) -> list:
    """Coupled batches for levels 0..L of the simulator's ladder.

    With ``couple=False`` the lower-level outputs at each level use fresh,
    independent noise instead of the shared draws; this deliberately breaks
    seed matching and exists for variance-comparison studies.
    """
    n_per_level = [int(n) for n in n_per_level]
    if len(n_per_level) > sim.n_levels:
        raise ValueError(f"simulator has {sim.n_levels} levels, got {len(n_per_level)} counts")
    if any(n < 1 for n in n_per_level):
        raise ValueError("every level needs at least one sample")
    batches = []
    for level, n in enumerate(n_per_level):
        level_key = key.child(level)
        thetas = sim.prior.sample(level_key.child(0), n)
        noise = sim.sample_noise(level_key.child(1), n, m, level)
        x_hi = sim.simulate(thetas, noise, level)
        x_lo = None
        if level >= 1:
            if couple:
                x_lo = sim.simulate(thetas, noise, level - 1)
            else:
                independent = sim.sample_noise(level_key.child(2), n, m, level - 1)
                x_lo = sim.simulate(thetas, independent, level - 1)
        batches.append(LevelBatch(level=level, thetas=thetas, x_hi=x_hi, x_lo=x_lo))
    return batches


def _flatten(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def save_dataset(
    directory,
    batches: list,
    sim: Simulator,
    key: SeedKey,
    m: int,
    summary_scheme: str | None = None,
) -> Path:
    """Persist batches as ``dataset.csv`` plus ``dataset.meta.json``.

    With a summary scheme the rows carry per-sample summaries instead of raw
    observations (the natural storage for posterior-estimation datasets with
    many observations per draw).
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / "dataset.csv"

    def row_values(batch: LevelBatch):
        if summary_scheme is None:
            hi = _flatten(batch.x_hi)
            lo = None if batch.x_lo is None else _flatten(batch.x_lo)
        else:
            hi = summarize(batch.x_hi, summary_scheme)
            lo = None if batch.x_lo is None else summarize(batch.x_lo, summary_scheme)
        return hi, lo

    first_hi, _ = row_values(batches[0])
    d_theta = batches[0].thetas.shape[1]
    d_x = first_hi.shape[1]
    tag = "s" if summary_scheme else "x"
    header = (
        [f"theta_{j}" for j in range(d_theta)]
        + [f"{tag}hi_{j}" for j in range(d_x)]
        + [f"{tag}lo_{j}" for j in range(d_x)]
        + ["level"]
    )
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for batch in batches:
            hi, lo = row_values(batch)
            for i in range(batch.n):
                lo_vals = [""] * d_x if lo is None else [repr(float(v)) for v in lo[i]]
                writer.writerow(
                    [repr(float(v)) for v in batch.thetas[i]]
                    + [repr(float(v)) for v in hi[i]]
                    + lo_vals
                    + [batch.level]
                )
    meta = {
        "schema_version": 1,
        "simulator": sim.name,
        "seed": {"root": key.root, "path": list(key.path)},
        "n_per_level": [int(b.n) for b in batches],
        "levels": [int(b.level) for b in batches],
        "m": int(m),
        "unit_costs": list(sim.ladder.unit_costs),
        "summary_scheme": summary_scheme,
        "stored": "summary" if summary_scheme else "raw",
        "theta_dim": int(d_theta),
        "x_dim": int(d_x),
        "data_dim": int(sim.data_dim),
    }
    with open(directory / "dataset.meta.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return csv_path


def load_dataset(directory) -> tuple:
    """Load a persisted dataset; summary-stored rows come back as one
    pseudo-observation per draw (train them with the identity summary)."""
    directory = Path(directory)
    with open(directory / "dataset.meta.json") as fh:
        meta = json.load(fh)
    rows = np.genfromtxt(directory / "dataset.csv", delimiter=",", names=True, dtype=np.float64)
    names = rows.dtype.names
    d_theta = meta["theta_dim"]
    d_x = meta["x_dim"]
    theta_cols = names[:d_theta]
    hi_cols = names[d_theta : d_theta + d_x]
    lo_cols = names[d_theta + d_x : d_theta + 2 * d_x]
    levels = rows["level"].astype(int)

    def shaped(flat: np.ndarray) -> np.ndarray:
        if meta["stored"] == "raw":
            return flat.reshape(flat.shape[0], meta["m"], meta["data_dim"])
        return flat[:, None, :]

    batches = []
    for level in sorted(set(levels.tolist())):
        mask = levels == level
        thetas = np.column_stack([rows[c][mask] for c in theta_cols])
        x_hi = shaped(np.column_stack([rows[c][mask] for c in hi_cols]))
        x_lo = None
        if level >= 1:
            lo = np.column_stack([rows[c][mask] for c in lo_cols])
            if not np.all(np.isnan(lo)):
                x_lo = shaped(lo)
        batches.append(LevelBatch(level=level, thetas=thetas, x_hi=x_hi, x_lo=x_lo))
    return batches, meta
