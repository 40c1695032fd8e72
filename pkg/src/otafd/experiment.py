"""Simulation and sweep drivers writing CSV/JSON results."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import ExperimentConfig, digest_hash, resolve
from .distill import TrainingLog, run_training


def replication_seed(master: int, replication: int) -> int:
    """Independent 63-bit seed for replication `replication` of master seed `master`."""
    state = np.random.SeedSequence(master, spawn_key=(2**31, replication)).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def max_workers(n_jobs: int) -> int:
    cap = os.environ.get("OTAFD_THREADS")
    limit = os.cpu_count() or 1
    if cap:
        limit = max(1, int(cap))
    return max(1, min(limit, n_jobs))


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run_one(cfg: ExperimentConfig, seed: int) -> tuple[TrainingLog, dict]:
    setup, digest = resolve(cfg, seed)
    log = run_training(setup, seed, digest_hash(digest))
    return log, digest


def _simulate_job(args) -> tuple[str, str, str]:
    cfg, seed, rep = args
    log, digest = run_one(cfg, seed)
    summary = {"replication": rep, **log.summary(), "digest": digest}
    return log.to_csv(), json.dumps(summary, indent=2, sort_keys=True) + "\n", log.config_digest


def run_simulate(cfg: ExperimentConfig, out_dir=None, seed: int | None = None, replications: int | None = None) -> list[Path]:
    """Run every replication and write rep_NNN.csv / rep_NNN.json pairs; returns the CSV paths."""
    out = Path(out_dir if out_dir is not None else cfg.output.dir)
    master = cfg.seeds.master if seed is None else seed
    n = cfg.seeds.replications if replications is None else replications
    jobs = [(cfg, replication_seed(master, r), r) for r in range(n)]
    workers = max_workers(n)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_job, jobs))
    else:
        results = [_simulate_job(j) for j in jobs]
    paths = []
    for r, (csv_text, summary, _) in enumerate(results):
        csv_path = out / f"rep_{r:03d}.csv"
        write_atomic(csv_path, csv_text)
        write_atomic(out / f"rep_{r:03d}.json", summary)
        paths.append(csv_path)
    return paths


@dataclass
class SweepResult:
    epsilons: np.ndarray
    phi2: np.ndarray  # (points, replications): mean phi2 over rounds and devices
    accuracy: np.ndarray  # (points, replications)
    uplink_time_s: np.ndarray  # (points,)
    seeds: list[int]

    @property
    def phi2_mean(self) -> np.ndarray:
        return self.phi2.mean(axis=1)

    @property
    def phi2_std(self) -> np.ndarray:
        return self.phi2.std(axis=1)

    @property
    def accuracy_mean(self) -> np.ndarray:
        return self.accuracy.mean(axis=1)

    @property
    def accuracy_std(self) -> np.ndarray:
        return self.accuracy.std(axis=1)

    def raw_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "replication", "seed", "mean_phi2", "final_accuracy"])
        for p, eps in enumerate(self.epsilons):
            for r, seed in enumerate(self.seeds):
                w.writerow([f"{eps:.17g}", r, seed, f"{self.phi2[p, r]:.17g}", f"{self.accuracy[p, r]:.17g}"])
        return buf.getvalue()

    def aggregate_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epsilon", "replications", "mean_phi2", "std_phi2", "mean_accuracy", "std_accuracy", "uplink_time_s"])
        for p, eps in enumerate(self.epsilons):
            w.writerow(
                [f"{eps:.17g}", len(self.seeds)]
                + [f"{v:.17g}" for v in (self.phi2_mean[p], self.phi2_std[p], self.accuracy_mean[p], self.accuracy_std[p], self.uplink_time_s[p])]
            )
        return buf.getvalue()


def _sweep_job(args) -> tuple[float, float, int]:
    cfg, seed = args
    log, _ = run_one(cfg, seed)
    phi2 = float(np.mean([rec.phi2 for rec in log.records]))
    return phi2, log.final_mean_accuracy, log.rounds


def run_sweep_epsilon(
    cfg: ExperimentConfig,
    grid: Sequence[float],
    delta: float = 1e-11,
    seed: int | None = None,
    replications: int | None = None,
    out_dir=None,
) -> SweepResult:
    """Apply each epsilon uniformly to all devices (fixed delta) and aggregate over replications.

    Replication r uses the same seed at every grid point, so channel draws and
    data are shared across the sweep.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("epsilon grid must be non-empty and strictly increasing")
    master = cfg.seeds.master if seed is None else seed
    n = cfg.seeds.replications if replications is None else replications
    seeds = [replication_seed(master, r) for r in range(n)]
    jobs = []
    for eps in grid:
        point = cfg.model_copy(
            update={"privacy": cfg.privacy.model_copy(update={"enabled": True, "epsilon": float(eps), "delta": delta})}
        )
        jobs.extend((point, s) for s in seeds)
    workers = max_workers(len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    arr = np.array(results, dtype=float).reshape(grid.size, n, 3)
    rounds = arr[:, :, 2]
    result = SweepResult(
        epsilons=grid,
        phi2=arr[:, :, 0],
        accuracy=arr[:, :, 1],
        uplink_time_s=cfg.classes**2 * cfg.slot_seconds * rounds.mean(axis=1),
        seeds=seeds,
    )
    if out_dir is not None:
        out = Path(out_dir)
        write_atomic(out / "sweep_epsilon_raw.csv", result.raw_csv())
        write_atomic(out / "sweep_epsilon.csv", result.aggregate_csv())
    return result
