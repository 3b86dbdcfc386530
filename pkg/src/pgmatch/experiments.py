"""Experiment drivers behind the CLI: single runs, strategy grids, bound trials."""
import csv
import json
import os

import numpy as np

from . import model
from .data import generate_synthetic, partition
from .metrics import BOUND_TOL, relative_test_error, speedup
from .pgm import TrainConfig, partition_batches, run_training, select_round


def write_selection(path, sel):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["instance_id", "weight", "partition"])
        for i, wt, p in zip(sel.instance_ids, sel.instance_weights, sel.instance_partition):
            w.writerow([int(i), f"{float(wt):.17g}", int(p)])


def train_and_write(run_cfg, train_cfg, out_dir, data_seed_offset=0):
    """Run one training job and write its artifacts into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    train, val, test = run_cfg.load_datasets(data_seed_offset)

    def save(t, sel):
        write_selection(os.path.join(out_dir, f"selection_round_{t}.csv"), sel)

    params, report = run_training(train, val, test, train_cfg, on_selection=save)
    report.write_json(os.path.join(out_dir, "metrics.json"))
    report.write_csv(os.path.join(out_dir, "curves.csv"))
    np.save(os.path.join(out_dir, "final_params.npy"), params.flat())
    return params, report


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


# energy is proxied by wall-clock time, so energy_ratio is time_full / time_subset
CELL_METRICS = ("test_err", "relative_test_error", "speedup", "energy_ratio",
                "overlap_index", "noise_overlap_index")


def run_grid(run_cfg, strategies, budgets, n_seeds, log=None):
    """Cross product of strategies x budgets x seeds.

    Each seed trains one full-data reference first; relative test error and
    speedup of every run are taken against the reference of the same seed.
    Generated datasets are redrawn per seed; CSV datasets stay fixed.
    """
    base = run_cfg.train
    runs = []
    for s in range(n_seeds):
        seed = base.seed + s
        data = run_cfg.load_datasets(data_seed_offset=s)
        _, ref = run_training(*data, base.replace(strategy="full", seed=seed))
        ref_err, ref_wall = ref.summary["final_test_err"], ref.summary["wall_sec"]
        for strategy in strategies:
            for f in budgets:
                row = {"strategy": strategy, "budget": f, "seed": seed}
                try:
                    if strategy == "full":
                        summary = ref.summary
                    else:
                        _, rep = run_training(*data, base.replace(strategy=strategy, budget_fraction=f, seed=seed))
                        summary = rep.summary
                    row.update(status="ok",
                               test_err=summary["final_test_err"],
                               relative_test_error=(relative_test_error(summary["final_test_err"], ref_err)
                                                    if ref_err > 0 else None),
                               speedup=speedup(ref_wall, summary["wall_sec"]),
                               energy_ratio=speedup(ref_wall, summary["wall_sec"]),
                               overlap_index=summary["mean_overlap_index"],
                               noise_overlap_index=summary["mean_noise_overlap_index"],
                               wall_sec=summary["wall_sec"],
                               selection_sec=summary["selection_sec"])
                except Exception as exc:  # keep the grid going; the cell is marked failed
                    row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
                runs.append(row)
                if log is not None:
                    log(row)
    cells = []
    for strategy in strategies:
        for f in budgets:
            rows = [r for r in runs if r["strategy"] == strategy and r["budget"] == f]
            ok = [r for r in rows if r["status"] == "ok"]
            cell = {"strategy": strategy, "budget": f, "n_ok": len(ok), "n_failed": len(rows) - len(ok)}
            for m in CELL_METRICS:
                cell[f"{m}_mean"], cell[f"{m}_std"] = _mean_std([r.get(m) for r in ok])
            cells.append(cell)
    return {"runs": runs, "cells": cells}


def write_grid(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "comparison.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2, sort_keys=True)
        fh.write("\n")
    cols = ["strategy", "budget", "n_ok", "n_failed"] + [f"{m}_{s}" for m in CELL_METRICS for s in ("mean", "std")]
    with open(os.path.join(out_dir, "comparison.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for c in result["cells"]:
            w.writerow(["" if c[k] is None else c[k] for k in cols])


def bound_trial(seed, D, base=None):
    """One randomized PGM round; returns the partition-bound margin."""
    rng = np.random.default_rng([seed, 7])
    n = int(rng.integers(120, 400))
    dim = int(rng.integers(2, 7))
    classes = int(rng.integers(2, 5))
    kind = "mlp1" if rng.random() < 0.5 else "softmax_linear"
    hidden = int(rng.integers(2, 6))
    ds = generate_synthetic(n, dim, classes, float(rng.uniform(0.5, 4.0)), seed=seed)
    val = generate_synthetic(60, dim, classes, 1.0, seed=seed + 1, centers_seed=seed)
    params = model.init_params(kind, dim, classes, hidden, seed=seed, scale=float(rng.uniform(0.05, 1.0)))
    cfg = base or TrainConfig()
    cfg = cfg.replace(partitions=D, seed=seed,
                      batch_size=int(rng.integers(4, 24)),
                      budget_fraction=float(rng.choice([0.1, 0.2, 0.3, 0.5, 1.0])),
                      lam=float(rng.choice([0.0, 0.01, 0.1, 1.0])),
                      val_flag=bool(rng.random() < 0.5))
    parts = partition(n, D, "shuffled", seed)
    sel = select_round(params, ds, parts, val, cfg, batches=partition_batches(parts, cfg.batch_size, seed))
    return sel.bound_margin


def verify_bound(trials, seed=0, partitions=(2, 4, 8), base=None):
    margins, d1, bad = [], [], []
    for i in range(trials):
        s = seed + i
        D = partitions[i % len(partitions)]
        m = bound_trial(s, D, base)
        margins.append(m)
        if m < -BOUND_TOL:
            bad.append({"seed": s, "D": D, "margin": m})
    for i in range(max(1, trials // 4)):
        d1.append(bound_trial(seed + trials + i, 1, base))
    return {
        "trials": trials,
        "partitions": list(partitions),
        "min_margin": float(np.min(margins)),
        "mean_margin": float(np.mean(margins)),
        "violations": bad,
        "d1_trials": len(d1),
        "d1_max_abs_margin": float(np.max(np.abs(d1))),
    }
