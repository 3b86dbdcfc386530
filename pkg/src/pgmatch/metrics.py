"""Run metrics, the gradient-memory estimate and the partition-bound check."""
import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .omp import GMProblem, eval_objective

CURVE_COLUMNS = ("epoch", "train_loss", "val_loss", "test_err", "subset_size",
                 "selection_sec", "training_sec", "lr")
BOUND_TOL = 1e-9


class MetricError(ValueError):
    pass


def relative_test_error(err_subset, err_full):
    if not err_full > 0:
        raise MetricError("err_full must be positive")
    return (err_subset - err_full) / err_full


def speedup(wall_full_seconds, wall_subset_seconds):
    if not (wall_full_seconds > 0 and wall_subset_seconds > 0):
        raise MetricError("wall-clock times must be positive")
    return wall_full_seconds / wall_subset_seconds


def _ids(sel):
    return np.asarray(getattr(sel, "instance_ids", sel), dtype=np.int64)


def overlap_index(prev, cur):
    """Shared instances of two consecutive selections over the current subset size."""
    a, b = _ids(prev), _ids(cur)
    if a.size == 0 or b.size == 0:
        raise MetricError("empty selection")
    return len(np.intersect1d(a, b)) / len(np.unique(b))


def noise_overlap_index(sel, ds):
    """Fraction of all noisy examples that the selection contains."""
    total = int(ds.noisy.sum())
    if total == 0:
        raise MetricError("dataset has no noisy examples")
    ids = np.unique(_ids(sel))
    return int(ds.noisy[ids].sum()) / total


def estimate_gradient_memory(param_count, bytes_per_scalar, n_units):
    """(bytes per unit, total bytes) for storing one gradient per unit."""
    if param_count <= 0 or bytes_per_scalar <= 0 or n_units <= 0:
        raise MetricError("inputs must be positive")
    per_unit = param_count * bytes_per_scalar
    return per_unit, per_unit * n_units


def verify_partition_bound(per_partition, selected, weights, pooled_target, candidates, D, lam):
    """Margin of the partition bound at the PGM point.

    ``mean(per_partition) - E(w / D)`` where the right-hand objective uses the
    merged selection (indices into ``candidates``), the weights divided by
    ``D`` and ``lam * ||w / D||^2`` on the concatenated weight vector.  The
    bound holds when the margin is ``>= -1e-9``.
    """
    per_partition = np.asarray(per_partition, dtype=np.float64)
    if len(per_partition) != D:
        raise MetricError(f"expected {D} partition objectives, got {len(per_partition)}")
    candidates = np.atleast_2d(np.asarray(candidates, dtype=np.float64))
    pooled_target = np.asarray(pooled_target, dtype=np.float64)
    if candidates.shape[1] != pooled_target.shape[0]:
        raise MetricError("candidate and target dimensions differ")
    problem = GMProblem(pooled_target, candidates, 0, lam, 0.0)
    pooled = eval_objective(problem, selected, np.asarray(weights, dtype=np.float64) / D)
    return float(per_partition.sum() / D - pooled)


@dataclass
class MetricsReport:
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)

    def add_row(self, **row):
        missing = set(CURVE_COLUMNS) - set(row)
        if missing:
            raise MetricError(f"row missing {sorted(missing)}")
        self.rows.append({k: row[k] for k in CURVE_COLUMNS})

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_dict(self):
        return asdict(self)

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.summary, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for r in self.rows:
                w.writerow([_fmt(r[c]) for c in CURVE_COLUMNS])


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"
