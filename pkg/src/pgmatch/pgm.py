"""Partitioned gradient matching and the training loop around it.

Each selection round splits the training set into ``D`` fixed partitions,
runs gradient matching on every partition independently (optionally on a
thread pool) and merges the partial subsets in partition order.  The merged
batches are expanded to instances, each inheriting its batch weight.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import kernels, model, trainer
from ._accel import backend
from .data import partition
from .metrics import MetricsReport, noise_overlap_index, overlap_index, verify_partition_bound
from .omp import (DEFAULT_EPSILON, DEFAULT_LAMBDA, GMProblem, GMResult, eval_objective,
                  gradient_match, solve_weights)

STRATEGIES = ("full", "pgm", "random", "large_only", "large_small")


class ConfigError(ValueError):
    pass


class SelectionError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    total_epochs: int = 30
    selection_interval: int = 5
    warm_start_epochs: int = 2
    partitions: int = 7
    budget_fraction: float = 0.3
    batch_size: int = 32
    lam: float = DEFAULT_LAMBDA
    epsilon: float = DEFAULT_EPSILON
    val_flag: bool = False
    learning_rate: float = 0.02
    anneal_factor: float = 0.8
    anneal_threshold: float = 0.0025
    seed: int = 0
    workers: int = 1
    strategy: str = "pgm"
    model: str = "softmax_linear"
    hidden_dim: int = 32
    partition_strategy: str = "shuffled"
    normalize_weights: bool = False
    baseline_reselect: bool = True

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)
        need(self.total_epochs >= 1, "total_epochs must be >= 1")
        need(1 <= self.selection_interval <= self.total_epochs,
             "selection_interval must satisfy 1 <= R <= total_epochs")
        need(0 <= self.warm_start_epochs < self.total_epochs,
             "warm_start_epochs must satisfy 0 <= W < total_epochs")
        need(self.partitions >= 1, "partitions must be >= 1")
        need(0.0 < self.budget_fraction <= 1.0, "budget_fraction must lie in (0, 1]")
        need(self.batch_size >= 1, "batch_size must be >= 1")
        need(self.lam >= 0 and self.epsilon >= 0, "lambda and epsilon must be >= 0")
        need(self.learning_rate > 0, "learning_rate must be > 0")
        need(0.0 < self.anneal_factor < 1.0, "anneal_factor must lie in (0, 1)")
        need(self.anneal_threshold >= 0, "anneal_threshold must be >= 0")
        need(self.workers >= 1, "workers must be >= 1")
        need(self.strategy in STRATEGIES, f"strategy must be one of {', '.join(STRATEGIES)}")
        need(self.model in model.KINDS, f"model must be one of {', '.join(model.KINDS)}")
        need(self.model != "mlp1" or self.hidden_dim >= 1, "hidden_dim must be >= 1")
        need(self.partition_strategy in ("contiguous", "shuffled"),
             "partition_strategy must be contiguous or shuffled")
        return self

    def replace(self, **kw):
        names = {f.name for f in fields(self)}
        bad = set(kw) - names
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        return TrainConfig(**{**asdict(self), **kw}).validate()


@dataclass
class Selection:
    round: int
    batch_ids: list
    instance_ids: np.ndarray
    instance_weights: np.ndarray
    instance_partition: np.ndarray
    per_partition_objectives: list = field(default_factory=list)
    bound_margin: float = None
    total_batches: int = 0

    def __len__(self):
        return len(self.instance_ids)


def make_batches(indices, batch_size, seed):
    """Shuffle ``indices`` once and cut consecutive chunks of ``batch_size``."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise SelectionError("cannot batch an empty partition")
    perm = np.random.default_rng([seed, 5]).permutation(indices.size)
    shuffled = indices[perm]
    return [shuffled[i:i + batch_size] for i in range(0, indices.size, batch_size)]


def partition_batches(partitioning, batch_size, seed):
    """Frozen batches of every partition; partition ``p`` uses seed ``(seed, p)``."""
    out = []
    for p in range(partitioning.D):
        members = partitioning.members(p)
        if members.size == 0:
            raise SelectionError(f"partition {p} is empty")
        out.append(make_batches(members, batch_size, seed * 1_000_003 + p))
    return out


def candidate_gradients(params, ds, batches):
    """Mean last-layer gradient of each batch, one row per batch."""
    members = np.concatenate(batches)
    F, delta = model.softmax_delta(params, ds.X[members], ds.y[members])
    offsets = np.concatenate([[0], np.cumsum([len(b) for b in batches])])
    return kernels.batch_grads(delta, F, np.arange(len(members)), offsets)


def partition_budgets(n_batches, fraction):
    """Split ``floor(f * b_n)`` batches over partitions; the first ones absorb the remainder."""
    D = len(n_batches)
    total = int(np.floor(fraction * sum(n_batches) + 1e-9))
    base, extra = divmod(total, D)
    budgets = [min(nb, base + (p < extra)) for p, nb in enumerate(n_batches)]
    # hand what a small partition cannot use to the next ones with room
    spare = total - sum(budgets)
    for p, nb in enumerate(n_batches):
        take = min(spare, nb - budgets[p])
        budgets[p] += take
        spare -= take
    return [max(1, b) for b in budgets]


def _match_partition(params, ds, batches, k, val_target, config):
    G = candidate_gradients(params, ds, batches)
    target = G.mean(axis=0) if val_target is None else val_target
    problem = GMProblem(target, G, k, config.lam, config.epsilon)
    if k >= len(batches):
        sel = list(range(len(batches)))
        w = solve_weights(problem, sel)
        res = GMResult(sel, w, eval_objective(problem, sel, w), len(sel))
    else:
        res = gradient_match(problem)
    return G, target, res


def select_round(params, ds, partitioning, valset, config, batches=None, round_=0, executor=None):
    """One PGM selection round over all partitions."""
    if batches is None:
        batches = partition_batches(partitioning, config.batch_size, config.seed)
    D = len(batches)
    budgets = partition_budgets([len(b) for b in batches], config.budget_fraction)
    val_target = None
    if config.val_flag:
        if valset is None:
            raise SelectionError("val_flag requires a validation set")
        val_target = model.last_layer_grad(params, valset.X, valset.y)

    def job(p):
        return _match_partition(params, ds, batches[p], budgets[p], val_target, config)

    if executor is not None and D > 1:
        results = list(executor.map(job, range(D)))
    else:
        results = [job(p) for p in range(D)]

    batch_ids, ids, wts, parts, objs = [], [], [], [], []
    pooled_sel, pooled_w, offset = [], [], 0
    for p, (G, _, res) in enumerate(results):
        objs.append(float(res.objective))
        for j, w in zip(res.selected, res.weights):
            batch_ids.append((p, int(j)))
            members = batches[p][j]
            ids.append(members)
            wts.append(np.full(len(members), float(w)))
            parts.append(np.full(len(members), p, dtype=np.int64))
            pooled_sel.append(offset + int(j))
            pooled_w.append(float(w))
        offset += len(G)
    cand = results[0][0] if D == 1 else np.vstack([r[0] for r in results])
    pooled_target = results[0][1] if D == 1 else np.mean([r[1] for r in results], axis=0)
    margin = verify_partition_bound(objs, pooled_sel, pooled_w, pooled_target, cand, D, config.lam)

    if ids:
        ids = np.concatenate(ids)
        wts = np.concatenate(wts)
        parts = np.concatenate(parts)
    else:
        ids, wts, parts = np.zeros(0, np.int64), np.zeros(0), np.zeros(0, np.int64)
    if config.normalize_weights and wts.sum() > 0:
        wts = wts * (len(wts) / wts.sum())
    return Selection(round_, batch_ids, ids, wts, parts, objs, margin,
                     sum(len(b) for b in batches))


def baseline_select(ds, fraction, strategy, seed, round_=0):
    """Model-independent baselines with unit weights."""
    n = len(ds)
    if not 0.0 < fraction <= 1.0:
        raise ConfigError("budget_fraction must lie in (0, 1]")
    m = max(1, int(np.floor(fraction * n + 0.5)))
    if strategy == "full" or m >= n:
        ids = np.arange(n)
    elif strategy == "random":
        ids = np.sort(np.random.default_rng([seed, 6, round_]).choice(n, size=m, replace=False))
    elif strategy in ("large_only", "large_small"):
        by_cost = np.argsort(ds.cost, kind="stable")
        n_small = int(np.floor(fraction * n / 2)) if strategy == "large_small" else 0
        small = by_cost[:n_small]
        large = by_cost[::-1][:m - n_small]
        ids = np.sort(np.concatenate([small, large]))
    else:
        raise ConfigError(f"unknown baseline strategy {strategy!r}")
    ids = ids.astype(np.int64)
    return Selection(round_, [], ids, np.ones(len(ids)), np.full(len(ids), -1, dtype=np.int64))


def _is_round(t, config):
    return (t - config.warm_start_epochs - 1) % config.selection_interval == 0


def run_training(train, val, test, config, init=None, on_selection=None):
    """Warm start, then train on adaptively selected subsets.

    Returns ``(params, report)``; ``report.selections`` holds every selection.
    ``on_selection(epoch, selection)`` is called after each round.
    """
    config.validate()
    if not (train.dim == val.dim == test.dim and train.num_classes == val.num_classes == test.num_classes):
        raise ConfigError("train/val/test must share feature dimension and class count")
    params = init if init is not None else model.init_params(
        config.model, train.dim, train.num_classes, config.hidden_dim, seed=config.seed)
    lr = trainer.LrState(config.learning_rate, anneal_factor=config.anneal_factor,
                         anneal_threshold=config.anneal_threshold)
    report = MetricsReport()
    selections, rounds = [], []
    n = len(train)
    all_ids, unit = np.arange(n), np.ones(n)
    partitioning = batches = None
    if config.strategy == "pgm":
        partitioning = partition(n, config.partitions, config.partition_strategy, config.seed)
        batches = partition_batches(partitioning, config.batch_size, config.seed)
    kernels.warmup()
    executor = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    current = None
    try:
        for t in range(1, config.total_epochs + 1):
            sel_sec = 0.0
            if config.strategy == "full" or t <= config.warm_start_epochs:
                ids, wts = all_ids, unit
            else:
                reselect = current is None or (_is_round(t, config) and (
                    config.strategy == "pgm"
                    or (config.strategy == "random" and config.baseline_reselect)))
                if reselect:
                    t0 = time.perf_counter()
                    if config.strategy == "pgm":
                        current = select_round(params, train, partitioning, val, config,
                                               batches=batches, round_=t, executor=executor)
                    else:
                        current = baseline_select(train, config.budget_fraction, config.strategy,
                                                  config.seed, round_=t)
                    sel_sec = time.perf_counter() - t0
                    selections.append(current)
                    rounds.append(t)
                    if on_selection is not None:
                        on_selection(t, current)
                ids, wts = current.instance_ids, current.instance_weights
            t0 = time.perf_counter()
            try:
                params = trainer.weighted_epoch(params, train.X, train.y, ids, wts,
                                                config.batch_size, lr.current_lr, config.seed, epoch=t)
            except trainer.TrainingError as exc:
                raise trainer.TrainingError(f"epoch {t}: {exc}") from None
            train_sec = time.perf_counter() - t0
            train_loss, _ = trainer.evaluate(params, train)
            val_loss, _ = trainer.evaluate(params, val)
            _, test_err = trainer.evaluate(params, test)
            if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
                raise trainer.TrainingError(f"epoch {t}: non-finite loss")
            report.add_row(epoch=t, train_loss=train_loss, val_loss=val_loss, test_err=test_err,
                           subset_size=int(np.count_nonzero(wts > 0)), selection_sec=sel_sec,
                           training_sec=train_sec, lr=lr.current_lr)
            lr = trainer.maybe_anneal(lr, val_loss)
    finally:
        if executor is not None:
            executor.shutdown()
    report.selections = selections
    report.summary = _summary(config, report, selections, rounds, train)
    return params, report


def _summary(config, report, selections, rounds, train):
    sel_sec = float(report.column("selection_sec").sum())
    train_sec = float(report.column("training_sec").sum())
    ois = [overlap_index(a, b) for a, b in zip(selections, selections[1:])]
    nois = [noise_overlap_index(s, train) for s in selections] if train.noisy.any() else []
    margins = [s.bound_margin for s in selections if s.bound_margin is not None]
    last = report.rows[-1]
    return {
        "strategy": config.strategy,
        "budget_fraction": config.budget_fraction,
        "seed": config.seed,
        "workers": config.workers,
        "backend": backend(),
        "final_test_err": last["test_err"],
        "final_val_loss": last["val_loss"],
        "final_train_loss": last["train_loss"],
        "final_lr": last["lr"],
        "selection_sec": sel_sec,
        "training_sec": train_sec,
        "wall_sec": sel_sec + train_sec,
        "selection_rounds": rounds,
        "subset_instances": [int(len(s)) for s in selections],
        "subset_batches": [len(s.batch_ids) for s in selections],
        "total_batches": selections[0].total_batches if selections else 0,
        "overlap_indices": ois,
        "mean_overlap_index": float(np.mean(ois)) if ois else None,
        "noise_overlap_indices": nois,
        "mean_noise_overlap_index": float(np.mean(nois)) if nois else None,
        "bound_margins": margins,
        "min_bound_margin": min(margins) if margins else None,
        "relative_test_error": None,
        "speedup": None,
        "energy_ratio": None,
    }
