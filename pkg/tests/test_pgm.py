from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from pgmatch import model, trainer
from pgmatch.data import generate_synthetic, make_dataset, partition
from pgmatch.omp import GMProblem, gradient_match
from pgmatch.pgm import (ConfigError, TrainConfig, _is_round, baseline_select, candidate_gradients,
                         make_batches, partition_batches, partition_budgets, run_training, select_round)

CFG = TrainConfig(total_epochs=6, selection_interval=2, warm_start_epochs=1, partitions=3,
                  budget_fraction=0.3, batch_size=8, learning_rate=0.05)


@pytest.fixture(scope="module")
def state():
    train = generate_synthetic(400, 5, 4, 2.0, seed=21, centers_seed=2)
    val = generate_synthetic(80, 5, 4, 2.0, seed=22, centers_seed=2)
    params = model.init_params("mlp1", 5, 4, 6, seed=3, scale=0.5)
    return params, train, val


def test_make_batches_sizes():
    assert sorted(len(b) for b in make_batches(np.arange(10), 4, 0)) == [2, 4, 4]


def test_make_batches_deterministic_and_cover():
    a, b = make_batches(np.arange(30), 7, 5), make_batches(np.arange(30), 7, 5)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    np.testing.assert_array_equal(np.sort(np.concatenate(a)), np.arange(30))


def test_make_batches_single_batch():
    out = make_batches(np.arange(5), 9, 0)
    assert len(out) == 1 and sorted(out[0]) == list(range(5))


@pytest.mark.parametrize("nb,f,expected", [([10, 10, 10], 0.3, [3, 3, 3]), ([4, 4, 3], 0.5, [2, 2, 1]),
                                           ([5, 5], 0.05, [1, 1]), ([2, 3], 1.0, [2, 3]),
                                           ([1, 9, 9], 0.6, [1, 7, 3])])
def test_partition_budgets(nb, f, expected):
    assert partition_budgets(nb, f) == expected


def test_d1_equals_pooled_matching(state):
    params, train, val = state
    cfg = CFG.replace(partitions=1)
    parts = partition(len(train), 1)
    batches = partition_batches(parts, cfg.batch_size, cfg.seed)
    sel = select_round(params, train, parts, val, cfg, batches=batches)
    G = candidate_gradients(params, train, batches[0])
    k = int(np.floor(cfg.budget_fraction * len(G)))
    res = gradient_match(GMProblem(G.mean(axis=0), G, k, cfg.lam, cfg.epsilon))
    assert [j for _, j in sel.batch_ids] == res.selected
    assert np.array([w for w in sel.instance_weights]).tobytes() == np.concatenate(
        [np.full(len(batches[0][j]), w) for j, w in zip(res.selected, res.weights)]).tobytes()
    assert sel.per_partition_objectives == [res.objective]
    assert sel.bound_margin == 0.0


def test_full_budget_selects_everything(state):
    params, train, val = state
    cfg = CFG.replace(budget_fraction=1.0, epsilon=0.0)
    sel = select_round(params, train, partition(len(train), 3, "shuffled", 0), val, cfg)
    np.testing.assert_array_equal(np.sort(sel.instance_ids), np.arange(len(train)))
    assert len(sel.batch_ids) == sel.total_batches


@pytest.mark.parametrize("val_flag", [False, True])
def test_worker_count_independent(state, val_flag):
    params, train, val = state
    cfg = CFG.replace(partitions=4, val_flag=val_flag)
    parts = partition(len(train), 4, "shuffled", 0)
    ref = select_round(params, train, parts, val, cfg)
    for g in (2, 4):
        with ThreadPoolExecutor(g) as ex:
            sel = select_round(params, train, parts, val, cfg, executor=ex)
        assert sel.batch_ids == ref.batch_ids
        assert sel.instance_ids.tobytes() == ref.instance_ids.tobytes()
        assert sel.instance_weights.tobytes() == ref.instance_weights.tobytes()


def test_selection_invariants(state):
    params, train, val = state
    for f in (0.1, 0.2, 0.5):
        cfg = CFG.replace(budget_fraction=f, partitions=4)
        parts = partition(len(train), 4, "shuffled", 1)
        batches = partition_batches(parts, cfg.batch_size, cfg.seed)
        sel = select_round(params, train, parts, val, cfg, batches=batches)
        assert len(np.unique(sel.instance_ids)) == len(sel.instance_ids)
        assert len(sel.batch_ids) <= f * sel.total_batches + 4
        for p, j in sel.batch_ids:
            mask = np.isin(sel.instance_ids, batches[p][j])
            assert mask.sum() == len(batches[p][j])
            assert len(np.unique(sel.instance_weights[mask])) == 1
            assert np.all(sel.instance_partition[mask] == p)
        assert sel.bound_margin >= -1e-9


def test_subset_size_monotone_in_budget(state):
    params, train, val = state
    parts = partition(len(train), 3, "shuffled", 0)
    sizes = [len(select_round(params, train, parts, val, CFG.replace(budget_fraction=f, epsilon=0.0)))
             for f in (0.05, 0.1, 0.2, 0.3, 0.5, 0.8, 1.0)]
    assert sizes == sorted(sizes)


def test_baseline_full_budget():
    ds = generate_synthetic(30, 2, 2, 1.0, seed=0)
    for s in ("random", "large_only", "large_small"):
        np.testing.assert_array_equal(baseline_select(ds, 1.0, s, 0).instance_ids, np.arange(30))


def test_large_only_and_large_small():
    ds = make_dataset(np.zeros((10, 1)), [0, 1] * 5, 2, cost=np.arange(10.0))
    np.testing.assert_array_equal(baseline_select(ds, 0.3, "large_only", 0).instance_ids, [7, 8, 9])
    np.testing.assert_array_equal(baseline_select(ds, 0.4, "large_small", 0).instance_ids, [0, 1, 8, 9])


def test_random_reproducible():
    ds = generate_synthetic(100, 2, 2, 1.0, seed=0)
    a, b = baseline_select(ds, 0.3, "random", 4), baseline_select(ds, 0.3, "random", 4)
    np.testing.assert_array_equal(a.instance_ids, b.instance_ids)
    assert len(a) == 30 and np.all(a.instance_weights == 1.0) and np.all(a.instance_partition == -1)


def test_baseline_bad_inputs():
    ds = generate_synthetic(10, 2, 2, 1.0, seed=0)
    with pytest.raises(ConfigError):
        baseline_select(ds, 0.0, "random", 0)
    with pytest.raises(ConfigError):
        baseline_select(ds, 0.5, "craig", 0)


def test_schedule_offset_after_warm_start():
    cfg = TrainConfig(total_epochs=20, selection_interval=5, warm_start_epochs=2)
    assert [t for t in range(3, 21) if _is_round(t, cfg)] == [3, 8, 13, 18]


@pytest.mark.parametrize("kw", [dict(total_epochs=0), dict(selection_interval=0),
                                dict(warm_start_epochs=30), dict(budget_fraction=0.0),
                                dict(workers=0), dict(strategy="glister"), dict(partitions=0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw).validate()


def test_full_strategy_is_plain_sgd(small_splits):
    train, val, test = small_splits
    cfg = CFG.replace(strategy="full")
    params, rep = run_training(train, val, test, cfg)
    p = model.init_params(cfg.model, train.dim, train.num_classes, cfg.hidden_dim, seed=cfg.seed)
    lr = trainer.LrState(cfg.learning_rate)
    for t in range(1, cfg.total_epochs + 1):
        p = trainer.sgd_epoch(p, train.X, train.y, np.arange(len(train)), cfg.batch_size,
                              lr.current_lr, cfg.seed, epoch=t)
        lr = trainer.maybe_anneal(lr, trainer.evaluate(p, val)[0])
    assert p.flat().tobytes() == params.flat().tobytes()
    assert rep.selections == [] and np.all(rep.column("selection_sec") == 0)


def test_pgm_run_schedule_and_report(small_splits):
    train, val, test = small_splits
    _, rep = run_training(train, val, test, CFG)
    assert rep.summary["selection_rounds"] == [2, 4, 6]
    assert list(rep.column("epoch")) == list(range(1, 7))
    assert rep.column("subset_size")[0] == len(train)
    assert np.all(rep.column("subset_size")[1:] < len(train))
    assert min(rep.summary["bound_margins"]) >= -1e-9
    assert np.all(np.diff(rep.column("lr")) <= 0)


def test_baselines_select_once_without_reselect(small_splits):
    train, val, test = small_splits
    for s in ("large_only", "large_small"):
        _, rep = run_training(train, val, test, CFG.replace(strategy=s))
        assert rep.summary["selection_rounds"] == [2]
    _, rep = run_training(train, val, test, CFG.replace(strategy="random", baseline_reselect=False))
    assert rep.summary["selection_rounds"] == [2]
    _, rep = run_training(train, val, test, CFG.replace(strategy="random"))
    assert rep.summary["selection_rounds"] == [2, 4, 6]


def test_random_subset_size_each_epoch(small_splits):
    train, val, test = small_splits
    _, rep = run_training(train, val, test, CFG.replace(strategy="random"))
    assert np.all(rep.column("subset_size")[1:] == round(0.3 * len(train)))


def test_pgm_full_budget_tracks_full_training():
    gaps = []
    for seed in range(3):
        mk = lambda n, k: generate_synthetic(n, 6, 4, 2.5, seed=seed * 10 + k, centers_seed=seed)
        data = (mk(600, 1), mk(200, 2), mk(1000, 3))
        cfg = TrainConfig(total_epochs=8, warm_start_epochs=1, selection_interval=3, partitions=3,
                          batch_size=16, seed=seed, learning_rate=0.05)
        _, full = run_training(*data, cfg.replace(strategy="full"))
        _, pgm = run_training(*data, cfg.replace(budget_fraction=1.0, epsilon=0.0))
        gaps.append(pgm.summary["final_test_err"] - full.summary["final_test_err"])
    # binomial noise of a 1000-example test error near 0.1 is about 0.01
    assert abs(np.mean(gaps)) < 0.03


def test_pgm_run_deterministic(small_splits):
    train, val, test = small_splits
    a, ra = run_training(train, val, test, CFG)
    b, rb = run_training(train, val, test, CFG.replace(workers=3))
    assert a.flat().tobytes() == b.flat().tobytes()
    for x, y in zip(ra.selections, rb.selections):
        assert x.instance_ids.tobytes() == y.instance_ids.tobytes()
