"""Acceptance criteria, one test per criterion.

Every test prints a single ``[criterion N] PASS|FAIL ...`` line (visible
without ``-s``) and then asserts at the stated tolerance.  Run with::

    pytest tests/test_acceptance.py -v
"""
import os
import time

import numpy as np
import pytest

from oracles import exhaustive_optimum, random_small_instance
from pgmatch import model, trainer
from pgmatch.config import load_config
from pgmatch.experiments import run_grid, train_and_write, verify_bound
from pgmatch.metrics import overlap_index, relative_test_error
from pgmatch.omp import GMProblem, gradient_match, solve_weights
from pgmatch.pgm import run_training

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BENCH = os.path.join(ROOT, "configs", "benchmark.cfg")
NOISY = os.path.join(ROOT, "configs", "noisy.cfg")
SEEDS = 5
BUDGETS = (0.1, 0.2, 0.3)

pytestmark = pytest.mark.slow


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {n}] {'PASS' if ok else 'FAIL'} {detail}")
    return emit


@pytest.fixture(scope="module")
def bench_grid():
    cfg = load_config(BENCH)
    t0 = time.perf_counter()
    result = run_grid(cfg, ["random", "pgm", "large_only", "large_small"], list(BUDGETS), SEEDS)
    return result, time.perf_counter() - t0


def _cell(result, strategy, f, metric):
    rows = [r for r in result["runs"] if r["strategy"] == strategy and r["budget"] == f]
    assert all(r["status"] == "ok" for r in rows), rows
    return np.array([r[metric] for r in rows], dtype=float)


def _fd_rel_err(p, X, y, h=1e-5):
    g = model.full_grad(p, X, y)
    vec = p.flat()
    worst = 0.0
    for i in range(vec.size):
        e = np.zeros_like(vec)
        e[i] = h
        fd = (model.nll_loss(p.with_flat(vec + e), X, y) - model.nll_loss(p.with_flat(vec - e), X, y)) / (2 * h)
        worst = max(worst, abs(g[i] - fd) / max(1.0, abs(g[i])))
    return worst


def test_criterion_1_gradients(report):
    t0 = time.perf_counter()
    worst = {}
    for kind in model.KINDS:
        for draw in range(20):
            rng = np.random.default_rng([1, draw])
            d, c, h, n = (int(rng.integers(2, 7)), int(rng.integers(2, 6)),
                          int(rng.integers(2, 6)), int(rng.integers(1, 9)))
            p = model.init_params(kind, d, c, h, seed=draw, scale=float(rng.uniform(0.2, 1.5)))
            X, y = 2 * rng.normal(size=(n, d)), rng.integers(0, c, n)
            worst[kind] = max(worst.get(kind, 0.0), _fd_rel_err(p, X, y))
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and dt < 10
    report(1, ok, f"max rel err {max(worst.values()):.2e} (< 1e-4), {dt:.1f}s (< 10s)")
    assert ok


def test_criterion_2_omp_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    ratios, steps, non_increasing = [], 0, 0
    for _ in range(50):
        G, t, k = random_small_instance(rng)
        pr = GMProblem(t, G, k, lam=0.0, epsilon=0.0)
        res = gradient_match(pr)
        opt = exhaustive_optimum(pr, solve_weights)
        if opt > 1e-12:
            ratios.append(res.objective / opt)
        else:
            ratios.append(1.0 if res.objective <= 1e-9 else np.inf)
        h = np.diff(res.history)
        steps += len(h)
        non_increasing += int(np.sum(h <= 0))
    orth_worst = 0.0
    for s in range(50):
        r2 = np.random.default_rng([7, s])
        dim = int(r2.integers(2, 7))
        k = int(r2.integers(1, min(3, dim) + 1))
        Q, _ = np.linalg.qr(r2.normal(size=(dim, dim)))
        G = (Q * r2.uniform(0.5, 2.0, dim)).T
        coef = np.zeros(dim)
        coef[r2.choice(dim, k, replace=False)] = r2.uniform(0.1, 2.0, k)
        orth_worst = max(orth_worst, gradient_match(GMProblem(coef @ G, G, k, 0.0, 0.0)).objective)
    dt = time.perf_counter() - t0
    ratios = np.asarray(ratios)
    worst = float(np.max(ratios))
    finite = ratios[np.isfinite(ratios)]
    above = int(np.sum(ratios > 1.5))
    exact_missed = int(np.sum(~np.isfinite(ratios)))
    ok = worst <= 1.5 and non_increasing == steps and orth_worst < 1e-9 and dt < 30
    report(2, ok, f"worst ratio {worst:.3f} (<= 1.5; {above}/50 above, {exact_missed} exact fits missed, "
                  f"worst finite {finite.max():.3f}), "
                  f"monotone {non_increasing}/{steps}, orthogonal max obj {orth_worst:.1e} (< 1e-9), {dt:.1f}s")
    assert non_increasing == steps and orth_worst < 1e-9 and dt < 30
    assert worst <= 1.5


def test_criterion_3_partition_bound(report):
    t0 = time.perf_counter()
    rep = verify_bound(200, seed=0, partitions=(2, 4, 8))
    dt = time.perf_counter() - t0
    ok = rep["min_margin"] >= -1e-9 and rep["d1_max_abs_margin"] < 1e-12 and dt < 60
    report(3, ok, f"min margin {rep['min_margin']:.3e} (>= -1e-9), D=1 max |margin| "
                  f"{rep['d1_max_abs_margin']:.1e}, {dt:.1f}s (< 60s)")
    assert ok


def test_criterion_4_parallel_determinism(report, tmp_path):
    cfg = load_config(BENCH)
    digests = []
    for g in (1, 2, 4):
        out = tmp_path / f"w{g}"
        train_and_write(cfg, cfg.train.replace(seed=42, workers=g, strategy="pgm"), str(out))
        files = sorted(p.name for p in out.glob("selection_round_*.csv")) + ["final_params.npy"]
        digests.append({n: (out / n).read_bytes() for n in files})
    ok = len(digests[0]) > 1 and digests[0] == digests[1] == digests[2]
    report(4, ok, f"{len(digests[0]) - 1} selection files + final params identical across workers 1/2/4")
    assert ok


def test_criterion_5_trends(report, bench_grid):
    result, dt = bench_grid
    lines, ok_a = [], True
    for f in BUDGETS:
        pgm = _cell(result, "pgm", f, "relative_test_error").mean()
        rnd = _cell(result, "random", f, "relative_test_error").mean()
        ok_a &= pgm <= rnd
        lines.append(f"f={f}: pgm {pgm:+.4f} vs random {rnd:+.4f}")
    sp = _cell(result, "pgm", 0.3, "speedup").mean()
    ok_b = sp >= 2.0
    ok_c, c_lines = True, []
    for f in BUDGETS:
        r = _cell(result, "random", f, "test_err").mean()
        lo = _cell(result, "large_only", f, "test_err").mean()
        ls = _cell(result, "large_small", f, "test_err").mean()
        ok_c &= r < lo and r < ls
        c_lines.append(f"f={f}: random {r:.4f} large_only {lo:.4f} large_small {ls:.4f}")
    ok_t = dt < 15 * 60
    report("5a", ok_a, "mean relative test error, " + "; ".join(lines))
    report("5b", ok_b, f"pgm speedup at f=0.3 {sp:.2f} (>= 2.0)")
    report("5c", ok_c, "; ".join(c_lines))
    report("5 runtime", ok_t, f"grid {dt:.0f}s (< 900s)")
    assert ok_a and ok_b and ok_c and ok_t


def test_criterion_5_bound_on_every_round(report):
    cfg = load_config(BENCH)
    data = cfg.load_datasets(0)
    _, rep = run_training(*data, cfg.train.replace(strategy="pgm", budget_fraction=0.3))
    m = min(rep.summary["bound_margins"])
    report("5 bound", m >= -1e-9, f"min bound margin over {len(rep.summary['bound_margins'])} rounds {m:.3e}")
    assert m >= -1e-9


def test_criterion_6_noise(report):
    cfg = load_config(NOISY)
    errs = {"pgm": [], "random": []}
    nois = {"pgm": [], "random": []}
    margins = []
    sizes = []
    for s in range(SEEDS):
        data = cfg.load_datasets(data_seed_offset=s)
        for strat in ("pgm", "random"):
            _, rep = run_training(*data, cfg.train.replace(strategy=strat, budget_fraction=0.3,
                                                           seed=cfg.train.seed + s))
            errs[strat].append(rep.summary["final_test_err"])
            nois[strat] += rep.summary["noise_overlap_indices"]
            if strat == "pgm":
                margins += rep.summary["bound_margins"]
            else:
                sizes += rep.summary["subset_instances"]
                train = data[0]
    pgm, rnd = np.mean(errs["pgm"]), np.mean(errs["random"])
    N, K = len(train), int(train.noisy.sum())
    n = sizes[0]
    # each random round draws n of N without replacement; NOI = hits / K
    var = n * (K / N) * (1 - K / N) * (N - n) / (N - 1) / K ** 2
    sigma = np.sqrt(var / len(nois["random"]))
    noi_r = float(np.mean(nois["random"]))
    ok_err = pgm <= rnd + 0.005
    ok_noi = abs(noi_r - n / N) <= 3 * sigma and len(nois["pgm"]) > 0
    ok_bound = min(margins) >= -1e-9
    report(6, ok_err and ok_noi and ok_bound,
           f"test err pgm {pgm:.4f} vs random {rnd:.4f} (+0.005 allowed); NOI pgm {np.mean(nois['pgm']):.4f}, "
           f"random {noi_r:.4f} vs {n / N:.3f} +/- {3 * sigma:.4f}; min bound margin {min(margins):.2e}")
    assert ok_err and ok_noi and ok_bound


def test_criterion_7_weighted_sgd(report, small_splits):
    train = small_splits[0]
    ids = np.arange(len(train))
    unit_ok, scale_dev = True, 0.0
    for kind in model.KINDS:
        p = model.init_params(kind, train.dim, train.num_classes, 5, seed=0, scale=0.3)
        a = b = c = d = p
        rng = np.random.default_rng(0)
        w = rng.uniform(0.2, 2.0, len(ids))
        for e in range(3):
            a = trainer.weighted_epoch(a, train.X, train.y, ids, np.ones(len(ids)), 16, 0.1, 5, e)
            b = trainer.sgd_epoch(b, train.X, train.y, ids, 16, 0.1, 5, e)
            c = trainer.weighted_epoch(c, train.X, train.y, ids, w, 16, 0.1, 5, e)
            d = trainer.weighted_epoch(d, train.X, train.y, ids, 2 * w, 16, 0.1, 5, e)
        unit_ok &= a.flat().tobytes() == b.flat().tobytes()
        scale_dev = max(scale_dev, float(np.max(np.abs(c.flat() - d.flat()))))
    lr_ok = True
    for k in range(0, 12):
        s = trainer.maybe_anneal(trainer.LrState(0.1), 1.0)
        for _ in range(k):
            s = trainer.maybe_anneal(s, 1.0)
        expect = 0.1
        for _ in range(k):
            expect *= 0.8
        lr_ok &= s.current_lr == expect
    ok = unit_ok and scale_dev < 1e-12 and lr_ok
    report(7, ok, f"unit weights bitwise={unit_ok}, scaling max dev {scale_dev:.1e} (< 1e-12), newbob exact={lr_ok}")
    assert ok


def test_criterion_8_metrics(report, bench_grid):
    rel = relative_test_error(4.58, 4.21)
    ok_rel = abs(rel - 0.0879) <= 1e-4
    result, _ = bench_grid
    rng = np.random.default_rng(8)
    bounded = all(0.0 <= overlap_index(rng.choice(100, rng.integers(1, 100), replace=False),
                                       rng.choice(100, rng.integers(1, 100), replace=False)) <= 1.0
                  for _ in range(500))
    ois_all = [r["overlap_index"] for r in result["runs"] if r.get("overlap_index") is not None]
    bounded &= all(0.0 <= v <= 1.0 for v in ois_all)
    # random OI: per-round values of every seed at f = 0.3
    cfg = load_config(BENCH)
    per_round, N = [], None
    for s in range(SEEDS):
        train, val, test = cfg.load_datasets(s)
        N = len(train)
        _, rep = run_training(train, val, test, cfg.train.replace(strategy="random", budget_fraction=0.3,
                                                                  seed=cfg.train.seed + s))
        per_round += rep.summary["overlap_indices"]
    n = int(np.floor(0.3 * N + 0.5))
    var = (n / N) * (1 - n / N) * (N - n) / (N - 1) / n
    sigma = np.sqrt(var / len(per_round))
    oi = float(np.mean(per_round))
    ok_oi = abs(oi - 0.3) <= 3 * sigma
    ok = ok_rel and bounded and ok_oi
    report(8, ok, f"relative_test_error(4.58, 4.21) = {rel:.4f}; OI bounded={bounded}; "
                  f"random OI {oi:.4f} vs 0.3 +/- {3 * sigma:.4f} over {len(per_round)} rounds")
    assert ok
