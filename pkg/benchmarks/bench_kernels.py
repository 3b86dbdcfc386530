"""Compare the numba kernels against their pure-numpy fallbacks.

Kernel timings call both implementations directly in one process.  The
end-to-end timing runs one PGM selection round in two subprocesses, one of
them with ``PGMATCH_DISABLE_NUMBA=1``.

    python benchmarks/bench_kernels.py [--repeat 20] [--json out.json]
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from pgmatch import _accel, kernels

E2E = """
import time, json
from pgmatch import kernels, model
from pgmatch.data import generate_synthetic, partition
from pgmatch.pgm import TrainConfig, partition_batches, select_round
kernels.warmup()
ds = generate_synthetic(5000, 20, 10, 3.5, seed=0)
cfg = TrainConfig()
parts = partition(len(ds), cfg.partitions, "shuffled", 0)
batches = partition_batches(parts, cfg.batch_size, 0)
p = model.init_params("softmax_linear", 20, 10, seed=0, scale=0.1)
t0 = time.perf_counter()
for _ in range({repeat}):
    sel = select_round(p, ds, parts, None, cfg, batches=batches)
print(json.dumps({{"backend": kernels.USE_NUMBA and "numba" or "numpy",
                  "sec_per_round": (time.perf_counter() - t0) / {repeat}}}))
"""


def _best(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(rng):
    n, c, h = 5000, 10, 20
    delta, feats = rng.normal(size=(n, c)), rng.normal(size=(n, h))
    order = rng.permutation(n).astype(np.int64)
    offsets = np.arange(0, n + 1, 32, dtype=np.int64)
    if offsets[-1] != n:
        offsets = np.append(offsets, n)
    G = rng.normal(size=(23, c * h + c))
    t = G.mean(axis=0)
    A = np.ascontiguousarray(G[:7].T)
    return {
        "batch_grads": (lambda: kernels._batch_grads_nb(delta, feats, order, offsets),
                        lambda: kernels._batch_grads_np(delta, feats, order, offsets)),
        "solve_weights(7 cols)": (lambda: kernels._solve_weights_nb(A, t, 0.01),
                                  lambda: kernels._solve_weights_np(A, t, 0.01)),
        "omp(23 cand, k=7)": (lambda: kernels._omp_nb(G, t, 7, 0.01, 1e-6),
                              lambda: kernels._omp_np(G, t, 7, 0.01, 1e-6)),
    }


def end_to_end(repeat):
    out = {}
    for name, extra in (("numba", {}), ("numpy", {"PGMATCH_DISABLE_NUMBA": "1"})):
        env = dict(os.environ, **extra)
        if name == "numba":
            env.pop("PGMATCH_DISABLE_NUMBA", None)
        proc = subprocess.run([sys.executable, "-c", E2E.format(repeat=repeat)], env=env,
                              capture_output=True, text=True, check=True)
        out[name] = json.loads(proc.stdout)["sec_per_round"]
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", help="write results here")
    args = ap.parse_args(argv)
    if not _accel.HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rng = np.random.default_rng(0)
    rows = []
    for name, (nb, py) in kernel_cases(rng).items():
        nb()  # compile or load from cache
        t_nb, t_np = _best(nb, args.repeat), _best(py, args.repeat)
        rows.append({"kernel": name, "numba_ms": 1e3 * t_nb, "numpy_ms": 1e3 * t_np, "speedup": t_np / t_nb})
    e2e = end_to_end(max(1, args.repeat // 4))
    rows.append({"kernel": "select_round (end to end)", "numba_ms": 1e3 * e2e["numba"],
                 "numpy_ms": 1e3 * e2e["numpy"], "speedup": e2e["numpy"] / e2e["numba"]})

    print(f"{'kernel':28s} {'numba ms':>10s} {'numpy ms':>10s} {'x':>7s}")
    for r in rows:
        print(f"{r['kernel']:28s} {r['numba_ms']:10.3f} {r['numpy_ms']:10.3f} {r['speedup']:7.1f}")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
