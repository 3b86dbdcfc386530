"""Command-line entry point: ``pgmatch {gen-data,train,compare,verify-bound}``.

Exit codes: 0 success, 1 I/O failure, 2 invalid flags or config,
3 training divergence, 4 partition-bound violation.

Outputs of ``train`` (in ``output_dir``):

* ``metrics.json``  run summary (final error, timings, overlap indices, bound margins)
* ``curves.csv``    ``epoch,train_loss,val_loss,test_err,subset_size,selection_sec,training_sec,lr``
* ``selection_round_<t>.csv``  ``instance_id,weight,partition`` for each selection
  (partition is -1 for the model-independent baselines)
* ``final_params.npy``  flat parameter vector
"""
import argparse
import json
import sys

from .config import load_config
from .data import DatasetError, generate_synthetic, inject_noise, save_csv
from .experiments import run_grid, train_and_write, verify_bound, write_grid
from .metrics import BOUND_TOL
from .pgm import STRATEGIES, ConfigError
from .trainer import TrainingError

EXIT_IO, EXIT_CONFIG, EXIT_DIVERGED, EXIT_BOUND = 1, 2, 3, 4


class UsageError(Exception):
    pass


def _fail(code, msg):
    print(f"error: {msg}", file=sys.stderr)
    return code


def _emit(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _load(path):
    try:
        return load_config(path)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc.strerror}") from None


def cmd_gen_data(args):
    if args.classes < 2:
        raise UsageError("classes must be ≥ 2")
    if args.n < 1 or args.dim < 1:
        raise UsageError("n and dim must be positive")
    if not 0.0 <= args.noise_frac <= 1.0:
        raise UsageError("noise-frac must lie in [0, 1]")
    try:
        ds = generate_synthetic(args.n, args.dim, args.classes, args.separation, seed=args.seed,
                                centers_seed=args.centers_seed)
        ds = inject_noise(ds, args.noise_frac, args.noise_mode, seed=args.seed, sigma=args.noise_sigma)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    save_csv(ds, args.out)
    _emit(ds.summary())
    return 0


def _overrides(cfg, args):
    kw = {}
    for flag, key in (("strategy", "strategy"), ("budget", "budget_fraction"),
                      ("seed", "seed"), ("workers", "workers")):
        value = getattr(args, flag, None)
        if value is not None:
            kw[key] = value
    return cfg.replace(**kw) if kw else cfg


def cmd_train(args):
    run_cfg = _load(args.config)
    train_cfg = _overrides(run_cfg.train, args)
    out_dir = args.out or run_cfg.output_dir
    _, report = train_and_write(run_cfg, train_cfg, out_dir)
    _emit(report.summary)
    return 0


def _csv_list(text, conv, name):
    try:
        items = [conv(s.strip()) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"cannot parse --{name} {text!r}") from None
    if not items:
        raise UsageError(f"--{name} is empty")
    return items


def cmd_compare(args):
    run_cfg = _load(args.config)
    if args.workers is not None:
        run_cfg.train = run_cfg.train.replace(workers=args.workers)
    strategies = _csv_list(args.strategies, str, "strategies")
    bad = [s for s in strategies if s not in STRATEGIES]
    if bad:
        raise UsageError(f"unknown strategies {bad}")
    budgets = _csv_list(args.budgets, float, "budgets")
    if any(not 0 < f <= 1 for f in budgets):
        raise UsageError("budgets must lie in (0, 1]")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    log = (lambda r: print(json.dumps(r, sort_keys=True), file=sys.stderr)) if args.verbose else None
    result = run_grid(run_cfg, strategies, budgets, args.seeds, log=log)
    out_dir = args.out or run_cfg.output_dir
    write_grid(result, out_dir)
    _emit(result["cells"])
    return 0


def cmd_verify_bound(args):
    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    base = _load(args.config).train if args.config else None
    report = verify_bound(args.trials, seed=args.seed, base=base)
    _emit(report)
    if report["violations"] or report["min_margin"] < -BOUND_TOL:
        first = report["violations"][0]
        print(f"bound violated: seed={first['seed']} D={first['D']} margin={first['margin']:.3e}",
              file=sys.stderr)
        return EXIT_BOUND
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="pgmatch", description="Partitioned gradient matching subset selection.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic Gaussian-blob dataset as CSV")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--dim", type=int, required=True)
    g.add_argument("--classes", type=int, required=True)
    g.add_argument("--separation", type=float, default=3.5)
    g.add_argument("--noise-frac", type=float, default=0.0)
    g.add_argument("--noise-mode", choices=("label_flip", "feature_gauss"), default="label_flip")
    g.add_argument("--noise-sigma", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--centers-seed", type=int, default=None,
                   help="share class centers between files (defaults to --seed)")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one training job from a config file")
    t.add_argument("--config", required=True)
    t.add_argument("--strategy", choices=STRATEGIES)
    t.add_argument("--budget", type=float)
    t.add_argument("--seed", type=int)
    t.add_argument("--workers", type=int)
    t.add_argument("--out", help="output directory (overrides output_dir)")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compare", help="strategies x budgets x seeds grid")
    c.add_argument("--config", required=True)
    c.add_argument("--strategies", default="full,random,pgm,large_only,large_small")
    c.add_argument("--budgets", default="0.1,0.2,0.3")
    c.add_argument("--seeds", type=int, default=5)
    c.add_argument("--workers", type=int)
    c.add_argument("--out")
    c.add_argument("-v", "--verbose", action="store_true")
    c.set_defaults(func=cmd_compare)

    v = sub.add_parser("verify-bound", help="check the partition bound on randomized rounds")
    v.add_argument("--config")
    v.add_argument("--trials", type=int, default=200)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify_bound)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        return _fail(EXIT_CONFIG, str(exc))
    except TrainingError as exc:
        return _fail(EXIT_DIVERGED, f"training diverged: {exc}")
    except OSError as exc:
        return _fail(EXIT_IO, f"{exc.strerror}: {exc.filename}")


if __name__ == "__main__":
    sys.exit(main())
