"""Command-line entry point: ``dualball {train,eval,check,bench,gen-data}``."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import hypmath as hm
from .config import load_config
from .errors import ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_CHECK = 0, 2, 3, 4
PROTOCOLS = ("fixed", "eta", "clean", "corrupt")


def _overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def cmd_train(args) -> int:
    from .train import run_train

    cfg = load_config(args.config, _overrides(args.set))
    seeds = [args.seed] if args.seed is not None else list(cfg.seeds)
    out = Path(args.out)
    for seed in seeds:
        run_dir = out if len(seeds) == 1 else out / f"seed{seed}"
        tr = run_train(cfg, seed, run_dir, args.max_steps, args.resume)
        last = tr.metrics[-1] if tr.metrics else {}
        print(f"seed {seed}: {tr.step} steps, train_acc={last.get('train_acc', float('nan')):.4f} -> {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import run_eval

    run_dir = Path(args.run)
    if not (run_dir / "checkpoint.pkl").is_file():
        raise DataError(f"no checkpoint in {run_dir}")
    rows = run_eval(run_dir, args.protocol, args.out)
    for r in rows:
        print("  ".join(f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}" for k, v in r.items()))
    return EXIT_OK


def cmd_check(args) -> int:
    from .checks import run_checks

    clip_eps = args.corrupt_clip_margin if args.corrupt_clip_margin is not None else hm.EPS_BND
    results = run_checks(seed=args.seed or 0, clip_eps=clip_eps, gradients=not args.quick)
    return EXIT_OK if all(r.passed for r in results) else EXIT_CHECK


def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed or 0)
    n = args.points
    v = rng.standard_normal((n, 8))
    x = hm.exp0(v, 1.0)
    y = hm.exp0(rng.standard_normal((n, 8)), 1.0)
    kernels = {
        "exp0": lambda: hm.exp0(v, 1.0),
        "log0": lambda: hm.log0(x, 1.0),
        "mobius_add": lambda: hm.mobius_add(x, y, 1.0),
        "poincare_dist": lambda: hm.poincare_dist(x, y, 1.0),
        "exp_at": lambda: hm.exp_at(x, 0.1 * v, 1.0),
        "log_at": lambda: hm.log_at(x, y, 1.0),
        "isometric_rescale": lambda: hm.isometric_rescale(x, 1.0, 0.8),
    }
    for name, fn in kernels.items():
        best = min(_timed(fn) for _ in range(args.repeat))
        print(f"{name:<18} {best * 1e3:9.3f} ms  ({best / n * 1e9:7.1f} ns/point, n={n})")
    return EXIT_OK


def _timed(fn) -> float:
    t0 = time.perf_counter()
    fn()
    return time.perf_counter() - t0


def cmd_gen_data(args) -> int:
    from .data import write_records
    from .train import load_dataset

    cfg = load_config(args.config, _overrides(args.set))
    if args.seed is not None:
        cfg.data_seed = args.seed
    data = load_dataset(cfg)
    write_records(data, args.out)
    print(f"wrote {len(data)} records to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dualball", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one run per seed")
    t.add_argument("--config", help="key=value config file (defaults when omitted)")
    t.add_argument("--seed", type=int, help="single seed; default trains every seed in the config")
    t.add_argument("--out", default="runs/default", help="run directory")
    t.add_argument("--max-steps", type=int, help="stop after this many optimizer steps")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    t.add_argument("--set", nargs="*", metavar="KEY=VALUE", help="config overrides")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained run")
    e.add_argument("run", help="run directory holding checkpoint.pkl")
    e.add_argument("--protocol", choices=PROTOCOLS, default="clean")
    e.add_argument("--out", help="CSV path (default: <run>/eval_<protocol>.csv)")
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("check", help="run the invariant suite")
    c.add_argument("--seed", type=int)
    c.add_argument("--quick", action="store_true", help="skip the gradient checks")
    c.add_argument("--corrupt-clip-margin", type=float, metavar="EPS",
                   help="use this clip margin in the boundary check (negative test)")
    c.set_defaults(func=cmd_check)

    b = sub.add_parser("bench", help="time the geometry kernels")
    b.add_argument("--seed", type=int)
    b.add_argument("--points", type=int, default=100_000)
    b.add_argument("--repeat", type=int, default=5)
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen-data", help="write the synthetic dataset as JSON lines")
    g.add_argument("--config")
    g.add_argument("--seed", type=int, help="data seed (overrides data_seed)")
    g.add_argument("--out", default="synthetic.jsonl")
    g.add_argument("--set", nargs="*", metavar="KEY=VALUE")
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
