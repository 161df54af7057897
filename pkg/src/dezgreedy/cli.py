"""Command line entry point: ``dezgreedy run|sweep|validate``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .runner import load_config, run, sweep, validate


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="dezgreedy")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)

    p_run = sub.add_parser("run", help="train every seed of a config")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, action="append", help="run only these seeds (repeatable)")
    p_run.add_argument("--out", help="output directory (default $DEZGREEDY_OUT or ./runs)")
    p_run.add_argument("--algorithm", help="override the config's algorithm")
    p_run.add_argument("--episodes", type=int, help="override the episode count")
    p_run.add_argument("--workers", type=int, default=1)
    p_run.add_argument("--stop-after", type=int, help="end each seed after this many episodes (smoke test)")

    p_sw = sub.add_parser("sweep", help="run a config over one axis")
    p_sw.add_argument("--config", required=True)
    p_sw.add_argument("--axis", required=True, choices=["z_max", "beta", "grid", "grid_dim"])
    p_sw.add_argument("--values", required=True, nargs="+")
    p_sw.add_argument("--paired-z-max", nargs="+", type=int,
                      help="z_max to use at each value (e.g. grid sweep 10 25 50 100 with 5 5 10 20)")
    p_sw.add_argument("--out")
    p_sw.add_argument("--algorithm")
    p_sw.add_argument("--workers", type=int, default=1)

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("--config", required=True)

    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if getattr(args, "algorithm", None):
            cfg = cfg.replace(algorithm=args.algorithm)
        if getattr(args, "episodes", None):
            cfg = cfg.replace(episodes=args.episodes)
        if args.cmd == "validate":
            problems = validate(cfg)
            for p in problems:
                print(f"violation: {p}")
            if not problems:
                print("ok")
            return 1 if problems else 0
        if args.cmd == "run":
            manifest = run(cfg, args.out, seeds=args.seed, workers=args.workers, stop_after=args.stop_after)
            print(manifest.path)
            return 0
        manifests = sweep(cfg, args.axis, args.values, args.out, args.paired_z_max, args.workers)
        for m in manifests:
            print(m.path)
        return 0
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
