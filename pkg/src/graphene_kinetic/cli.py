"""Command-line entry point: ``graphene-kinetic <experiment> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import lab, selftest

log = logging.getLogger("graphene_kinetic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphene-kinetic",
                                     description="Kinetic surface-hopping experiments for "
                                                 "graphene with a quantum reference.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in lab.EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--eps", type=float, nargs="+", help="semiclassical parameter(s)")
        p.add_argument("--particles", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--no-jumps", action="store_true", help="hop without the position jump")
        p.add_argument("--no-transitions", action="store_true", help="disable band transitions")
        p.add_argument("--estimator", choices=["random", "expected"])
        p.add_argument("--no-quantum", action="store_true", help="skip the quantum reference")
        p.add_argument("--desk", action="store_true", help="use the reduced desk-scale preset")
        p.add_argument("--out", help=f"output root (default ${lab.OUT_ENV} or ./runs)")
    sub.add_parser("selftest", help="run the property checks")
    return parser


def config_from_args(args) -> lab.RunConfig:
    if args.config:
        base = lab.RunConfig.load(args.config).to_dict()
        base["experiment"] = args.command
    else:
        base = lab.default_config(args.command, desk=args.desk).to_dict()
    overrides = {
        "eps": args.eps,
        "particles": args.particles,
        "seed": args.seed,
        "estimator": args.estimator,
        "out": args.out,
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_jumps:
        base["jumps"] = False
    if args.no_transitions:
        base["transitions"] = False
    if args.no_quantum:
        base["quantum"] = False
    return lab.RunConfig.from_dict(base)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        results = selftest.run_all()
        return 0 if all(c.passed for c in results) else 1
    try:
        config = config_from_args(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except lab.ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 2
    out = lab.output_dir(config)
    result = lab.RunResult(config.experiment)
    try:
        result = lab.run(config)
    except Exception as exc:
        result.warnings.append(f"{type(exc).__name__}: {exc}")
        lab.write_result(result, config, out, status="failed")
        print(f"error: run failed: {exc}", file=sys.stderr)
        return 1
    lab.write_result(result, config, out)
    for w in result.warnings:
        log.warning(w)
    for name, table in result.tables.items():
        if len(table.rows) <= 40:
            print(f"# {name}")
            print(table.to_csv(), end="")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
