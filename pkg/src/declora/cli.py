"""Command line: ``declora run|verify|topology-report``."""
from __future__ import annotations

import argparse
import json
import sys

from .harness import ConfigError, run_experiment, topology_report, validate_config


def _load(path: str):
    try:
        with open(path) as fh:
            return validate_config(fh.read())
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror}"]) from None


def cmd_run(args) -> int:
    cfg = _load(args.config)
    out = args.out or cfg.output
    summary = run_experiment(cfg, out)
    print(f"eta = {cfg.train.resolved_eta!r}")
    for p in summary["points"]:
        print(f"{p['point']}: final train loss {p['final_train_loss']:.6f} over {p['replicates']} replicate(s)")
    print(f"wrote {out}/summary.json")
    return 0


def cmd_verify(args) -> int:
    from .verify import verify_suite

    report = verify_suite(only=args.only)
    if args.json:
        print(json.dumps({k: v for k, v in report.items() if k != "lines"}, indent=1))
    else:
        print("\n".join(report["lines"]))
    return 0 if report["all_passed"] else 1


def cmd_topology(args) -> int:
    cfg = _load(args.config)
    for row in topology_report(cfg):
        print("  ".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="declora", description="Decentralized LoRA simulator")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="run the acceptance checks")
    p.add_argument("--only", nargs="*", default=None, metavar="ID")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("topology-report", help="print n, beta, rho and degrees for a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_topology)
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
