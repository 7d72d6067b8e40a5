"""Command-line entry point.

Five subcommands (train, solve, sweep-noise, sweep-measurements, report),
each driven by a JSON config file with optional --limit/--seed/--out
overrides. Success prints the output path and exits 0; configuration
problems exit 2 and anything else exits 1, both with a single JSON error
line on stderr so callers can parse failures."""

from __future__ import annotations

import argparse
import json
import sys

from .harness import (
    ConfigError,
    cmd_report,
    cmd_solve,
    cmd_sweep_measurements,
    cmd_sweep_noise,
    cmd_train,
    load_config,
)

_COMMANDS = {
    "train": cmd_train,
    "solve": cmd_solve,
    "sweep-noise": cmd_sweep_noise,
    "sweep-measurements": cmd_sweep_measurements,
    "report": cmd_report,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="phasekit",
        description="Phase-retrieval benchmark harness: classical projection "
                    "solvers and learned reconstruction on magnitude-only "
                    "measurements.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "train a model (e2e, vae, prcgan) and save a weight archive",
        "solve": "reconstruct the test subset with one method and write a rows CSV",
        "sweep-noise": "solve across a shot-noise alpha grid",
        "sweep-measurements": "solve across a Gaussian measurement-count grid",
        "report": "aggregate a rows CSV and emit gradient histograms",
    }
    for name, text in helps.items():
        cmd = sub.add_parser(name, help=text)
        cmd.add_argument("--config", required=True, help="JSON config path")
        cmd.add_argument("--limit", type=int, help="test/train subset size override")
        cmd.add_argument("--seed", type=int, help="seed override")
        cmd.add_argument("--out", help="output path override")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config, limit=args.limit, seed=args.seed,
                          out=args.out)
        out_path = _COMMANDS[args.command](raw)
    except ConfigError as exc:
        print(json.dumps({"kind": "config", "error": str(exc)}), file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"kind": "runtime", "error": f"{type(exc).__name__}: {exc}"}),
              file=sys.stderr)
        return 1
    print(out_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
