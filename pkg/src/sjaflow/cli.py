"""Command line entry point.

    sjaflow quench --config cfg.json --out results/
    sjaflow autocorr --config cfg.json --out results/ --realizations 3
    sjaflow finite-size --config cfg.json --out results/
    sjaflow jacobi-stats --config cfg.json --out logs/
    sjaflow flow-only --config cfg.json --log logs/r000_log.csv --problem logs/r000_problem.npz --out flow/

Exit codes: 0 success, 1 configuration error, 2 too many aborted realizations.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .pipeline import (AbortThresholdExceeded, ConfigError, ExperimentConfig, run_experiment,
                       run_finite_size_study, run_flow_only, run_jacobi_stats)

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sjaflow", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("quench", "autocorr", "finite-size", "jacobi-stats", "flow-only"):
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON experiment config (defaults used when omitted)")
        p.add_argument("--out", help="output directory (overrides outputs.directory)")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--paper-scale", action="store_true", help="N=2048 x 10 realizations / L=16")
        p.add_argument("--order", type=int, help="k_max")
        p.add_argument("--realizations", type=int)
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "flow-only":
            p.add_argument("--log", required=True, help="decimation log CSV")
            p.add_argument("--problem", required=True, help="problem npz from jacobi-stats")
            p.add_argument("--kind", choices=("quench", "autocorr"), default="quench")
    return ap


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_json(args.config) if args.config else ExperimentConfig()
    kw = {}
    if args.seed is not None:
        kw["base_seed"] = args.seed
    if args.order is not None:
        kw["k_max"] = args.order
    if args.realizations is not None:
        kw["realizations"] = args.realizations
    if kw:
        cfg = cfg.replace(**kw)
    if args.paper_scale:
        cfg = cfg.paper_scale()
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cmd = " ".join(["sjaflow"] + list(sys.argv[1:] if argv is None else argv))
    try:
        cfg = load_config(args)
        out = args.out or cfg.outputs.get("directory") or "out"
        if args.command in ("quench", "autocorr"):
            res = run_experiment(cfg, args.command, out, command=cmd)
            print(json.dumps(res.summary, indent=1, default=str))
        elif args.command == "finite-size":
            st = run_finite_size_study(cfg, out, command=cmd)
            print(json.dumps(st["deviations"], indent=1, default=str))
        elif args.command == "jacobi-stats":
            m = run_jacobi_stats(cfg, out, command=cmd)
            print(f"wrote {len(m['files'])} files to {out}")
        else:
            try:
                r = run_flow_only(cfg, args.log, args.problem, args.kind, out, command=cmd)
            except (OSError, KeyError) as e:
                raise ConfigError(f"cannot load flow inputs: {e}") from e
            print(f"wrote {len(r['series'])} series to {out}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except AbortThresholdExceeded as e:
        print(f"aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
