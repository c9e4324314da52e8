#!/usr/bin/env python3
"""
freebrw command line.

    python app.py validate --config configs/tree3_srw.ini
    python app.py run --config configs/tree3_ldp.ini --out results/ldp --threads 8
    python app.py report results/ldp

Exit codes: 0 success, 1 validation failure, 2 partial (caps hit or cell
errors), 3 I/O.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Dict, List, Optional

from freebrw.config import load_and_validate
from freebrw.errors import ConfigError
from freebrw.experiments import EXIT_INVALID, EXIT_IO, EXIT_OK, run
from freebrw.report import build_report

log = logging.getLogger("freebrw")


def parse_overrides(items: List[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError([f"--cap-override expects key=value, got {item!r}"])
        key, value = item.split("=", 1)
        key = key.strip()
        out[key if "." in key else f"caps.{key}"] = value.strip()
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freebrw", description="Branching random walks on free products.")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    for name in ("validate", "run"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True, help="experiment INI file")
        s.add_argument("--seed", type=int, default=None, help="master seed, overrides the file")
        s.add_argument("--threads", type=int, default=None, help="worker processes (speed only)")
        s.add_argument("--cap-override", action="append", default=[], metavar="KEY=VALUE",
                       help="override a cap (or any section.key); repeatable")
        if name == "run":
            s.add_argument("--out", default=None, help="result directory")

    r = sub.add_parser("report")
    r.add_argument("result_dir")
    return p


def _load(args):
    overrides = parse_overrides(args.cap_override)
    if args.seed is not None:
        overrides["experiment.master_seed"] = str(args.seed)
    if args.threads is not None:
        overrides["experiment.threads"] = str(args.threads)
    return load_and_validate(args.config, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            report = build_report(args.result_dir)
            sys.stdout.write(report.text)
            return EXIT_OK
        cfg = _load(args)
        if args.command == "validate":
            for note in cfg.notices:
                print(f"notice: {note}")
            print(f"ok: {cfg.path} (digest {cfg.digest})")
            return EXIT_OK
        outcome = run(cfg, args.out, args.threads)
        print(f"{cfg.kind}: {len(outcome.files)} files in {outcome.out_dir}")
        return outcome.exit_code
    except ConfigError as err:
        for v in err.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as err:
        log.error("I/O error: %s", err)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
