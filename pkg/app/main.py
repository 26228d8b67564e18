#!/usr/bin/env python3
"""Command-line entry point: ``python -m app.main <subcommand> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app import harness
from app.core.config import DEFAULT_CONFIG_PATH, ConfigError, ExperimentConfig, load_experiment
from app.core.system_manager import SystemManager

log = logging.getLogger("app.main")

LOG_FORMAT = "%(asctime)s %(levelname)s [%(name)s] %(message)s"


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, default=str(DEFAULT_CONFIG_PATH), help="Path to YAML configuration file.")
    common.add_argument("--out", type=str, default=None, help="Output directory (overrides experiment.output_dir).")
    common.add_argument("--threads", type=int, default=None, help="Worker threads (0 = physical cores).")
    common.add_argument("--seed", type=int, default=None, help="Seed base (overrides experiment.seed_base).")
    common.add_argument(
        "--log-level", type=str, default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="Logging verbosity."
    )

    parser = argparse.ArgumentParser(description="Minimum-power beamforming and RIS design for symbiotic radio.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="Solve one realization with every selected system.")
    sub.add_parser("sweep", parents=[common], help="Monte Carlo sweep over deployment offset or K.")
    sub.add_parser("converge", parents=[common], help="Per-iteration traces on one realization.")
    sub.add_parser("ber-validate", parents=[common], help="Closed-form vs Monte Carlo BER of the energy detector.")
    verify = sub.add_parser("verify", parents=[common], help="Re-check every feasible run in a results dump.")
    verify.add_argument("dump", type=str, help="results.yml written by solve or sweep.")
    sub.add_parser("systems", parents=[common], help="List the available design systems.")
    return parser.parse_args(argv)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_experiment(Path(args.config))
    return cfg.with_overrides(
        output_dir=Path(args.out) if args.out else None,
        threads=args.threads,
        seed_base=args.seed,
    )


def run(args: argparse.Namespace) -> int:
    if args.command == "systems":
        manager = SystemManager().load_systems()
        for name in manager.names():
            print(f"{name:6s} {manager.get(name).describe()}")
        return 0

    cfg = build_config(args)
    log.info("Command '%s', output directory %s", args.command, cfg.output_dir)

    if args.command == "solve":
        outcome = harness.run_single(cfg)
        for rec in outcome.records:
            log.info("%s: status=%s feasible=%s power=%.6g W", rec.system, rec.status, rec.feasible, rec.power)
    elif args.command == "sweep":
        harness.run_experiment(cfg)
    elif args.command == "converge":
        harness.run_convergence(cfg)
    elif args.command == "ber-validate":
        rows, _ = harness.run_ber_validation(cfg)
        if not all(row["passed"] for row in rows):
            return 1
    elif args.command == "verify":
        failures = harness.verify_results(Path(args.dump), cfg)
        for failure in failures:
            log.error("re-verification failed: %s", failure)
        return 1 if failures else 0
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
    log.info("RIS symbiotic-radio designer starting...")
    try:
        return run(args)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except Exception as exc:
        log.error("%s failed: %s", args.command, exc, exc_info=args.log_level == "DEBUG")
        return 1


if __name__ == "__main__":
    sys.exit(main())
