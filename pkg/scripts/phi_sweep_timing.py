"""Time one full RIS phase sweep at increasing N_r.

Run this script from the project root. It samples one realization per size
from the configured geometry, builds a solver state at the initial point and
times ``sweep_phi`` (median over ``--repeats``).  The sweep is linear in N_r,
so each doubling of N_r should roughly double the time.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import statistics
import sys
import time
from pathlib import Path
from typing import List

import numpy as np

# Ensure the repository root is on sys.path so we can import app modules when the script is
# executed directly.
PROJECT_ROOT = Path(__file__).resolve().parent.parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from app.channelgen import sample_channels
from app.core.config import DEFAULT_CONFIG_PATH, load_experiment
from app.core.model import SystemConfig
from app.core.solver import PenaltyState, idsr_layout, initial_point, normalized_frame, sweep_phi


def parse_args() -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Time the RIS phase sweep against N_r.")
    parser.add_argument(
        "--config",
        default=str(DEFAULT_CONFIG_PATH),
        help="Path to YAML configuration file (default: config/config.yml)",
    )
    parser.add_argument("--sizes", type=int, nargs="+", default=[256, 512, 1024, 2048], help="N_r values to time")
    parser.add_argument("--n-tx", type=int, default=16, help="PTx antennas (default: 16)")
    parser.add_argument("--n-pr", type=int, default=4, help="Primary receivers (default: 4)")
    parser.add_argument("--repeats", type=int, default=20, help="Timed sweeps per size (default: 20)")
    parser.add_argument(
        "--log-level",
        default="INFO",
        help="Logging level (DEBUG, INFO, WARNING, ERROR)",
    )
    return parser.parse_args()


def time_sweep(cfg: SystemConfig, geometry, seed: int, repeats: int) -> float:
    ch = sample_channels(geometry, cfg, seed)
    norm_ch, norm_cfg = normalized_frame(ch, cfg)
    layout = idsr_layout(norm_ch, norm_cfg)
    w, phi = initial_point(layout, np.random.default_rng(seed), None)
    samples: List[float] = []
    for _ in range(repeats):
        state = PenaltyState.create(layout, w, phi, rho=10.0)
        started = time.perf_counter()
        sweep_phi(norm_ch, state)
        samples.append(time.perf_counter() - started)
    return statistics.median(samples)


def main() -> int:
    args = parse_args()
    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(levelname)s %(message)s",
    )
    exp = load_experiment(Path(args.config))
    geometry = exp.geometry.with_n_pr(args.n_pr)

    previous = None
    for n_ris in sorted(args.sizes):
        cfg = dataclasses.replace(exp.system, n_tx=args.n_tx, n_ris=n_ris, n_pr=args.n_pr)
        median = time_sweep(cfg, geometry, exp.seed_base, args.repeats)
        ratio = "" if previous is None else f" (x{median / previous:.2f} vs previous size)"
        logging.info("N_r=%5d: median sweep %.4f ms%s", n_ris, 1e3 * median, ratio)
        previous = median
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception:  # noqa: BLE001
        logging.exception("phi sweep timing failed")
        sys.exit(1)
