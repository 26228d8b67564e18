"""Baseline without RIS and without BRx: multicast power minimization over
the direct PTx->PR links only."""
from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from app.core.model import (
    ChannelSet,
    FeasibilityReport,
    PrecoderLike,
    RisPhase,
    SystemConfig,
    as_vector,
    make_check,
    transmit_power,
    unit_modulus_check,
)
from app.core.solver import ProblemLayout, SolveResult, SolverOptions, normalized_frame, run_pbcd
from app.core.system_interface import BaseDesignSystem, SystemKind

log = logging.getLogger(__name__)


def woris_layout(ch: ChannelSet, cfg: SystemConfig) -> ProblemLayout:
    k = ch.n_pr
    return ProblemLayout(
        name=SystemKind.WORIS.value,
        channels=ch,
        direct=ch.h_pr.T.copy(),
        cascade_index=np.zeros(k, dtype=int),
        sign=np.zeros(k),
        floor=np.full(k, cfg.noise_power * cfg.gamma_p),
        active=np.ones(k, dtype=bool),
        ber=None,
        init_rows=tuple(range(k)),
        init_direction=ch.h_pr.sum(axis=0),
        blocks=(slice(0, k),),
        labels=tuple(f"k={j}" for j in range(1, k + 1)),
    )


def check_woris(
    ch: ChannelSet,
    phi: Optional[RisPhase],
    w: PrecoderLike,
    cfg: SystemConfig,
    tol: float = 1e-6,
) -> FeasibilityReport:
    vec = as_vector(w)
    gains = np.abs(ch.h_pr.conj() @ vec) ** 2
    floor = cfg.noise_power * cfg.gamma_p
    checks = [make_check(f"rate[k={k}]", gains[k - 1] - floor, cfg.noise_power, tol) for k in range(1, ch.n_pr + 1)]
    checks.append(unit_modulus_check(phi, tol))
    rates = tuple(float(np.log2(1.0 + g / cfg.noise_power)) for g in gains)
    return FeasibilityReport(checks=tuple(checks), power=transmit_power(vec), expected_rates=rates)


def solve_woris(
    ch: ChannelSet,
    cfg: SystemConfig,
    opts: SolverOptions = SolverOptions(),
    phi_init: Optional[RisPhase] = None,
    w_init: Optional[PrecoderLike] = None,
) -> SolveResult:
    """Direct links only; ``phi_init`` is passed through untouched."""
    norm_ch, norm_cfg = normalized_frame(ch, cfg)
    phase = phi_init if phi_init is not None else RisPhase.ones(ch.n_ris)
    log.debug("WORIS: K=%d PRs on direct links only", ch.n_pr)

    def checker(phi: RisPhase, w: PrecoderLike) -> FeasibilityReport:
        return check_woris(ch, phi, w, cfg, tol=opts.feasibility_tol)

    return run_pbcd(woris_layout(norm_ch, norm_cfg), opts, checker, phi_init=phase, w_init=w_init)


class System(BaseDesignSystem):
    name = SystemKind.WORIS.value
    kind = SystemKind.WORIS
    description = "No RIS, no BRx: PR rate constraints on the direct links"

    def solve(
        self,
        ch: ChannelSet,
        cfg: SystemConfig,
        opts: SolverOptions,
        phi_init: Optional[RisPhase] = None,
        w_init: Optional[PrecoderLike] = None,
    ) -> SolveResult:
        return solve_woris(ch, cfg, opts, phi_init=phi_init, w_init=w_init)

    def check(
        self,
        ch: ChannelSet,
        phi: RisPhase,
        w: PrecoderLike,
        cfg: SystemConfig,
        tol: float = 1e-6,
    ) -> FeasibilityReport:
        return check_woris(ch, phi, w, cfg, tol)

    def uses_ris(self) -> bool:
        return False
