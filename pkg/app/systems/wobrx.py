"""Baseline with a static RIS and no BRx: the RIS only assists the PRs."""
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


def wobrx_layout(ch: ChannelSet, cfg: SystemConfig) -> ProblemLayout:
    k = ch.n_pr
    return ProblemLayout(
        name=SystemKind.WOBRX.value,
        channels=ch,
        direct=ch.h_pr.T.copy(),
        cascade_index=np.arange(1, k + 1),
        sign=np.ones(k),
        floor=np.full(k, cfg.noise_power * cfg.gamma_p),
        active=np.ones(k, dtype=bool),
        ber=None,
        init_rows=tuple(range(k)),
        init_direction=ch.h_pr.sum(axis=0),
        blocks=(slice(0, k),),
        labels=tuple(f"k={j}" for j in range(1, k + 1)),
    )


def static_gains(ch: ChannelSet, phi: RisPhase, w: PrecoderLike) -> np.ndarray:
    """|(h_k + G diag(g_k) phi)^H w|^2 for k = 1..K."""
    vec = as_vector(w)
    reflected = np.einsum("knm,m->kn", ch.cascades[1:], phi.phases)
    return np.abs((ch.h_pr + reflected).conj() @ vec) ** 2


def check_wobrx(
    ch: ChannelSet,
    phi: RisPhase,
    w: PrecoderLike,
    cfg: SystemConfig,
    tol: float = 1e-6,
) -> FeasibilityReport:
    gains = static_gains(ch, phi, w)
    floor = cfg.noise_power * cfg.gamma_p
    checks = [make_check(f"rate[k={k}]", gains[k - 1] - floor, cfg.noise_power, tol) for k in range(1, ch.n_pr + 1)]
    checks.append(unit_modulus_check(phi, tol))
    rates = tuple(float(np.log2(1.0 + g / cfg.noise_power)) for g in gains)
    return FeasibilityReport(checks=tuple(checks), power=transmit_power(w), expected_rates=rates)


def solve_wobrx(
    ch: ChannelSet,
    cfg: SystemConfig,
    opts: SolverOptions = SolverOptions(),
    phi_init: Optional[RisPhase] = None,
    w_init: Optional[PrecoderLike] = None,
) -> SolveResult:
    norm_ch, norm_cfg = normalized_frame(ch, cfg)

    def checker(phi: RisPhase, w: PrecoderLike) -> FeasibilityReport:
        return check_wobrx(ch, phi, w, cfg, tol=opts.feasibility_tol)

    log.debug("WOBRx: K=%d PRs, N_r=%d static RIS elements", ch.n_pr, ch.n_ris)
    return run_pbcd(wobrx_layout(norm_ch, norm_cfg), opts, checker, phi_init=phi_init, w_init=w_init)


class System(BaseDesignSystem):
    name = SystemKind.WOBRX.value
    kind = SystemKind.WOBRX
    description = "Static RIS, no BRx: PR rate constraints on direct + reflected links"

    def solve(
        self,
        ch: ChannelSet,
        cfg: SystemConfig,
        opts: SolverOptions,
        phi_init: Optional[RisPhase] = None,
        w_init: Optional[PrecoderLike] = None,
    ) -> SolveResult:
        return solve_wobrx(ch, cfg, opts, phi_init=phi_init, w_init=w_init)

    def check(
        self,
        ch: ChannelSet,
        phi: RisPhase,
        w: PrecoderLike,
        cfg: SystemConfig,
        tol: float = 1e-6,
    ) -> FeasibilityReport:
        return check_wobrx(ch, phi, w, cfg, tol)
