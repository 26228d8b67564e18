"""Conventional symbiotic radio: the BRx jointly decodes the primary signal.

Rate-balanced primary constraints apply at every receiver including the BRx
(k = 0), and the backscatter link must reach the secondary SNR target

    (T / delta^2) |(G diag(g_0) phi)^H w|^2 >= Gamma_s.
"""
from __future__ import annotations

import logging
from typing import List, Optional

import numpy as np

from app.core.model import (
    ChannelSet,
    ConstraintCheck,
    FeasibilityReport,
    PrecoderLike,
    RisPhase,
    SystemConfig,
    as_vector,
    make_check,
    primary_rate,
    stack_effective,
    transmit_power,
    unit_modulus_check,
)
from app.core.solver import (
    ProblemLayout,
    SolveResult,
    SolverOptions,
    infeasible_result,
    normalized_frame,
    run_pbcd,
)
from app.core.system_interface import BaseDesignSystem, BaselineSpec, SystemKind

log = logging.getLogger(__name__)


def csr_layout(ch: ChannelSet, cfg: SystemConfig, spec: BaselineSpec) -> ProblemLayout:
    """Rows i*(K+1)+k for the rate constraints, then one secondary-SNR row."""
    n_rx = ch.n_pr + 1
    floor_p = cfg.noise_power * cfg.gamma_p
    direct = np.hstack([ch.direct, ch.direct, np.zeros((ch.n_tx, 1), dtype=complex)])
    index = np.concatenate([np.arange(n_rx), np.arange(n_rx), [0]])
    sign = np.concatenate([-np.ones(n_rx), np.ones(n_rx), [1.0]])
    floor = np.concatenate([np.full(2 * n_rx, floor_p), [cfg.noise_power * spec.gamma_s / cfg.t_symbols]])
    active = np.ones(2 * n_rx + 1, dtype=bool)
    if not spec.include_brx_rate:
        active[[0, n_rx]] = False
    if spec.gamma_s == 0.0:
        active[-1] = False

    labels = [f"k={k},i={i}" for i in (0, 1) for k in range(n_rx)] + ["secondary"]
    return ProblemLayout(
        name=SystemKind.CSR.value,
        channels=ch,
        direct=direct,
        cascade_index=index,
        sign=sign,
        floor=floor,
        active=active,
        ber=None,
        init_rows=tuple(j for j in range(2 * n_rx + 1) if active[j]),
        init_direction=ch.direct.sum(axis=1),
        blocks=(slice(0, n_rx), slice(n_rx, 2 * n_rx), slice(2 * n_rx, 2 * n_rx + 1)),
        labels=tuple(labels),
        n_receivers=n_rx,
    )


def secondary_snr(ch: ChannelSet, phi: RisPhase, w: PrecoderLike, cfg: SystemConfig) -> float:
    vec = as_vector(w)
    gain = abs(np.vdot(ch.cascades[0] @ phi.phases, vec)) ** 2
    return float(cfg.t_symbols * gain / cfg.noise_power)


def check_csr(
    ch: ChannelSet,
    phi: RisPhase,
    w: PrecoderLike,
    cfg: SystemConfig,
    spec: BaselineSpec,
    tol: float = 1e-6,
) -> FeasibilityReport:
    eff = stack_effective(ch, phi)
    gains = eff.gains(w)
    noise = cfg.noise_power
    floor = noise * cfg.gamma_p
    first = 0 if spec.include_brx_rate else 1

    checks: List[ConstraintCheck] = []
    for k in range(first, ch.n_pr + 1):
        for i in (0, 1):
            checks.append(make_check(f"rate[k={k},i={i}]", gains[i, k] - floor, noise, tol))
    snr = secondary_snr(ch, phi, w, cfg)
    # residual in watts: |.|^2 - delta^2 Gamma_s / T
    checks.append(make_check("secondary_snr", (snr - spec.gamma_s) * noise / cfg.t_symbols, noise, tol))
    checks.append(unit_modulus_check(phi, tol))

    rates = tuple(primary_rate(eff, w, noise, k) for k in range(1, ch.n_pr + 1))
    return FeasibilityReport(checks=tuple(checks), power=transmit_power(w), expected_rates=rates)


def solve_csr(
    ch: ChannelSet,
    cfg: SystemConfig,
    spec: BaselineSpec,
    opts: SolverOptions = SolverOptions(),
    phi_init: Optional[RisPhase] = None,
    w_init: Optional[PrecoderLike] = None,
) -> SolveResult:
    if spec.kind is not SystemKind.CSR:
        raise ValueError(f"solve_csr needs a CSR baseline spec, got {spec.kind.value}")

    def checker(phi: RisPhase, w: PrecoderLike) -> FeasibilityReport:
        return check_csr(ch, phi, w, cfg, spec, tol=opts.feasibility_tol)

    ch.check_against(cfg)
    if spec.gamma_s > 0.0 and not np.any(ch.cascades[0]):
        return infeasible_result(
            SystemKind.CSR.value, ch, checker,
            f"no backscatter path to the BRx (cascade is zero) while Gamma_s={spec.gamma_s:.4g} > 0",
            phi=phi_init,
        )

    log.debug("CSR: Gamma_s=%.6g, BRx rate rows %s", spec.gamma_s, "on" if spec.include_brx_rate else "off")
    norm_ch, norm_cfg = normalized_frame(ch, cfg)
    result = run_pbcd(csr_layout(norm_ch, norm_cfg, spec), opts, checker, phi_init=phi_init, w_init=w_init)
    result.diagnostics["gamma_s"] = spec.gamma_s
    return result


class System(BaseDesignSystem):
    name = SystemKind.CSR.value
    kind = SystemKind.CSR
    description = "Conventional SR: BRx joint decoding, secondary SNR constraint"

    def solve(
        self,
        ch: ChannelSet,
        cfg: SystemConfig,
        opts: SolverOptions,
        phi_init: Optional[RisPhase] = None,
        w_init: Optional[PrecoderLike] = None,
    ) -> SolveResult:
        return solve_csr(ch, cfg, BaselineSpec.for_csr(cfg.ber_target), opts, phi_init=phi_init, w_init=w_init)

    def check(
        self,
        ch: ChannelSet,
        phi: RisPhase,
        w: PrecoderLike,
        cfg: SystemConfig,
        tol: float = 1e-6,
    ) -> FeasibilityReport:
        return check_csr(ch, phi, w, cfg, BaselineSpec.for_csr(cfg.ber_target), tol)
