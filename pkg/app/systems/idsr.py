"""The information-decoupled system: the BRx only energy-detects the
backscatter symbol, so the BER constraint replaces a BRx rate constraint."""
from __future__ import annotations

from typing import Optional

from app.core import solver
from app.core.model import ChannelSet, FeasibilityReport, PrecoderLike, RisPhase, SystemConfig, check_feasibility
from app.core.solver import SolveResult, SolverOptions
from app.core.system_interface import BaseDesignSystem, SystemKind


class System(BaseDesignSystem):
    name = SystemKind.IDSR.value
    kind = SystemKind.IDSR
    description = "Information-decoupled SR: PR rate constraints + BRx energy-detection BER"

    def solve(
        self,
        ch: ChannelSet,
        cfg: SystemConfig,
        opts: SolverOptions,
        phi_init: Optional[RisPhase] = None,
        w_init: Optional[PrecoderLike] = None,
    ) -> SolveResult:
        return solver.solve(ch, cfg, opts, phi_init=phi_init, w_init=w_init)

    def check(
        self,
        ch: ChannelSet,
        phi: RisPhase,
        w: PrecoderLike,
        cfg: SystemConfig,
        tol: float = 1e-6,
    ) -> FeasibilityReport:
        return check_feasibility(ch, phi, w, cfg, tol)
