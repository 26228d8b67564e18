"""Shared interface definition for design systems.

Each file in ``app.systems`` exposes a ``System`` class implementing the
``DesignSystem`` protocol below.  The ``SystemManager`` discovers them the
same way for the CLI and the experiment harness.

Required hooks
==============

- ``name`` (str): label used in result files (``IDSR``, ``WORIS``, ...).
- ``solve(ch, cfg, opts, phi_init=None, w_init=None)`` -> ``SolveResult``:
  minimum-power design for one channel realization, optionally warm-started.
- ``check(ch, phi, w, cfg, tol)`` -> ``FeasibilityReport``: the system's own
  constraint set evaluated at a given design (used to re-verify dumps).

Optional hooks
==============

- ``uses_ris()`` -> ``bool``: whether the design touches the RIS phases.
  Systems that do not use the RIS are skipped by the phi-only experiments.
- ``describe()`` -> ``str``: one-line description for ``--help`` style listings.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Protocol, runtime_checkable

from app.core.model import ChannelSet, FeasibilityReport, PrecoderLike, RisPhase, SystemConfig
from app.core.solver import SolveResult, SolverOptions
from app.core.specfun import inv_q_function


class SystemKind(str, Enum):
    IDSR = "IDSR"
    WORIS = "WORIS"
    WOBRX = "WOBRx"
    CSR = "CSR"

    @classmethod
    def parse(cls, raw: str) -> "SystemKind":
        key = str(raw).strip().upper()
        for kind in cls:
            if kind.value.upper() == key:
                return kind
        raise ValueError(f"unknown system '{raw}'; expected one of {[k.value for k in cls]}")


@dataclass(frozen=True)
class BaselineSpec:
    """Parameters of a comparison system.

    ``gamma_s`` is the secondary SNR target of the conventional (jointly
    decoding) system, linear.  ``include_brx_rate`` adds the primary-rate
    constraint at the BRx.
    """

    kind: SystemKind
    gamma_s: float = 0.0
    include_brx_rate: bool = False

    def __post_init__(self) -> None:
        if not self.gamma_s >= 0.0:
            raise ValueError(f"gamma_s must be >= 0, got {self.gamma_s}")
        if self.kind is SystemKind.IDSR:
            raise ValueError("IDSR is the proposed system, not a baseline")

    @classmethod
    def for_csr(cls, ber_target: float) -> "BaselineSpec":
        """Gamma_s with Q(sqrt(2 Gamma_s)) = ber_target (coherent BPSK equivalent)."""
        if ber_target >= 0.5:
            return cls(kind=SystemKind.CSR, gamma_s=0.0, include_brx_rate=True)
        return cls(kind=SystemKind.CSR, gamma_s=inv_q_function(ber_target) ** 2 / 2.0, include_brx_rate=True)


@runtime_checkable
class DesignSystem(Protocol):
    name: str

    def solve(
        self,
        ch: ChannelSet,
        cfg: SystemConfig,
        opts: SolverOptions,
        phi_init: Optional[RisPhase] = None,
        w_init: Optional[PrecoderLike] = None,
    ) -> SolveResult:
        ...

    def check(
        self,
        ch: ChannelSet,
        phi: RisPhase,
        w: PrecoderLike,
        cfg: SystemConfig,
        tol: float = 1e-6,
    ) -> FeasibilityReport:
        ...

    def uses_ris(self) -> bool:
        ...

    def describe(self) -> str:
        ...


class BaseDesignSystem:
    """Convenience base class supplying the optional hooks."""

    name: str = "unnamed"
    description: str = ""

    def uses_ris(self) -> bool:  # pragma: no cover - trivial
        return True

    def describe(self) -> str:  # pragma: no cover - trivial
        return self.description or self.name
