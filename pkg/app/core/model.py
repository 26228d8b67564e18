"""Physical system model: configuration, channels, decision variables and
the pure evaluators built on them.

Receiver index 0 is always the BRx and 1..K are the PRs.  Branch ``i`` is the
RIS state under backscatter symbol ``c = (-1)^i``, giving the effective channel

    h_E,k(i) = h_k - (-1)^i G diag(g_k) phi.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from app.core import detector

log = logging.getLogger(__name__)

UNIT_MODULUS_TOL = 1e-12
LAMBDA_CONSISTENCY_TOL = 1e-9


def _frozen(arr: np.ndarray) -> np.ndarray:
    """Read-only private copy; the caller's array stays writeable and detached."""
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class SystemConfig:
    """Scalar problem parameters, all linear units (noise in watts)."""

    n_tx: int
    n_ris: int
    n_pr: int
    t_symbols: int
    noise_power: float
    gamma_p: float
    lambda_s: float
    ber_target: float

    def __post_init__(self) -> None:
        for name in ("n_tx", "n_ris", "n_pr", "t_symbols"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ValueError(f"SystemConfig.{name} must be a positive integer, got {value}")
        if not self.noise_power > 0:
            raise ValueError(f"SystemConfig.noise_power must be > 0, got {self.noise_power}")
        if not self.gamma_p > 0:
            raise ValueError(f"SystemConfig.gamma_p must be > 0, got {self.gamma_p}")
        if not 0.0 < self.ber_target <= 0.5:
            raise ValueError(f"SystemConfig.ber_target must lie in (0, 0.5], got {self.ber_target}")
        if not self.lambda_s >= 1.0:
            raise ValueError(f"SystemConfig.lambda_s must be >= 1, got {self.lambda_s}")
        achieved = detector.ratio_ber(self.lambda_s, self.t_symbols)
        if abs(achieved - self.ber_target) > LAMBDA_CONSISTENCY_TOL:
            raise ValueError(
                f"lambda_s={self.lambda_s} gives BER {achieved:.12g} at T={self.t_symbols}, "
                f"inconsistent with ber_target={self.ber_target}"
            )

    @classmethod
    def from_targets(
        cls,
        n_tx: int,
        n_ris: int,
        n_pr: int,
        t_symbols: int,
        noise_power: float,
        gamma_p: float,
        ber_target: float,
    ) -> "SystemConfig":
        """Build a config, deriving lambda_s from the BER target."""
        if ber_target == 0.5:
            lambda_s = 1.0
        else:
            lambda_s = detector.solve_lambda_s(ber_target, t_symbols)
        return cls(
            n_tx=int(n_tx),
            n_ris=int(n_ris),
            n_pr=int(n_pr),
            t_symbols=int(t_symbols),
            noise_power=float(noise_power),
            gamma_p=float(gamma_p),
            lambda_s=float(lambda_s),
            ber_target=float(ber_target),
        )

    @property
    def rate_target(self) -> float:
        """r_p in bits/s/Hz."""
        return float(np.log2(1.0 + self.gamma_p))

    def normalized(self) -> "SystemConfig":
        return dataclasses.replace(self, noise_power=1.0)


# ---------------------------------------------------------------------------
# Channels and decision variables
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ChannelSet:
    """All channels of one realization.

    Shapes: h_pr (K, N_t), h_brx (N_t,), g_mat (N_t, N_r), g_pr (K, N_r),
    g_brx (N_r,), cascades (K+1, N_t, N_r) with cascades[0] the BRx cascade.
    """

    h_pr: np.ndarray
    h_brx: np.ndarray
    g_mat: np.ndarray
    g_pr: np.ndarray
    g_brx: np.ndarray
    cascades: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self) -> None:
        g_mat = np.asarray(self.g_mat, dtype=complex)
        if g_mat.ndim != 2:
            raise ValueError(f"g_mat must be a matrix, got shape {g_mat.shape}")
        n_tx, n_ris = g_mat.shape
        h_brx = np.asarray(self.h_brx, dtype=complex).reshape(-1)
        g_brx = np.asarray(self.g_brx, dtype=complex).reshape(-1)
        h_pr = np.asarray(self.h_pr, dtype=complex)
        g_pr = np.asarray(self.g_pr, dtype=complex)
        if h_pr.size % n_tx or g_pr.size % n_ris:
            raise ValueError(f"h_pr/g_pr sizes {h_pr.size}/{g_pr.size} do not fit N_t={n_tx}, N_r={n_ris}")
        h_pr = h_pr.reshape(-1, n_tx)
        g_pr = g_pr.reshape(-1, n_ris)

        if h_brx.size != n_tx:
            raise ValueError(f"h_brx has length {h_brx.size}, expected N_t={n_tx}")
        if g_brx.size != n_ris:
            raise ValueError(f"g_brx has length {g_brx.size}, expected N_r={n_ris}")
        if g_pr.shape != (h_pr.shape[0], n_ris):
            raise ValueError(f"g_pr has shape {g_pr.shape}, expected ({h_pr.shape[0]}, {n_ris})")

        reflect = np.vstack([g_brx[None, :], g_pr])
        built = g_mat[None, :, :] * reflect[:, None, :]
        if self.cascades is not None:
            given = np.asarray(self.cascades, dtype=complex)
            if given.shape != built.shape or not np.allclose(given, built, rtol=1e-12, atol=0.0):
                raise ValueError("cascades do not match G diag(g_k) for every receiver")

        for name, arr in (
            ("h_pr", h_pr), ("h_brx", h_brx), ("g_mat", g_mat), ("g_pr", g_pr),
            ("g_brx", g_brx), ("cascades", built),
        ):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, _frozen(arr))

    @property
    def n_tx(self) -> int:
        return int(self.g_mat.shape[0])

    @property
    def n_ris(self) -> int:
        return int(self.g_mat.shape[1])

    @property
    def n_pr(self) -> int:
        return int(self.h_pr.shape[0])

    @property
    def direct(self) -> np.ndarray:
        """Direct channels as columns, (N_t, K+1), column 0 = BRx."""
        return np.column_stack([self.h_brx, self.h_pr.T])

    @property
    def reflect(self) -> np.ndarray:
        """RIS->receiver channels as rows, (K+1, N_r), row 0 = BRx."""
        return np.vstack([self.g_brx[None, :], self.g_pr])

    def check_against(self, cfg: SystemConfig) -> None:
        if (self.n_tx, self.n_ris, self.n_pr) != (cfg.n_tx, cfg.n_ris, cfg.n_pr):
            raise ValueError(
                f"channel dimensions (N_t={self.n_tx}, N_r={self.n_ris}, K={self.n_pr}) do not match "
                f"config (N_t={cfg.n_tx}, N_r={cfg.n_ris}, K={cfg.n_pr})"
            )

    def scaled(self, factor: float) -> "ChannelSet":
        """Every PTx-side channel multiplied by ``factor`` (cascades follow G)."""
        return ChannelSet(
            h_pr=self.h_pr * factor,
            h_brx=self.h_brx * factor,
            g_mat=self.g_mat * factor,
            g_pr=self.g_pr,
            g_brx=self.g_brx,
        )

    def without_ris(self) -> "ChannelSet":
        """Same direct links with the RIS disconnected (G = 0)."""
        return dataclasses.replace(self, g_mat=np.zeros_like(self.g_mat), cascades=None)


@dataclass(frozen=True)
class RisPhase:
    phases: np.ndarray

    def __post_init__(self) -> None:
        raw = np.asarray(self.phases, dtype=complex).reshape(-1)
        mag = np.abs(raw)
        if not np.all(np.isfinite(raw)) or np.any(mag == 0.0):
            raise ValueError("RIS phases must be finite and non-zero")
        object.__setattr__(self, "phases", _frozen(raw / mag))

    @classmethod
    def from_angles(cls, theta: Sequence[float]) -> "RisPhase":
        return cls(np.exp(1j * np.asarray(theta, dtype=float)))

    @classmethod
    def random(cls, n_ris: int, rng: np.random.Generator) -> "RisPhase":
        return cls.from_angles(rng.uniform(0.0, 2.0 * np.pi, size=int(n_ris)))

    @classmethod
    def ones(cls, n_ris: int) -> "RisPhase":
        return cls(np.ones(int(n_ris), dtype=complex))

    def __neg__(self) -> "RisPhase":
        return RisPhase(-self.phases)

    def __len__(self) -> int:
        return int(self.phases.size)

    def max_modulus_error(self) -> float:
        return float(np.max(np.abs(np.abs(self.phases) - 1.0))) if self.phases.size else 0.0


@dataclass(frozen=True)
class Precoder:
    w: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.w, dtype=complex).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValueError("precoder contains non-finite entries")
        object.__setattr__(self, "w", _frozen(arr))

    @property
    def power(self) -> float:
        return transmit_power(self)


PrecoderLike = Union[Precoder, np.ndarray, Sequence[complex]]


def as_vector(w: PrecoderLike) -> np.ndarray:
    if isinstance(w, Precoder):
        return w.w
    return np.asarray(w, dtype=complex).reshape(-1)


@dataclass(frozen=True)
class EffectiveChannels:
    """branch[i] is H_E,i = [h_E,0(i), ..., h_E,K(i)], shape (N_t, K+1)."""

    branch: Tuple[np.ndarray, np.ndarray]

    def __post_init__(self) -> None:
        b0, b1 = (np.asarray(b, dtype=complex) for b in self.branch)
        if b0.shape != b1.shape or b0.ndim != 2:
            raise ValueError(f"branch matrices must share a 2-D shape, got {b0.shape} and {b1.shape}")
        object.__setattr__(self, "branch", (_frozen(b0), _frozen(b1)))

    @property
    def n_receivers(self) -> int:
        return int(self.branch[0].shape[1])

    def column(self, k: int, i: int) -> np.ndarray:
        return self.branch[i][:, k]

    def gains(self, w: PrecoderLike) -> np.ndarray:
        """|h_E,k(i)^H w|^2 as an array of shape (2, K+1)."""
        vec = as_vector(w)
        return np.abs(np.stack([b.conj().T @ vec for b in self.branch])) ** 2

    def stacked(self) -> np.ndarray:
        """[H_E,0, H_E,1] as one (N_t, 2(K+1)) matrix."""
        return np.hstack(self.branch)


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------
def _check_branch(i: int) -> None:
    if i not in (0, 1):
        raise IndexError(f"branch index must be 0 or 1, got {i}")


def effective_channel(ch: ChannelSet, phi: RisPhase, k: int, i: int) -> np.ndarray:
    _check_branch(i)
    if not 0 <= k <= ch.n_pr:
        raise IndexError(f"receiver index must be in 0..{ch.n_pr}, got {k}")
    if len(phi) != ch.n_ris:
        raise ValueError(f"phi has {len(phi)} entries, expected N_r={ch.n_ris}")
    sign = -1.0 if i == 0 else 1.0
    return ch.direct[:, k] + sign * (ch.cascades[k] @ phi.phases)


def stack_effective(ch: ChannelSet, phi: RisPhase) -> EffectiveChannels:
    if len(phi) != ch.n_ris:
        raise ValueError(f"phi has {len(phi)} entries, expected N_r={ch.n_ris}")
    reflected = np.einsum("knm,m->nk", ch.cascades, phi.phases)
    direct = ch.direct
    return EffectiveChannels(branch=(direct - reflected, direct + reflected))


def branch_variances(eff: EffectiveChannels, w: PrecoderLike, noise_power: float) -> Tuple[float, float]:
    gains = eff.gains(w)
    return float(gains[0, 0] + noise_power), float(gains[1, 0] + noise_power)


def primary_rate(eff: EffectiveChannels, w: PrecoderLike, noise_power: float, k: int) -> float:
    """Expected rate over equiprobable c in {+1, -1} at PR ``k`` (bits/s/Hz)."""
    if not 1 <= k < eff.n_receivers:
        raise IndexError(f"PR index must be in 1..{eff.n_receivers - 1}, got {k}")
    gains = eff.gains(w)[:, k]
    return float(0.5 * np.sum(np.log2(1.0 + gains / noise_power)))


def rate_residuals(eff: EffectiveChannels, w: PrecoderLike, cfg: SystemConfig) -> np.ndarray:
    """|h_E,k(i)^H w|^2 - delta^2 Gamma_p, shape (K, 2), row k-1 column i."""
    gains = eff.gains(w)[:, 1:].T
    return gains - cfg.noise_power * cfg.gamma_p


def ber_constraint_residual(eff: EffectiveChannels, w: PrecoderLike, cfg: SystemConfig) -> float:
    gains = eff.gains(w)[:, 0]
    return float(gains[1] - cfg.lambda_s * gains[0] + (1.0 - cfg.lambda_s) * cfg.noise_power)


def transmit_power(w: PrecoderLike) -> float:
    vec = as_vector(w)
    return float(np.real(np.vdot(vec, vec)))


# ---------------------------------------------------------------------------
# Feasibility report
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class ConstraintCheck:
    name: str
    residual: float
    normalized: float
    passed: bool


def make_check(name: str, residual: float, noise_power: float, tol: float) -> ConstraintCheck:
    """Residual in watts; pass decided on the noise-normalized residual."""
    normalized = residual / noise_power
    return ConstraintCheck(name=name, residual=float(residual), normalized=float(normalized), passed=bool(normalized >= -tol))


def unit_modulus_check(phi: Optional[RisPhase], tol: float) -> ConstraintCheck:
    error = phi.max_modulus_error() if phi is not None else 0.0
    return ConstraintCheck(
        name="unit_modulus",
        residual=-error,
        normalized=-error,
        passed=bool(error <= max(tol, UNIT_MODULUS_TOL)),
    )


@dataclass(frozen=True)
class FeasibilityReport:
    checks: Tuple[ConstraintCheck, ...]
    power: float
    expected_rates: Tuple[float, ...] = ()
    ber: Optional[float] = None
    ber_target: Optional[float] = None
    ber_residuals: Tuple[float, ...] = ()

    @property
    def feasible(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def worst(self) -> float:
        return min((c.normalized for c in self.checks), default=0.0)

    @property
    def failed(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def by_name(self) -> Dict[str, ConstraintCheck]:
        return {c.name: c for c in self.checks}

    def residual_multiset(self, ndigits: int = 9) -> List[float]:
        return sorted(round(c.normalized, ndigits) for c in self.checks)


def check_feasibility(
    ch: ChannelSet,
    phi: RisPhase,
    w: PrecoderLike,
    cfg: SystemConfig,
    tol: float = 1e-6,
) -> FeasibilityReport:
    """Every constraint of the power-minimization problem with its residual.

    The BER entry passes when either orientation of the variance-ratio test
    holds (sigma1^2 >= lambda_s sigma0^2 or the companion inequality), since
    negating phi swaps the two branches without changing the detector.
    """
    if tol < 0:
        raise ValueError(f"tol must be >= 0, got {tol}")
    eff = stack_effective(ch, phi)
    gains = eff.gains(w)
    noise = cfg.noise_power
    floor = noise * cfg.gamma_p

    checks: List[ConstraintCheck] = []
    for k in range(1, ch.n_pr + 1):
        for i in (0, 1):
            checks.append(make_check(f"rate[k={k},i={i}]", gains[i, k] - floor, noise, tol))

    sigma0_sq, sigma1_sq = gains[0, 0] + noise, gains[1, 0] + noise
    forward = sigma1_sq - cfg.lambda_s * sigma0_sq
    companion = sigma0_sq - cfg.lambda_s * sigma1_sq
    checks.append(make_check("ber", max(forward, companion), noise, tol))
    checks.append(unit_modulus_check(phi, tol))

    rates = tuple(primary_rate(eff, w, noise, k) for k in range(1, ch.n_pr + 1))
    return FeasibilityReport(
        checks=tuple(checks),
        power=transmit_power(w),
        expected_rates=rates,
        ber=detector.ber_closed_form(sigma0_sq, sigma1_sq, cfg.t_symbols),
        ber_target=cfg.ber_target,
        ber_residuals=(float(forward), float(companion)),
    )


# ---------------------------------------------------------------------------
# Fixture I/O  (complex values as [re, im] pairs)
# ---------------------------------------------------------------------------
def encode_complex(arr: np.ndarray) -> List[Any]:
    arr = np.asarray(arr, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def decode_complex(data: Any, shape: Tuple[int, ...]) -> np.ndarray:
    raw = np.asarray(data, dtype=float)
    if raw.size == 0:
        return np.zeros(shape, dtype=complex)
    return (raw[..., 0] + 1j * raw[..., 1]).reshape(shape)


def channels_to_dict(ch: ChannelSet) -> Dict[str, Any]:
    return {
        "n_tx": ch.n_tx,
        "n_ris": ch.n_ris,
        "n_pr": ch.n_pr,
        "h_pr": encode_complex(ch.h_pr),
        "h_brx": encode_complex(ch.h_brx),
        "g_mat": encode_complex(ch.g_mat),
        "g_pr": encode_complex(ch.g_pr),
        "g_brx": encode_complex(ch.g_brx),
    }


def channels_from_dict(data: Dict[str, Any]) -> ChannelSet:
    n_tx, n_ris, n_pr = int(data["n_tx"]), int(data["n_ris"]), int(data["n_pr"])
    return ChannelSet(
        h_pr=decode_complex(data["h_pr"], (n_pr, n_tx)),
        h_brx=decode_complex(data["h_brx"], (n_tx,)),
        g_mat=decode_complex(data["g_mat"], (n_tx, n_ris)),
        g_pr=decode_complex(data["g_pr"], (n_pr, n_ris)),
        g_brx=decode_complex(data["g_brx"], (n_ris,)),
    )


def save_channels(ch: ChannelSet, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        yaml.safe_dump(channels_to_dict(ch), handle, default_flow_style=None, sort_keys=False)


def load_channels(path: Path) -> ChannelSet:
    with Path(path).open("r", encoding="utf-8") as handle:
        return channels_from_dict(yaml.safe_load(handle) or {})
