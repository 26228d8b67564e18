"""Random channel realizations: 3-D geometry, distance path loss and
i.i.d. Rayleigh small-scale fading."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from app.core.model import ChannelSet, SystemConfig

log = logging.getLogger(__name__)

Point = Tuple[float, float, float]

LINK_CLASSES = ("ptx_ris", "ris_brx", "ptx_brx", "ptx_pr", "ris_pr")
SHIFT_TARGETS = ("brx", "pr", "ris")


def pathloss_linear(d: float, exponent: float, ref_db: float) -> float:
    """Large-scale gain 10^(ref_db/10) * d^(-exponent), d in metres."""
    if not d > 0:
        raise ValueError(f"distance must be > 0, got {d}")
    if not exponent > 0:
        raise ValueError(f"path-loss exponent must be > 0, got {exponent}")
    return 10.0 ** (ref_db / 10.0) * d ** (-exponent)


def _point(raw: Iterable[float], name: str) -> Point:
    values = tuple(float(v) for v in raw)
    if len(values) != 3:
        raise ValueError(f"{name} must have 3 coordinates, got {len(values)}")
    return values  # type: ignore[return-value]


def _distance(a: Point, b: Point) -> float:
    return math.dist(a, b)


@dataclass(frozen=True)
class PathlossExponents:
    ptx_pr: float = 3.5
    ptx_brx: float = 3.5
    ptx_ris: float = 2.2
    ris_pr: float = 2.2
    ris_brx: float = 2.2

    def __post_init__(self) -> None:
        for name in LINK_CLASSES:
            if not getattr(self, name) > 0:
                raise ValueError(f"path-loss exponent '{name}' must be > 0, got {getattr(self, name)}")

    def as_dict(self) -> Dict[str, float]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class GeometryConfig:
    ptx_pos: Point = (0.0, 0.0, 10.0)
    ris_pos: Point = (50.0, 10.0, 10.0)
    brx_pos: Point = (52.0, 12.0, 1.5)
    pr_positions: Tuple[Point, ...] = ((50.0, 0.0, 1.5),)
    exponents: PathlossExponents = field(default_factory=PathlossExponents)
    pathloss_ref_db: float = -30.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "ptx_pos", _point(self.ptx_pos, "ptx_pos"))
        object.__setattr__(self, "ris_pos", _point(self.ris_pos, "ris_pos"))
        object.__setattr__(self, "brx_pos", _point(self.brx_pos, "brx_pos"))
        prs = tuple(_point(p, f"pr_positions[{i}]") for i, p in enumerate(self.pr_positions))
        object.__setattr__(self, "pr_positions", prs)
        for name, dist in self.distances().items():
            if isinstance(dist, tuple):
                if any(not d > 0 for d in dist):
                    raise ValueError(f"{name}: every distance must be > 0, got {dist}")
            elif not dist > 0:
                raise ValueError(f"{name}: distance must be > 0, got {dist}")

    @classmethod
    def default(cls, n_pr: int, **overrides: object) -> "GeometryConfig":
        """PRs spread evenly on x in [30, 70] at y = 0, height 1.5 (midpoint for K = 1)."""
        if n_pr < 1:
            raise ValueError(f"n_pr must be >= 1, got {n_pr}")
        xs = [50.0] if n_pr == 1 else list(np.linspace(30.0, 70.0, n_pr))
        prs = tuple((float(x), 0.0, 1.5) for x in xs)
        return cls(pr_positions=prs, **overrides)  # type: ignore[arg-type]

    @property
    def n_pr(self) -> int:
        return len(self.pr_positions)

    def distances(self) -> Dict[str, object]:
        return {
            "ptx_ris": _distance(self.ptx_pos, self.ris_pos),
            "ris_brx": _distance(self.ris_pos, self.brx_pos),
            "ptx_brx": _distance(self.ptx_pos, self.brx_pos),
            "ptx_pr": tuple(_distance(self.ptx_pos, p) for p in self.pr_positions),
            "ris_pr": tuple(_distance(self.ris_pos, p) for p in self.pr_positions),
        }

    def shifted(self, offset: float, targets: Sequence[str], direction: Sequence[float]) -> "GeometryConfig":
        """Move the named nodes by ``offset * direction`` (deployment sweeps)."""
        unknown = set(targets) - set(SHIFT_TARGETS)
        if unknown:
            raise ValueError(f"unknown shift targets {sorted(unknown)}; expected a subset of {SHIFT_TARGETS}")
        step = np.asarray(_point(direction, "direction")) * float(offset)

        def move(p: Point) -> Point:
            return tuple(float(v) for v in np.asarray(p) + step)  # type: ignore[return-value]

        changes: Dict[str, object] = {}
        if "brx" in targets:
            changes["brx_pos"] = move(self.brx_pos)
        if "ris" in targets:
            changes["ris_pos"] = move(self.ris_pos)
        if "pr" in targets:
            changes["pr_positions"] = tuple(move(p) for p in self.pr_positions)
        return dataclasses.replace(self, **changes)  # type: ignore[arg-type]

    def with_n_pr(self, n_pr: int) -> "GeometryConfig":
        """Same nodes with the PRs re-spread for a different K."""
        return dataclasses.replace(self, pr_positions=GeometryConfig.default(n_pr).pr_positions)

    def pathloss(self) -> Dict[str, np.ndarray]:
        """Linear large-scale gain per link class (arrays of length K for PR links)."""
        ref = self.pathloss_ref_db
        exps = self.exponents.as_dict()
        out: Dict[str, np.ndarray] = {}
        for name, dist in self.distances().items():
            ds = dist if isinstance(dist, tuple) else (dist,)
            out[name] = np.array([pathloss_linear(d, exps[name], ref) for d in ds])
        return out


def _rayleigh(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """CN(0, 1) entries."""
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def sample_channels(geo: GeometryConfig, cfg: SystemConfig, seed: int) -> ChannelSet:
    """One realization; every link class draws from its own spawned substream."""
    if geo.n_pr != cfg.n_pr:
        raise ValueError(f"geometry has {geo.n_pr} PRs but the system config has K={cfg.n_pr}")
    streams = dict(zip(LINK_CLASSES, np.random.SeedSequence(int(seed)).spawn(len(LINK_CLASSES))))
    rngs = {name: np.random.default_rng(s) for name, s in streams.items()}
    gain = geo.pathloss()
    n_tx, n_ris, n_pr = cfg.n_tx, cfg.n_ris, cfg.n_pr

    g_mat = _rayleigh(rngs["ptx_ris"], (n_tx, n_ris)) * math.sqrt(gain["ptx_ris"][0])
    g_brx = _rayleigh(rngs["ris_brx"], (n_ris,)) * math.sqrt(gain["ris_brx"][0])
    h_brx = _rayleigh(rngs["ptx_brx"], (n_tx,)) * math.sqrt(gain["ptx_brx"][0])
    h_pr = _rayleigh(rngs["ptx_pr"], (n_pr, n_tx)) * np.sqrt(gain["ptx_pr"])[:, None]
    g_pr = _rayleigh(rngs["ris_pr"], (n_pr, n_ris)) * np.sqrt(gain["ris_pr"])[:, None]
    log.debug("sampled channels seed=%d (N_t=%d, N_r=%d, K=%d)", seed, n_tx, n_ris, n_pr)
    return ChannelSet(h_pr=h_pr, h_brx=h_brx, g_mat=g_mat, g_pr=g_pr, g_brx=g_brx)
