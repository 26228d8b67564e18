"""Experiment configuration: YAML loading, validation and unit conversion.

``config/config.example.yml`` is always read first and the user's file is
deep-merged on top.  All dB/dBm values are converted to linear units here;
``ExperimentConfig.resolved()`` echoes the converted values back out.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Tuple

import yaml

from app.channelgen import SHIFT_TARGETS, GeometryConfig, PathlossExponents, Point
from app.core import schema
from app.core.model import SystemConfig
from app.core.solver import SolverOptions
from app.core.specfun import SpecfunError

log = logging.getLogger(__name__)

REPO_ROOT = Path(__file__).resolve().parents[2]
DEFAULT_CONFIG_PATH = Path("config/config.yml")
DEFAULT_CONFIG_FALLBACK = REPO_ROOT / "config" / "config.example.yml"


class ConfigError(ValueError):
    """Invalid experiment configuration; ``errors`` lists every problem found."""

    def __init__(self, errors: List[str]) -> None:
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge *override* into *base*, returning a new dict.

    Dicts are merged key by key; for all other types (including lists) the
    override value wins outright, so ``experiment.systems`` is replaced as a
    whole while a partial ``solver`` section keeps the remaining defaults.
    """
    result = dict(base)
    for key, val in override.items():
        if key in result and isinstance(result[key], dict) and isinstance(val, dict):
            result[key] = _deep_merge(result[key], val)
        else:
            result[key] = val
    return result


def _read_yaml(path: Path) -> Dict[str, Any]:
    try:
        with path.open("r", encoding="utf-8") as handle:
            data = yaml.safe_load(handle) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: not valid YAML ({exc})"]) from exc
    if not isinstance(data, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    return data


def load_config(path: Optional[Path] = None) -> Dict[str, Any]:
    # Always load the example file first as a baseline of defaults.
    base: Dict[str, Any] = {}
    if DEFAULT_CONFIG_FALLBACK.exists():
        base = _read_yaml(DEFAULT_CONFIG_FALLBACK)

    path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    if not path.exists():
        if path != DEFAULT_CONFIG_PATH:
            raise ConfigError([f"config file {path} does not exist"])
        if base:
            log.info("%s not found, using %s as defaults", path, DEFAULT_CONFIG_FALLBACK)
        else:
            log.warning("No configuration found. Using built-in defaults.")
        return base

    # Deep-merge: user values win; new keys from the example fill in automatically.
    return _deep_merge(base, _read_yaml(path))


# ---------------------------------------------------------------------------
# Unit conversions
# ---------------------------------------------------------------------------
def db_to_linear(db: float) -> float:
    return 10.0 ** (float(db) / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((float(dbm) - 30.0) / 10.0)


def gamma_from_rate(rate_bps: float) -> float:
    """Gamma_p with log2(1 + Gamma_p) = r_p."""
    return 2.0 ** float(rate_bps) - 1.0


# ---------------------------------------------------------------------------
# Typed config
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class BerValidationConfig:
    ratios: Tuple[float, ...] = (1.0, 1.5, 2.0, 4.0, 8.0)
    t_values: Tuple[int, ...] = (10, 50)
    n_trials: int = 1_000_000
    seed: int = 7
    sigma_gate: float = 3.0


@dataclass(frozen=True)
class SweepPoint:
    value: Optional[float]
    system: SystemConfig
    geometry: GeometryConfig


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemConfig
    geometry: GeometryConfig
    solver: SolverOptions
    sweep_axis: str = "none"
    sweep_values: Tuple[float, ...] = ()
    deployment_targets: Tuple[str, ...] = ("brx",)
    deployment_direction: Point = (1.0, 0.0, 0.0)
    n_realizations: int = 1
    systems: Tuple[str, ...] = ("IDSR",)
    seed_base: int = 0
    output_dir: Path = Path("results")
    threads: int = 0
    write_traces: bool = False
    ber_validation: BerValidationConfig = field(default_factory=BerValidationConfig)

    def __post_init__(self) -> None:
        if self.n_realizations < 1:
            raise ConfigError([f"experiment.n_realizations must be >= 1, got {self.n_realizations}"])
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ConfigError([f"sweep.values must be non-empty for axis '{self.sweep_axis}'"])
        if not self.systems:
            raise ConfigError(["experiment.systems must name at least one system"])

    def with_overrides(
        self,
        output_dir: Optional[Path] = None,
        threads: Optional[int] = None,
        seed_base: Optional[int] = None,
    ) -> "ExperimentConfig":
        changes: Dict[str, Any] = {}
        if output_dir is not None:
            changes["output_dir"] = Path(output_dir)
        if threads is not None:
            if threads < 0:
                raise ConfigError([f"--threads must be >= 0, got {threads}"])
            changes["threads"] = int(threads)
        if seed_base is not None:
            changes["seed_base"] = int(seed_base)
        return dataclasses.replace(self, **changes) if changes else self

    def sweep_points(self) -> Iterator[SweepPoint]:
        if self.sweep_axis == "none":
            yield SweepPoint(None, self.system, self.geometry)
            return
        for value in self.sweep_values:
            if self.sweep_axis == "deployment":
                geo = self.geometry.shifted(value, self.deployment_targets, self.deployment_direction)
                yield SweepPoint(float(value), self.system, geo)
            elif self.sweep_axis == "n_pr":
                k = int(value)
                sys_cfg = dataclasses.replace(self.system, n_pr=k)
                yield SweepPoint(float(k), sys_cfg, self.geometry.with_n_pr(k))
            else:
                raise ConfigError([f"unknown sweep axis '{self.sweep_axis}'"])

    def resolved(self) -> Dict[str, Any]:
        """Plain-data view of the parsed config in linear units."""
        geo = self.geometry
        return {
            "system": dataclasses.asdict(self.system) | {
                "gamma_p_db": 10.0 * math.log10(self.system.gamma_p),
                "rate_target_bps": self.system.rate_target,
            },
            "geometry": {
                "ptx_pos": list(geo.ptx_pos),
                "ris_pos": list(geo.ris_pos),
                "brx_pos": list(geo.brx_pos),
                "pr_positions": [list(p) for p in geo.pr_positions],
                "pathloss_ref_db": geo.pathloss_ref_db,
                "pathloss_ref_linear": db_to_linear(geo.pathloss_ref_db),
                "exponents": geo.exponents.as_dict(),
                "deployment": {
                    "targets": list(self.deployment_targets),
                    "direction": list(self.deployment_direction),
                },
            },
            "solver": dataclasses.asdict(self.solver),
            "sweep": {"axis": self.sweep_axis, "values": list(self.sweep_values)},
            "experiment": {
                "n_realizations": self.n_realizations,
                "systems": list(self.systems),
                "seed_base": self.seed_base,
                "output_dir": str(self.output_dir),
                "threads": self.threads,
                "write_traces": self.write_traces,
            },
            "ber_validation": {
                "ratios": list(self.ber_validation.ratios),
                "t_values": list(self.ber_validation.t_values),
                "n_trials": self.ber_validation.n_trials,
                "seed": self.ber_validation.seed,
                "sigma_gate": self.ber_validation.sigma_gate,
            },
        }

    def dump_resolved(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as handle:
            yaml.safe_dump(self.resolved(), handle, default_flow_style=None, sort_keys=False)
        return path


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------
def _system_from_raw(raw: Dict[str, Any]) -> SystemConfig:
    if raw.get("rate_target_bps") is not None:
        gamma_p = gamma_from_rate(raw["rate_target_bps"])
    elif raw.get("gamma_p_db") is not None:
        gamma_p = db_to_linear(raw["gamma_p_db"])
    else:
        raise ConfigError(["system.gamma_p_db or system.rate_target_bps is required"])
    return SystemConfig.from_targets(
        n_tx=raw["n_tx"],
        n_ris=raw["n_ris"],
        n_pr=raw["n_pr"],
        t_symbols=raw["t_symbols"],
        noise_power=dbm_to_watts(raw["noise_power_dbm"]),
        gamma_p=gamma_p,
        ber_target=raw["ber_target"],
    )


def _geometry_from_raw(raw: Dict[str, Any], n_pr: int) -> GeometryConfig:
    exponents = PathlossExponents(**{k: float(v) for k, v in (raw.get("exponents") or {}).items()})
    common = {
        "ptx_pos": tuple(raw["ptx_pos"]),
        "ris_pos": tuple(raw["ris_pos"]),
        "brx_pos": tuple(raw["brx_pos"]),
        "exponents": exponents,
        "pathloss_ref_db": float(raw["pathloss_ref_db"]),
    }
    prs = raw.get("pr_positions") or []
    if not prs:
        return GeometryConfig.default(n_pr, **common)
    if len(prs) != n_pr:
        raise ConfigError([f"geometry.pr_positions lists {len(prs)} PRs but system.n_pr is {n_pr}"])
    return GeometryConfig(pr_positions=tuple(tuple(p) for p in prs), **common)


def parse_experiment(raw: Dict[str, Any]) -> ExperimentConfig:
    """Validate the merged YAML dict and build an ``ExperimentConfig``.

    Raises ``ConfigError`` listing every problem before anything is solved.
    """
    errors = schema.validate_config(raw)
    known = set(schema.CONFIG_SCHEMAS)
    errors += [f"unknown section '{name}'" for name in raw if name not in known]

    sweep = raw.get("sweep") or {}
    axis = sweep.get("axis", "none")
    values = list(sweep.get("values") or [])
    if axis != "none" and not values:
        errors.append(f"sweep.values must be non-empty for axis '{axis}'")
    if axis == "n_pr" and any(int(v) != v or v < 1 for v in values if schema.is_number(v)):
        errors.append(f"sweep.values must be positive integers for axis 'n_pr', got {values}")
    if errors:
        raise ConfigError(errors)

    system_raw = raw["system"]
    geometry_raw = raw["geometry"]
    experiment = raw["experiment"]
    deployment = geometry_raw.get("deployment") or {}
    ber_raw = raw.get("ber_validation") or {}

    try:
        system = _system_from_raw(system_raw)
        geometry = _geometry_from_raw(geometry_raw, system.n_pr)
        solver = SolverOptions(**(raw.get("solver") or {}))
        targets = tuple(deployment.get("targets") or ("brx",))
        unknown = set(targets) - set(SHIFT_TARGETS)
        if unknown:
            raise ConfigError([f"geometry.deployment.targets has unknown entries {sorted(unknown)}"])
        ber_defaults = BerValidationConfig()
        ber = BerValidationConfig(
            ratios=tuple(float(r) for r in ber_raw.get("ratios", ber_defaults.ratios)),
            t_values=tuple(int(t) for t in ber_raw.get("t_values", ber_defaults.t_values)),
            n_trials=int(ber_raw.get("n_trials", ber_defaults.n_trials)),
            seed=int(ber_raw.get("seed", ber_defaults.seed)),
            sigma_gate=float(ber_raw.get("sigma_gate", ber_defaults.sigma_gate)),
        )
        return ExperimentConfig(
            system=system,
            geometry=geometry,
            solver=solver,
            sweep_axis=axis,
            sweep_values=tuple(float(v) for v in values),
            deployment_targets=targets,
            deployment_direction=tuple(float(v) for v in deployment.get("direction", (1.0, 0.0, 0.0))),  # type: ignore[arg-type]
            n_realizations=int(experiment["n_realizations"]),
            systems=tuple(experiment["systems"]),
            seed_base=int(experiment["seed_base"]),
            output_dir=Path(experiment["output_dir"]),
            threads=int(experiment.get("threads") or 0),
            write_traces=bool(experiment.get("write_traces", False)),
            ber_validation=ber,
        )
    except ConfigError:
        raise
    except (SpecfunError, ValueError, TypeError, KeyError) as exc:
        raise ConfigError([str(exc)]) from exc


def load_experiment(path: Optional[Path] = None) -> ExperimentConfig:
    return parse_experiment(load_config(path))
