"""
Schema definitions for the experiment configuration file.

Each entry in CONFIG_SCHEMAS maps a config section name to a descriptor dict:
    {
        "label":       Human-readable section title
        "description": One-line summary
        "fields":      Ordered list of field descriptors
    }

Field descriptor keys:
    key       Dot-separated path within the section's config dict
              e.g. "exponents.ptx_pr" -> config["exponents"]["ptx_pr"]
    label     Human-readable label
    type      "int" | "number" | "select" | "toggle" | "text" | "point"
              | "points" | "number_list" | "select_list"
    help      Optional helper text
    required  Bool, the key must be present after merging with the example file
    options   Allowed values for "select" / "select_list"
    min/max   Optional numeric bounds (inclusive) for numbers and number lists
    min_exclusive  Bool, ``min`` itself is rejected
"""
from __future__ import annotations

from typing import Any, Dict, List

FieldDef = Dict[str, Any]
SectionSchema = Dict[str, Any]

SYSTEM_NAMES = ["IDSR", "WORIS", "WOBRx", "CSR"]
SWEEP_AXES = ["none", "deployment", "n_pr"]

_MISSING = object()

# ---------------------------------------------------------------------------
# Physical system
# ---------------------------------------------------------------------------
SYSTEM_SCHEMA: SectionSchema = {
    "label": "System",
    "description": "Array sizes, noise floor and QoS targets.",
    "fields": [
        {"key": "n_tx", "label": "PTx antennas (N_t)", "type": "int", "min": 1, "required": True},
        {"key": "n_ris", "label": "RIS elements (N_r)", "type": "int", "min": 1, "required": True},
        {"key": "n_pr", "label": "Primary receivers (K)", "type": "int", "min": 1, "required": True},
        {"key": "t_symbols", "label": "Symbols per backscatter symbol (T)", "type": "int", "min": 1, "required": True},
        {"key": "noise_power_dbm", "label": "Noise power (dBm)", "type": "number", "required": True},
        {
            "key": "gamma_p_db",
            "label": "Primary SNR target (dB)",
            "type": "number",
            "help": "Ignored when rate_target_bps is set.",
        },
        {
            "key": "rate_target_bps",
            "label": "Primary rate target (bit/s/Hz)",
            "type": "number",
            "min": 0.0,
            "min_exclusive": True,
            "help": "Gamma_p = 2^r_p - 1 when given.",
        },
        {
            "key": "ber_target",
            "label": "BRx BER target",
            "type": "number",
            "min": 0.0,
            "min_exclusive": True,
            "max": 0.5,
            "required": True,
        },
    ],
}

# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------
GEOMETRY_SCHEMA: SectionSchema = {
    "label": "Geometry",
    "description": "Node positions (metres) and large-scale path loss.",
    "fields": [
        {"key": "ptx_pos", "label": "PTx position", "type": "point", "required": True},
        {"key": "ris_pos", "label": "RIS position", "type": "point", "required": True},
        {"key": "brx_pos", "label": "BRx position", "type": "point", "required": True},
        {
            "key": "pr_positions",
            "label": "PR positions",
            "type": "points",
            "help": "Leave empty to spread K PRs evenly on x in [30, 70].",
        },
        {"key": "pathloss_ref_db", "label": "Path loss at 1 m (dB)", "type": "number", "required": True},
        {"key": "exponents.ptx_pr", "label": "PTx->PR exponent", "type": "number", "min": 0.0, "min_exclusive": True},
        {"key": "exponents.ptx_brx", "label": "PTx->BRx exponent", "type": "number", "min": 0.0, "min_exclusive": True},
        {"key": "exponents.ptx_ris", "label": "PTx->RIS exponent", "type": "number", "min": 0.0, "min_exclusive": True},
        {"key": "exponents.ris_pr", "label": "RIS->PR exponent", "type": "number", "min": 0.0, "min_exclusive": True},
        {"key": "exponents.ris_brx", "label": "RIS->BRx exponent", "type": "number", "min": 0.0, "min_exclusive": True},
        {
            "key": "deployment.targets",
            "label": "Nodes moved by the deployment sweep",
            "type": "select_list",
            "options": ["brx", "pr", "ris"],
        },
        {"key": "deployment.direction", "label": "Deployment direction", "type": "point"},
    ],
}

# ---------------------------------------------------------------------------
# Solver
# ---------------------------------------------------------------------------
SOLVER_SCHEMA: SectionSchema = {
    "label": "Solver",
    "description": "Penalty schedule and stopping rules.",
    "fields": [
        {"key": "rho_init", "label": "Initial penalty", "type": "number", "min": 0.0, "min_exclusive": True},
        {"key": "rho_growth", "label": "Penalty growth factor", "type": "number", "min": 1.0, "min_exclusive": True},
        {"key": "eps_inner", "label": "Inner tolerance", "type": "number", "min": 0.0, "min_exclusive": True},
        {"key": "eps_outer", "label": "Outer tolerance", "type": "number", "min": 0.0, "min_exclusive": True},
        {"key": "max_outer", "label": "Max outer iterations", "type": "int", "min": 1},
        {"key": "max_inner", "label": "Max inner iterations", "type": "int", "min": 1},
        {"key": "stall_window", "label": "Stall window (outer stages)", "type": "int", "min": 1},
        {"key": "feasibility_tol", "label": "Report tolerance", "type": "number", "min": 0.0},
        {"key": "seed", "label": "Initialization seed", "type": "int"},
    ],
}

# ---------------------------------------------------------------------------
# Sweep / experiment / BER validation
# ---------------------------------------------------------------------------
SWEEP_SCHEMA: SectionSchema = {
    "label": "Sweep",
    "description": "Which parameter the sweep varies.",
    "fields": [
        {"key": "axis", "label": "Axis", "type": "select", "options": SWEEP_AXES, "required": True},
        {"key": "values", "label": "Values", "type": "number_list"},
    ],
}

EXPERIMENT_SCHEMA: SectionSchema = {
    "label": "Experiment",
    "description": "Monte Carlo size, systems and outputs.",
    "fields": [
        {"key": "n_realizations", "label": "Realizations per point", "type": "int", "min": 1, "required": True},
        {"key": "systems", "label": "Systems", "type": "select_list", "options": SYSTEM_NAMES, "required": True},
        {"key": "seed_base", "label": "Seed base", "type": "int", "required": True},
        {"key": "output_dir", "label": "Output directory", "type": "text", "required": True},
        {"key": "threads", "label": "Worker threads (0 = physical cores)", "type": "int", "min": 0},
        {"key": "write_traces", "label": "Write per-run traces", "type": "toggle"},
    ],
}

BER_VALIDATION_SCHEMA: SectionSchema = {
    "label": "BER validation",
    "description": "Closed-form vs Monte Carlo grid.",
    "fields": [
        {"key": "ratios", "label": "Variance ratios", "type": "number_list", "min": 1.0},
        {"key": "t_values", "label": "T values", "type": "number_list", "min": 1},
        {"key": "n_trials", "label": "Trials per cell", "type": "int", "min": 1},
        {"key": "seed", "label": "Seed", "type": "int"},
        {"key": "sigma_gate", "label": "Pass gate (binomial sigmas)", "type": "number", "min": 0.0, "min_exclusive": True},
    ],
}

CONFIG_SCHEMAS: Dict[str, SectionSchema] = {
    "system": SYSTEM_SCHEMA,
    "geometry": GEOMETRY_SCHEMA,
    "solver": SOLVER_SCHEMA,
    "sweep": SWEEP_SCHEMA,
    "experiment": EXPERIMENT_SCHEMA,
    "ber_validation": BER_VALIDATION_SCHEMA,
}

SECTION_ORDER: List[str] = list(CONFIG_SCHEMAS)


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------
def set_nested(d: Dict[str, Any], dot_path: str, value: Any) -> None:
    """Set d[k1][k2][...] = value given a dot-separated path string."""
    parts = dot_path.split(".")
    for part in parts[:-1]:
        d = d.setdefault(part, {})
    d[parts[-1]] = value


def get_nested(d: Dict[str, Any], dot_path: str, default: Any = None) -> Any:
    """Get a value from a nested dict using a dot-separated path."""
    for part in dot_path.split("."):
        if not isinstance(d, dict) or part not in d:
            return default
        d = d[part]
    return d


def is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_bounds(field: FieldDef, value: float, where: str) -> List[str]:
    errors: List[str] = []
    low = field.get("min")
    if low is not None:
        if field.get("min_exclusive") and not value > low:
            errors.append(f"{where} must be > {low}, got {value}")
        elif not value >= low:
            errors.append(f"{where} must be >= {low}, got {value}")
    high = field.get("max")
    if high is not None and not value <= high:
        errors.append(f"{where} must be <= {high}, got {value}")
    return errors


def _check_point(value: Any, where: str) -> List[str]:
    if not isinstance(value, (list, tuple)) or len(value) != 3 or not all(is_number(v) for v in value):
        return [f"{where} must be a list of 3 numbers, got {value!r}"]
    return []


def validate_field(field: FieldDef, value: Any, where: str) -> List[str]:
    ftype = field["type"]
    if ftype == "int":
        if not isinstance(value, int) or isinstance(value, bool):
            return [f"{where} must be an integer, got {value!r}"]
        return _check_bounds(field, value, where)
    if ftype == "number":
        if not is_number(value):
            return [f"{where} must be a number, got {value!r}"]
        return _check_bounds(field, float(value), where)
    if ftype == "toggle":
        return [] if isinstance(value, bool) else [f"{where} must be true/false, got {value!r}"]
    if ftype == "text":
        return [] if isinstance(value, str) and value else [f"{where} must be a non-empty string, got {value!r}"]
    if ftype == "select":
        return [] if value in field["options"] else [f"{where} must be one of {field['options']}, got {value!r}"]
    if ftype == "point":
        return _check_point(value, where)
    if ftype == "points":
        if not isinstance(value, list):
            return [f"{where} must be a list of points, got {value!r}"]
        errors: List[str] = []
        for i, point in enumerate(value):
            errors += _check_point(point, f"{where}[{i}]")
        return errors
    if ftype == "number_list":
        if not isinstance(value, list) or not all(is_number(v) for v in value):
            return [f"{where} must be a list of numbers, got {value!r}"]
        errors = []
        for i, v in enumerate(value):
            errors += _check_bounds(field, float(v), f"{where}[{i}]")
        return errors
    if ftype == "select_list":
        if not isinstance(value, list) or not value:
            return [f"{where} must be a non-empty list, got {value!r}"]
        bad = [v for v in value if v not in field["options"]]
        return [f"{where} has unknown entries {bad}; allowed: {field['options']}"] if bad else []
    raise ValueError(f"schema field {where} has unknown type '{ftype}'")


def validate_config(raw: Dict[str, Any]) -> List[str]:
    """Every schema violation in ``raw`` as a list of messages (empty when valid)."""
    errors: List[str] = []
    for section in SECTION_ORDER:
        schema = CONFIG_SCHEMAS[section]
        section_cfg = raw.get(section)
        if section_cfg is None:
            section_cfg = {}
        if not isinstance(section_cfg, dict):
            errors.append(f"{section} must be a mapping, got {type(section_cfg).__name__}")
            continue
        for field in schema["fields"]:
            where = f"{section}.{field['key']}"
            value = get_nested(section_cfg, field["key"], _MISSING)
            if value is _MISSING or value is None:
                if field.get("required"):
                    errors.append(f"{where} is required")
                continue
            errors += validate_field(field, value, where)
    return errors
