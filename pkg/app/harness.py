"""Experiment runner: Monte Carlo sweeps, convergence traces, BER validation.

Every realization's seed is ``seed_base + r``; jobs run on a thread pool and
results are sorted by job index before anything is written, so the output
files depend only on the config (``timings.csv`` excepted).
"""
from __future__ import annotations

import csv
import dataclasses
import logging
import math
import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import psutil
import yaml

from app.channelgen import sample_channels
from app.core import detector
from app.core.config import ExperimentConfig, SweepPoint
from app.core.model import Precoder, RisPhase, decode_complex, encode_complex
from app.core.solver import SolveResult, write_trace_csv
from app.core.system_manager import SystemManager

log = logging.getLogger(__name__)

RUN_COLUMNS = (
    "point_index", "sweep_value", "realization", "seed", "system", "status", "feasible",
    "power_w", "power_dbm", "outer_iterations", "inner_iterations", "eq_violation",
    "restore_scale", "error",
)
SUMMARY_COLUMNS = (
    "sweep_axis", "sweep_value", "system", "n_runs", "n_used", "n_infeasible",
    "n_nonconverged", "n_failed", "mean_power_w", "median_power_w", "mean_power_dbm",
)
TIMING_COLUMNS = ("point_index", "realization", "system", "wall_time_s")
BER_COLUMNS = (
    "label", "ratio", "t_symbols", "closed_form", "monte_carlo", "half_width_99",
    "binomial_sigma", "n_trials", "errors", "passed",
)


# ---------------------------------------------------------------------------
# Jobs and records
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class RunJob:
    index: int
    point_index: int
    point: SweepPoint
    realization: int
    seed: int


@dataclass(frozen=True)
class RunRecord:
    job_index: int
    point_index: int
    sweep_value: Optional[float]
    realization: int
    seed: int
    system: str
    status: str
    feasible: bool
    power: float
    outer_iterations: int
    inner_iterations: int
    eq_violation: float
    restore_scale: float
    wall_time: float
    error: str = ""
    w: Optional[np.ndarray] = None
    phi: Optional[np.ndarray] = None

    @property
    def usable(self) -> bool:
        """Counted in the mean/median power: feasible and converged."""
        return self.feasible and self.status == "converged"


@dataclass
class ExperimentOutcome:
    records: List[RunRecord]
    summary: List[Dict[str, Any]]
    paths: Dict[str, Path]


def _fmt(value: Any) -> Any:
    if isinstance(value, float):
        return repr(float(value))
    if value is None:
        return ""
    return value


def _write_csv(path: Path, columns: Sequence[str], rows: Iterable[Dict[str, Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row.get(col)) for col in columns])
    return path


def watts_to_dbm(power: float) -> float:
    return 10.0 * math.log10(power) + 30.0 if power > 0 else -math.inf


def default_threads() -> int:
    return psutil.cpu_count(logical=False) or psutil.cpu_count() or 1


def _prepare_output(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        marker = out / ".write_test"
        marker.write_text("", encoding="utf-8")
        marker.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out} is not writable: {exc}") from exc
    return out


def build_jobs(cfg: ExperimentConfig) -> List[RunJob]:
    jobs: List[RunJob] = []
    for p_idx, point in enumerate(cfg.sweep_points()):
        for r in range(cfg.n_realizations):
            jobs.append(RunJob(index=len(jobs), point_index=p_idx, point=point, realization=r, seed=cfg.seed_base + r))
    return jobs


def _record(job: RunJob, system: str, result: Optional[SolveResult], wall: float, error: str = "") -> RunRecord:
    if result is None:
        return RunRecord(
            job_index=job.index, point_index=job.point_index, sweep_value=job.point.value,
            realization=job.realization, seed=job.seed, system=system, status="failed",
            feasible=False, power=math.nan, outer_iterations=0, inner_iterations=0,
            eq_violation=math.nan, restore_scale=math.nan, wall_time=wall, error=error,
        )
    return RunRecord(
        job_index=job.index, point_index=job.point_index, sweep_value=job.point.value,
        realization=job.realization, seed=job.seed, system=system, status=result.status,
        feasible=result.feasible, power=result.power, outer_iterations=result.outer_iterations,
        inner_iterations=result.inner_iterations, eq_violation=result.eq_violation,
        restore_scale=result.restore_scale, wall_time=wall, w=np.array(result.w.w), phi=np.array(result.phi.phases),
    )


def _trace_path(out: Path, system: str, job: RunJob, single: bool) -> Path:
    if single:
        return out / f"trace_{system}.csv"
    return out / "traces" / f"trace_{system}_p{job.point_index}_r{job.realization}.csv"


def run_job(
    job: RunJob,
    cfg: ExperimentConfig,
    manager: SystemManager,
    trace_dir: Optional[Path] = None,
    single: bool = False,
) -> List[RunRecord]:
    """Sample the realization once and solve every selected system on it."""
    sys_cfg = job.point.system
    opts = dataclasses.replace(cfg.solver, seed=job.seed)
    try:
        ch = sample_channels(job.point.geometry, sys_cfg, job.seed)
    except Exception as exc:
        log.warning("channel sampling failed for point %d seed %d: %s", job.point_index, job.seed, exc, exc_info=True)
        return [_record(job, name, None, 0.0, error=str(exc)) for name in cfg.systems]

    records: List[RunRecord] = []
    for name in cfg.systems:
        started = time.perf_counter()
        try:
            result = manager.get(name).solve(ch, sys_cfg, opts)
        except Exception as exc:
            log.warning("%s failed on point %d seed %d: %s", name, job.point_index, job.seed, exc, exc_info=True)
            records.append(_record(job, name, None, time.perf_counter() - started, error=str(exc)))
            continue
        wall = time.perf_counter() - started
        if not (result.feasible and result.converged):
            log.warning(
                "%s point %d seed %d: status=%s feasible=%s (worst normalized residual %.3g)",
                name, job.point_index, job.seed, result.status, result.feasible, result.report.worst,
            )
        if trace_dir is not None:
            write_trace_csv(result.trace, _trace_path(trace_dir, result.system, job, single))
        records.append(_record(job, name, result, wall))
    return records


def _execute(jobs: List[RunJob], cfg: ExperimentConfig, manager: SystemManager, trace_dir: Optional[Path], single: bool) -> List[RunRecord]:
    threads = cfg.threads or default_threads()
    if threads <= 1 or len(jobs) <= 1:
        batches = [run_job(job, cfg, manager, trace_dir, single) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(lambda job: run_job(job, cfg, manager, trace_dir, single), jobs))
    order = {name: i for i, name in enumerate(cfg.systems)}
    records = [rec for batch in batches for rec in batch]
    return sorted(records, key=lambda rec: (rec.job_index, order[rec.system]))


# ---------------------------------------------------------------------------
# Aggregation and files
# ---------------------------------------------------------------------------
def summarize(records: Sequence[RunRecord], cfg: ExperimentConfig) -> List[Dict[str, Any]]:
    rows: List[Dict[str, Any]] = []
    points = sorted({(rec.point_index, rec.sweep_value) for rec in records}, key=lambda p: p[0])
    for p_idx, value in points:
        for name in cfg.systems:
            runs = [rec for rec in records if rec.point_index == p_idx and rec.system == name]
            used = [rec.power for rec in runs if rec.usable]
            mean = statistics.fmean(used) if used else math.nan
            rows.append({
                "sweep_axis": cfg.sweep_axis,
                "sweep_value": value,
                "system": name,
                "n_runs": len(runs),
                "n_used": len(used),
                "n_infeasible": sum(1 for rec in runs if rec.status != "failed" and not rec.feasible),
                "n_nonconverged": sum(1 for rec in runs if rec.status not in ("converged", "failed")),
                "n_failed": sum(1 for rec in runs if rec.status == "failed"),
                "mean_power_w": mean,
                "median_power_w": statistics.median(used) if used else math.nan,
                "mean_power_dbm": watts_to_dbm(mean) if used else math.nan,
            })
    return rows


def _run_row(rec: RunRecord) -> Dict[str, Any]:
    return {
        "point_index": rec.point_index,
        "sweep_value": rec.sweep_value,
        "realization": rec.realization,
        "seed": rec.seed,
        "system": rec.system,
        "status": rec.status,
        "feasible": rec.feasible,
        "power_w": rec.power,
        "power_dbm": watts_to_dbm(rec.power) if rec.power == rec.power else math.nan,
        "outer_iterations": rec.outer_iterations,
        "inner_iterations": rec.inner_iterations,
        "eq_violation": rec.eq_violation,
        "restore_scale": rec.restore_scale,
        "error": rec.error,
    }


def write_results_dump(records: Sequence[RunRecord], cfg: ExperimentConfig, path: Path) -> Path:
    """(w, phi) per run as [re, im] pairs so every run can be re-verified."""
    runs = []
    for rec in records:
        runs.append({
            "point_index": rec.point_index,
            "sweep_value": rec.sweep_value,
            "realization": rec.realization,
            "seed": rec.seed,
            "system": rec.system,
            "status": rec.status,
            "feasible": rec.feasible,
            "power": None if rec.power != rec.power else rec.power,
            "w": encode_complex(rec.w) if rec.w is not None else None,
            "phi": encode_complex(rec.phi) if rec.phi is not None else None,
        })
    with path.open("w", encoding="utf-8") as handle:
        yaml.safe_dump({"sweep_axis": cfg.sweep_axis, "runs": runs}, handle, default_flow_style=None, sort_keys=False)
    return path


def run_experiment(
    cfg: ExperimentConfig,
    manager: Optional[SystemManager] = None,
    single: bool = False,
) -> ExperimentOutcome:
    """Every (sweep point, realization, system); writes the CSVs and the dump."""
    out = _prepare_output(cfg)
    manager = manager or SystemManager(enabled_systems=cfg.systems).load_systems()
    paths: Dict[str, Path] = {"resolved_config": cfg.dump_resolved(out / "resolved_config.yml")}

    jobs = build_jobs(cfg)
    log.info(
        "Running %d realizations x %d systems over %d sweep point(s) (axis=%s)",
        cfg.n_realizations, len(cfg.systems), len({j.point_index for j in jobs}), cfg.sweep_axis,
    )
    started = time.perf_counter()
    trace_dir = out if (cfg.write_traces or single) else None
    records = _execute(jobs, cfg, manager, trace_dir, single)
    elapsed = time.perf_counter() - started

    summary = summarize(records, cfg)
    for row in summary:
        log.info(
            "point %s %s: %d/%d used, mean power %s dBm",
            row["sweep_value"], row["system"], row["n_used"], row["n_runs"],
            "n/a" if row["n_used"] == 0 else f"{row['mean_power_dbm']:.3f}",
        )

    paths["summary"] = _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    paths["runs"] = _write_csv(out / "runs.csv", RUN_COLUMNS, (_run_row(rec) for rec in records))
    paths["timings"] = _write_csv(
        out / "timings.csv",
        TIMING_COLUMNS,
        ({"point_index": r.point_index, "realization": r.realization, "system": r.system, "wall_time_s": r.wall_time} for r in records),
    )
    paths["results"] = write_results_dump(records, cfg, out / "results.yml")
    rss_mb = psutil.Process().memory_info().rss / 2**20
    log.info("Wrote %s in %.1fs (rss %.0f MiB)", ", ".join(p.name for p in paths.values()), elapsed, rss_mb)
    return ExperimentOutcome(records=records, summary=summary, paths=paths)


def run_single(cfg: ExperimentConfig, manager: Optional[SystemManager] = None) -> ExperimentOutcome:
    """One realization (seed_base) at the first sweep point, with traces."""
    points = list(cfg.sweep_points())
    first = points[0]
    single_cfg = dataclasses.replace(
        cfg, system=first.system, geometry=first.geometry, sweep_axis="none", sweep_values=(), n_realizations=1,
    )
    return run_experiment(single_cfg, manager, single=True)


@dataclass
class ConvergenceOutcome:
    results: Dict[str, SolveResult]
    paths: Dict[str, Path]


def run_convergence(cfg: ExperimentConfig, manager: Optional[SystemManager] = None) -> ConvergenceOutcome:
    """Per-iteration traces of every selected system on realization seed_base."""
    out = _prepare_output(cfg)
    manager = manager or SystemManager(enabled_systems=cfg.systems).load_systems()
    point = next(iter(cfg.sweep_points()))
    seed = cfg.seed_base
    ch = sample_channels(point.geometry, point.system, seed)
    opts = dataclasses.replace(cfg.solver, seed=seed)

    results: Dict[str, SolveResult] = {}
    paths: Dict[str, Path] = {"resolved_config": cfg.dump_resolved(out / "resolved_config.yml")}
    for name in cfg.systems:
        result = manager.get(name).solve(ch, point.system, opts)
        results[result.system] = result
        paths[result.system] = write_trace_csv(result.trace, out / f"trace_{result.system}.csv")
        log.info(
            "%s: %d trace rows, final violation %.3g, status %s",
            result.system, len(result.trace), result.eq_violation, result.status,
        )
    return ConvergenceOutcome(results=results, paths=paths)


# ---------------------------------------------------------------------------
# BER validation
# ---------------------------------------------------------------------------
def _ber_cells(cfg: ExperimentConfig) -> List[Tuple[str, float, int]]:
    ber_cfg = cfg.ber_validation
    cells = [("grid", float(ratio), int(t)) for t in ber_cfg.t_values for ratio in ber_cfg.ratios]
    target = cfg.system.ber_target
    if target < 0.5:
        for t in ber_cfg.t_values:
            cells.append(("lambda_s", detector.solve_lambda_s(target, int(t)), int(t)))
    return cells


def run_ber_validation(cfg: ExperimentConfig, workers: Optional[int] = None) -> Tuple[List[Dict[str, Any]], Path]:
    """Closed form vs Monte Carlo on the configured (ratio, T) grid plus the lambda_s rows."""
    out = _prepare_output(cfg)
    ber_cfg = cfg.ber_validation
    cells = _ber_cells(cfg)
    seeds = np.random.SeedSequence(ber_cfg.seed).generate_state(len(cells))
    workers = workers or cfg.threads or default_threads()

    rows: List[Dict[str, Any]] = []
    for (label, ratio, t), seed in zip(cells, seeds):
        # equal variances: every rule errs half the time; simulate at the limiting threshold T*sigma^2
        threshold = float(t) if ratio == 1.0 else None
        mc = detector.simulate_energy_detection(1.0, ratio, t, ber_cfg.n_trials, int(seed), workers=workers, threshold=threshold)
        passed = mc.agrees(ber_cfg.sigma_gate)
        if not passed:
            log.warning("BER mismatch at ratio=%.6g T=%d: closed %.6g vs MC %.6g", ratio, t, mc.closed_form, mc.ber)
        rows.append({
            "label": label,
            "ratio": ratio,
            "t_symbols": t,
            "closed_form": mc.closed_form,
            "monte_carlo": mc.ber,
            "half_width_99": mc.half_width,
            "binomial_sigma": mc.binomial_sigma,
            "n_trials": mc.n_trials,
            "errors": mc.errors,
            "passed": passed,
        })
    path = _write_csv(out / "ber_validation.csv", BER_COLUMNS, rows)
    log.info("BER validation: %d/%d cells pass, written to %s", sum(r["passed"] for r in rows), len(rows), path)
    return rows, path


# ---------------------------------------------------------------------------
# Re-verification
# ---------------------------------------------------------------------------
def verify_results(dump_path: Path, cfg: ExperimentConfig, manager: Optional[SystemManager] = None) -> List[Dict[str, Any]]:
    """Reload (w, phi) from a dump, regenerate the channels and re-check every
    run reported feasible.  Returns the runs that no longer pass."""
    with Path(dump_path).open("r", encoding="utf-8") as handle:
        dump = yaml.safe_load(handle) or {}
    manager = manager or SystemManager().load_systems()
    points = list(cfg.sweep_points())
    tol = cfg.solver.feasibility_tol

    failures: List[Dict[str, Any]] = []
    for run in dump.get("runs", []):
        if not run.get("feasible"):
            continue
        point = points[int(run["point_index"])]
        sys_cfg = point.system
        ch = sample_channels(point.geometry, sys_cfg, int(run["seed"]))
        w = Precoder(decode_complex(run["w"], (sys_cfg.n_tx,)))
        phi = RisPhase(decode_complex(run["phi"], (sys_cfg.n_ris,)))
        report = manager.get(run["system"]).check(ch, phi, w, sys_cfg, tol)
        if not report.feasible:
            failures.append({**{k: run[k] for k in ("point_index", "realization", "seed", "system")}, "failed": report.failed})
    if failures:
        log.warning("%d run(s) failed re-verification", len(failures))
    return failures
