"""
Result files of a run (particle snapshot, profiles, report, convergence
trace) and the refinement-ladder suite runner.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
import logging
import multiprocessing
import os
from collections.abc import Iterable, Iterator
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from schwarzmpm.bench import (
    BenchmarkScenario,
    ScenarioState,
    ScenarioSummary,
    build_scenario,
    particle_stress,
    run_to_equilibrium,
    summarize,
)
from schwarzmpm.config import SuiteConfig, dump_config, parse_config
from schwarzmpm.implicit_step import NewtonSettings
from schwarzmpm.schwarz import SchwarzSettings

logger = logging.getLogger("schwarzmpm.run")

spawn = multiprocessing.get_context("spawn")

PARTICLE_FIELDS = ["id", "subdomain", "x", "y", "vx", "vy", "F00", "F01", "F10", "F11", "sxx", "syy", "sxy"]
TRACE_FIELDS = [
    "frame",
    "kind",
    "subdomain",
    "schwarz_iteration",
    "substep",
    "newton_iteration",
    "residual_coarse",
    "residual_fine",
    "shifted_energy",
    "gradient_norm",
    "step_size",
    "newton_iterations",
    "velocity_max",
]
SUITE_FIELDS = [
    "fine_h",
    "coarse_h",
    "mode",
    "l2_error",
    "wall_s",
    "frames",
    "equilibrium_reached",
    "speedup",
    "error",
]


def format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _json_ready(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    if isinstance(value, np.ndarray):
        return _json_ready(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    return value


def write_csv(path: Path, fieldnames: list[str], rows: Iterable[dict[str, Any]]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as file:
        writer = csv.DictWriter(file, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({key: format_value(value) for key, value in row.items()})
    return path


def particle_rows(state: ScenarioState) -> Iterator[dict[str, Any]]:
    for label, subdomain in state.subdomains.items():
        particles = subdomain.particles
        stress = particle_stress(subdomain)
        for i in range(len(particles)):
            F = particles.F[i]
            yield {
                "id": i,
                "subdomain": label,
                "x": particles.x[i, 0],
                "y": particles.x[i, 1],
                "vx": particles.v[i, 0],
                "vy": particles.v[i, 1],
                "F00": F[0, 0],
                "F01": F[0, 1],
                "F10": F[1, 0],
                "F11": F[1, 1],
                "sxx": stress[i, 0],
                "syy": stress[i, 1],
                "sxy": stress[i, 2],
            }


def trace_rows(state: ScenarioState) -> Iterator[dict[str, Any]]:
    """
    One `schwarz` row per Schwarz iteration (a single `frame` row without
    coupling), followed by one `newton` row per recorded Newton iterate.
    `shifted_energy` is the incremental potential plus the constant
    `sum_i x~_i . f_i`; the solver minimizes it in that form.
    """
    for record in state.records:
        kind = "schwarz" if record.residuals else "frame"
        residuals = record.residuals or [(None, None)]
        for iteration, (coarse, fine) in enumerate(residuals, start=1):
            yield {
                "frame": record.frame,
                "kind": kind,
                "schwarz_iteration": iteration if record.residuals else 0,
                "residual_coarse": coarse,
                "residual_fine": fine,
                "newton_iterations": record.newton_iterations,
                "velocity_max": record.velocity_max,
            }
        for solve in record.solve_traces:
            for newton in solve.records:
                yield {
                    "frame": record.frame,
                    "kind": "newton",
                    "subdomain": solve.subdomain,
                    "schwarz_iteration": solve.schwarz_iteration,
                    "substep": solve.substep,
                    "newton_iteration": newton.iteration,
                    "shifted_energy": newton.energy,
                    "gradient_norm": newton.gradient_norm,
                    "step_size": newton.step_size,
                }


def build_report(state: ScenarioState, summary: ScenarioSummary) -> dict[str, Any]:
    metrics = summary.metrics
    return {
        "scenario": state.scenario.id,
        "mode": state.mode,
        "config": dump_config(state.scenario, state.schwarz, state.newton),
        "frames": state.frames,
        "equilibrium_reached": state.equilibrium_reached,
        "schwarz_iters_per_frame": [r.schwarz_iterations for r in state.records],
        "residuals_per_frame": [r.residuals for r in state.records],
        "newton_iterations_per_frame": [r.newton_iterations for r in state.records],
        "newton_iterations_total": sum(r.newton_iterations for r in state.records),
        "wall_s_per_phase": {label: dict(s.timings) for label, s in state.subdomains.items()},
        "total_wall_s": state.wall_s,
        "l2_error": metrics.get("l2_error"),
        "metrics": metrics,
    }


def emit_results(
    state: ScenarioState,
    out_dir: str | os.PathLike[str],
    summary: ScenarioSummary | None = None,
) -> dict[str, Path]:
    """Write the run's files into `out_dir` and return them by name."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = summary if summary is not None else summarize(state)
    written = {
        "particles": write_csv(out / "particles.csv", PARTICLE_FIELDS, particle_rows(state)),
        "convergence_trace": write_csv(out / "convergence_trace.csv", TRACE_FIELDS, trace_rows(state)),
    }
    for name, columns in summary.profiles.items():
        fieldnames = list(columns)
        rows = [dict(zip(fieldnames, values)) for values in zip(*columns.values())]
        written[f"profile_{name}"] = write_csv(out / f"profile_{name}.csv", fieldnames, rows)
    report = out / "report.json"
    report.write_text(json.dumps(_json_ready(build_report(state, summary)), indent=2) + "\n", encoding="utf-8")
    written["report"] = report
    logger.info("Results written to '%s'.", out)
    return written


@dataclass
class SuiteRow:
    fine_h: float
    coarse_h: float
    mode: str
    l2_error: float | None = None
    wall_s: float | None = None
    frames: int | None = None
    equilibrium_reached: bool | None = None
    speedup: float | None = None
    error: str | None = None


def run_case(scenario: BenchmarkScenario, schwarz: SchwarzSettings, newton: NewtonSettings) -> SuiteRow:
    d = scenario.discretization
    row = SuiteRow(fine_h=d.fine_h, coarse_h=d.coarse_h, mode=scenario.mode)
    try:
        state = build_scenario(scenario, schwarz, newton)
        run_to_equilibrium(state)
        metrics = summarize(state).metrics
    except Exception as exc:
        logger.exception("Suite case h=%s %s failed: %s", d.fine_h, scenario.mode, exc)
        row.error = f"{type(exc).__name__}: {exc}"
        return row
    l2_error = metrics.get("l2_error")
    row.l2_error = float(l2_error) if l2_error is not None else None
    row.wall_s = state.wall_s
    row.frames = state.frames
    row.equilibrium_reached = state.equilibrium_reached
    return row


def suite_cases(suite: SuiteConfig, scenario: BenchmarkScenario) -> list[BenchmarkScenario]:
    cases = []
    for level in suite.levels:
        for mode in suite.modes:
            case = copy.deepcopy(scenario)
            case.mode = mode
            base = scenario.discretization
            # dt / h stays fixed down the ladder
            case.discretization = dataclasses.replace(
                base, fine_h=level, coarse_h=suite.coarse_for(level), dt=base.dt * level / base.fine_h
            )
            cases.append(case)
    return cases


def _fill_speedups(rows: list[SuiteRow]) -> None:
    single = {row.fine_h: row for row in rows if row.mode == "single" and row.wall_s}
    for row in rows:
        match = single.get(row.fine_h)
        if row.mode == "dual" and row.wall_s and match is not None and match.wall_s:
            row.speedup = match.wall_s / row.wall_s


def run_suite(
    suite: SuiteConfig,
    out_dir: str | os.PathLike[str] | None = None,
    workers: int | None = None,
) -> list[SuiteRow]:
    """Run every ladder level in every mode; failed cases are recorded, not raised."""
    scenario, schwarz, newton = parse_config(suite.base)
    cases = suite_cases(suite, scenario)
    workers = workers or suite.workers
    logger.info("Running %d suite cases with %d worker(s).", len(cases), workers)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers, mp_context=spawn) as pool:
            rows = list(pool.map(run_case, cases, [schwarz] * len(cases), [newton] * len(cases)))
    else:
        rows = [run_case(case, schwarz, newton) for case in cases]
    _fill_speedups(rows)

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        table = [dataclasses.asdict(row) for row in rows]
        write_csv(out / "suite.csv", SUITE_FIELDS, table)
        (out / "suite.json").write_text(json.dumps(_json_ready(table), indent=2) + "\n", encoding="utf-8")
    return rows
