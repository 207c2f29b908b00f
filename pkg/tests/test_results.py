from __future__ import annotations

import csv
import json
import logging
from collections.abc import Callable
from pathlib import Path

import numpy as np
import pytest

from schwarzmpm.bench import BenchmarkScenario, FrameRecord, ScenarioState, build_scenario, run_to_equilibrium
from schwarzmpm.config import SuiteConfig, parse_config
from schwarzmpm.implicit_step import SolveTrace, TraceRecord
from schwarzmpm.results import (
    PARTICLE_FIELDS,
    TRACE_FIELDS,
    SuiteRow,
    emit_results,
    format_value,
    run_case,
    run_suite,
    suite_cases,
    trace_rows,
)
from tests.utils import TINY_BAR

WriteConfig = Callable[..., Path]


def tiny_state(write_config: WriteConfig, gravity: float = 0.0, max_frames: int = 10) -> ScenarioState:
    scenario, schwarz, newton = parse_config(write_config(TINY_BAR.format(gravity=gravity, max_frames=max_frames)))
    state = build_scenario(scenario, schwarz, newton)
    run_to_equilibrium(state)
    return state


def read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as file:
        return list(csv.DictReader(file))


@pytest.mark.parametrize(
    "value, expected",
    [(None, ""), (True, "true"), (np.bool_(False), "false"), (np.float64(0.1), "0.10000000000000001"), (3, "3")],
)
def test_format_value(value: object, expected: str) -> None:
    assert format_value(value) == expected


def test_emit_results(write_config: WriteConfig, tmp_path: Path) -> None:
    state = tiny_state(write_config)
    written = emit_results(state, tmp_path / "out")

    assert set(written) == {"particles", "convergence_trace", "report"}
    particles = read_rows(written["particles"])
    assert list(particles[0]) == PARTICLE_FIELDS
    assert len(particles) == 32
    assert {row["subdomain"] for row in particles} == {"B"}
    assert float(particles[0]["F00"]) == pytest.approx(1.0)

    trace = read_rows(written["convergence_trace"])
    assert list(trace[0]) == TRACE_FIELDS
    assert [row["kind"] for row in trace if row["kind"] != "newton"] == ["frame"]
    assert trace[0]["residual_coarse"] == ""
    newton = [row for row in trace if row["kind"] == "newton"]
    assert newton and all(row["subdomain"] == "B" for row in newton)
    assert newton[0]["newton_iteration"] == "0"

    report = json.loads(written["report"].read_text())
    assert report["scenario"] == "custom"
    assert report["mode"] == "single"
    assert report["equilibrium_reached"] is True
    assert report["frames"] == 1
    assert report["l2_error"] is None
    assert report["schwarz_iters_per_frame"] == [0]
    assert report["total_wall_s"] >= 0.0
    assert "p2g" in report["wall_s_per_phase"]["B"]
    assert "factory = tests.importer.factories:tiny_bar" in report["config"]


def test_frame_cap_is_reported(write_config: WriteConfig, tmp_path: Path) -> None:
    state = tiny_state(write_config, gravity=9.81, max_frames=2)
    report = json.loads(emit_results(state, tmp_path)["report"].read_text())

    assert report["equilibrium_reached"] is False
    assert report["frames"] == 2
    assert report["schwarz_iters_per_frame"] == [0, 0]
    assert len(report["newton_iterations_per_frame"]) == 2


def test_results_are_reproducible(write_config: WriteConfig, tmp_path: Path) -> None:
    first = emit_results(tiny_state(write_config, gravity=9.81, max_frames=2), tmp_path / "first")
    second = emit_results(tiny_state(write_config, gravity=9.81, max_frames=2), tmp_path / "second")

    for name in ("particles", "convergence_trace"):
        assert first[name].read_bytes() == second[name].read_bytes()


def test_trace_rows_expand_schwarz_and_newton_iterations(write_config: WriteConfig) -> None:
    state = tiny_state(write_config)
    traces = [
        SolveTrace("B", 1, 0, [TraceRecord(0, 2.0, 1e-3, 0.0), TraceRecord(1, 1.5, 1e-9, 1.0)]),
        SolveTrace("S", 1, 2, [TraceRecord(0, -1.0, 1e-10, 0.0)]),
    ]
    state.records = [FrameRecord(0, 2, [(0.1, 0.2), (1e-6, 2e-6)], 5, 0.3, 0.01, traces)]

    rows = list(trace_rows(state))

    assert [row["kind"] for row in rows] == ["schwarz", "schwarz", "newton", "newton", "newton"]
    assert [row["schwarz_iteration"] for row in rows[:2]] == [1, 2]
    assert rows[1]["residual_fine"] == 2e-6
    assert all(row["newton_iterations"] == 5 for row in rows[:2])
    assert [(row["subdomain"], row["substep"], row["newton_iteration"]) for row in rows[2:]] == [
        ("B", 0, 0),
        ("B", 0, 1),
        ("S", 2, 0),
    ]
    assert [row["shifted_energy"] for row in rows[2:]] == [2.0, 1.5, -1.0]
    assert rows[3]["step_size"] == 1.0


def test_suite_cases() -> None:
    suite = SuiteConfig(Path("run.ini"), [0.02, 0.01], coarse_factor=4.0)
    cases = suite_cases(suite, BenchmarkScenario(id="hertz"))

    assert [(c.discretization.fine_h, c.discretization.coarse_h, c.mode) for c in cases] == [
        (0.02, 0.08, "single"),
        (0.02, 0.08, "dual"),
        (0.01, 0.04, "single"),
        (0.01, 0.04, "dual"),
    ]
    assert [c.discretization.dt for c in cases] == pytest.approx([0.1, 0.1, 0.05, 0.05])
    assert [c.discretization.dt / c.discretization.fine_h for c in cases] == pytest.approx([5.0] * 4)


def test_run_case_records_failures(write_config: WriteConfig) -> None:
    scenario, schwarz, newton = parse_config(write_config(TINY_BAR.format(gravity=0.0, max_frames=1)))
    scenario.factory = "tests.importer.factories:not_a_state"

    row = run_case(scenario, schwarz, newton)

    assert row.error is not None and row.error.startswith("ConfigurationError: ")
    assert row.wall_s is None


def test_run_case_records_unexpected_errors(write_config: WriteConfig, caplog: pytest.LogCaptureFixture) -> None:
    scenario, schwarz, newton = parse_config(write_config(TINY_BAR.format(gravity=0.0, max_frames=1)))
    scenario.factory = "tests.importer.factories:broken"

    with caplog.at_level(logging.ERROR, logger="schwarzmpm.run"):
        row = run_case(scenario, schwarz, newton)

    assert row.error == "RuntimeError: singular factor"
    assert row.wall_s is None
    assert caplog.records[-1].exc_info is not None


def test_run_suite(write_config: WriteConfig, tmp_path: Path) -> None:
    write_config(TINY_BAR.format(gravity=0.0, max_frames=3))
    suite = SuiteConfig(tmp_path / "run.ini", [0.05, 0.025])

    rows = run_suite(suite, tmp_path / "suite")

    assert [(row.fine_h, row.mode) for row in rows] == [
        (0.05, "single"),
        (0.05, "dual"),
        (0.025, "single"),
        (0.025, "dual"),
    ]
    assert all(row.error is None and row.equilibrium_reached for row in rows)
    assert all(row.speedup is None for row in rows if row.mode == "single")
    assert all(row.speedup is not None and row.speedup > 0 for row in rows if row.mode == "dual")

    table = read_rows(tmp_path / "suite" / "suite.csv")
    assert len(table) == 4
    assert table[0]["equilibrium_reached"] == "true"
    assert json.loads((tmp_path / "suite" / "suite.json").read_text())[1]["mode"] == "dual"


def test_suite_row_defaults() -> None:
    row = SuiteRow(fine_h=0.01, coarse_h=0.02, mode="dual")
    assert row.speedup is None and row.error is None
