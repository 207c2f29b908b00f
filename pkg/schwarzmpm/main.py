from __future__ import annotations

import logging
import platform
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Any

import click
import numpy as np

import schwarzmpm
from schwarzmpm._exceptions import ConfigurationError, SolverError
from schwarzmpm.bench import build_scenario, run_to_equilibrium, summarize
from schwarzmpm.config import LOG_LEVELS, LOGGING_CONFIG, Config, parse_suite
from schwarzmpm.oracles import InclusionSolution, hertz_halfwidth, hertz_pressure, inclusion_stress, solve_elastica
from schwarzmpm.results import emit_results, format_value, run_suite
from schwarzmpm.selftest import run_selftest

LEVEL_CHOICES = click.Choice(list(LOG_LEVELS.keys()))
MODE_CHOICES = click.Choice(["single", "dual"])

EXIT_INVALID = 1
EXIT_SOLVER = 2
EXIT_IO = 3

logger = logging.getLogger("schwarzmpm.run")


def print_version(ctx: click.Context, param: click.Parameter, value: bool) -> None:
    if not value or ctx.resilient_parsing:
        return
    click.echo(
        "Running schwarzmpm {version} with {py_implementation} {py_version} on {system}".format(  # noqa: UP032
            version=schwarzmpm.__version__,
            py_implementation=platform.python_implementation(),
            py_version=platform.python_version(),
            system=platform.system(),
        )
    )
    ctx.exit()


@contextmanager
def exit_codes() -> Iterator[None]:
    """Map the package's failures onto the documented process exit codes."""
    try:
        yield
    except ConfigurationError as exc:
        logger.error("Invalid input: %s", exc)
        sys.exit(EXIT_INVALID)
    except SolverError as exc:
        logger.error("Solver failure: %s", exc)
        sys.exit(EXIT_SOLVER)
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        sys.exit(EXIT_IO)


def echo_table(columns: dict[str, Any]) -> None:
    names = list(columns)
    click.echo(",".join(names))
    for values in zip(*columns.values()):
        click.echo(",".join(format_value(v) for v in values))


@click.group(context_settings={"auto_envvar_prefix": "SCHWARZMPM"})
@click.option(
    "--env-file",
    type=click.Path(exists=True),
    default=None,
    help="Environment configuration file.",
    show_default=True,
)
@click.option(
    "--log-config",
    type=click.Path(exists=True),
    default=None,
    help="Logging configuration file. Supported formats: .ini, .json, .yaml.",
    show_default=True,
)
@click.option(
    "--log-level",
    type=LEVEL_CHOICES,
    default=None,
    help="Log level. [default: info]",
    show_default=True,
)
@click.option(
    "--use-colors/--no-use-colors",
    default=None,
    help="Enable/Disable colorized logging.",
)
@click.option(
    "--threads",
    type=int,
    default=None,
    help="Cap BLAS/OpenMP threads in worker processes. Defaults to $SCHWARZMPM_THREADS if available.",
)
@click.option(
    "--version",
    is_flag=True,
    callback=print_version,
    expose_value=False,
    is_eager=True,
    help="Display the schwarzmpm version and exit.",
)
@click.pass_context
def main(
    ctx: click.Context,
    env_file: str | None,
    log_config: str | None,
    log_level: str | None,
    use_colors: bool | None,
    threads: int | None,
) -> None:
    """Implicit MPM with overlapping Schwarz space-time refinement."""
    ctx.obj = {
        "env_file": env_file,
        "log_config": LOGGING_CONFIG if log_config is None else log_config,
        "log_level": log_level,
        "use_colors": use_colors,
        "threads": threads,
    }


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="results", show_default=True)
@click.option("--mode", type=MODE_CHOICES, default=None, help="Override scenario.mode.")
@click.option("--seed", type=int, default=None, help="Override scenario.seed (seeding jitter).")
@click.pass_obj
def run(obj: dict[str, Any], config_path: str, out_dir: str, mode: str | None, seed: int | None) -> None:
    """Run one scenario to equilibrium and write its results."""
    with exit_codes():
        config = Config(config_path, out_dir=out_dir, mode=mode, seed=seed, **obj)  # type: ignore[arg-type]
        config.load()
        state = build_scenario(config.scenario, config.schwarz, config.newton)
        outcome = run_to_equilibrium(state)
        summary = summarize(state)
        assert config.out_dir is not None
        emit_results(state, config.out_dir, summary)
        l2_error = summary.metrics.get("l2_error")
        click.echo(
            f"{state.scenario.id} ({state.mode}): {outcome.frames} frames, {outcome.reason}, "
            f"l2_error={format_value(l2_error) or 'n/a'}"
        )


@main.command()
@click.argument("suite_path", type=click.Path())
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default="results", show_default=True)
@click.option(
    "--workers",
    type=int,
    default=None,
    help="Number of worker processes. Defaults to the suite's workers key or $SCHWARZMPM_WORKERS.",
)
@click.pass_obj
def suite(obj: dict[str, Any], suite_path: str, out_dir: str, workers: int | None) -> None:
    """Run a refinement ladder in single and dual mode."""
    with exit_codes():
        config = Config(out_dir=out_dir, workers=workers, **obj)
        config.apply_thread_limit()
        suite_config = parse_suite(suite_path)
        chosen = workers or (config.workers if config.workers > 1 else suite_config.workers)
        rows = run_suite(suite_config, out_dir, chosen)
        failed = [row for row in rows if row.error]
        click.echo(f"{len(rows)} suite rows, {len(failed)} failed.")


@main.group()
def oracle() -> None:
    """Print reference solutions as CSV."""


@oracle.command()
@click.option("--gamma", type=float, required=True, help="Gravito-bending parameter.")
@click.option("--samples", type=int, default=101, show_default=True)
def elastica(gamma: float, samples: int) -> None:
    with exit_codes():
        solution = solve_elastica(gamma, samples)
        click.echo(f"# aspect_ratio={format_value(solution.aspect_ratio)}")
        echo_table({"s": solution.s, "theta": solution.theta, "x": solution.x, "y": solution.y})


@oracle.command()
@click.option("--force", type=float, required=True, help="Force per unit length (N/m).")
@click.option("--radius", type=float, required=True, help="Cylinder radius (m).")
@click.option("--youngs-modulus", type=float, required=True, help="Young's modulus (Pa).")
@click.option("--poisson-ratio", type=float, required=True)
@click.option("--points", type=int, default=41, show_default=True)
def hertz(force: float, radius: float, youngs_modulus: float, poisson_ratio: float, points: int) -> None:
    with exit_codes():
        b = hertz_halfwidth(force, radius, youngs_modulus, poisson_ratio)
        x = np.linspace(-1.25 * b, 1.25 * b, points)
        click.echo(f"# half_width={format_value(b)}")
        echo_table({"x": x, "pressure": hertz_pressure(force, radius, youngs_modulus, poisson_ratio, x)})


@oracle.command()
@click.option("--radius", type=float, required=True, help="Inclusion radius (m).")
@click.option("--youngs-in", type=float, required=True)
@click.option("--poisson-in", type=float, required=True)
@click.option("--youngs-out", type=float, required=True)
@click.option("--poisson-out", type=float, required=True)
@click.option("--delta", type=float, required=True, help="Isotropic misfit strain.")
@click.option("--extent", type=float, default=4.0, show_default=True, help="Profile half-length in radii.")
@click.option("--points", type=int, default=81, show_default=True)
def inclusion(
    radius: float,
    youngs_in: float,
    poisson_in: float,
    youngs_out: float,
    poisson_out: float,
    delta: float,
    extent: float,
    points: int,
) -> None:
    with exit_codes():
        solution = InclusionSolution(radius, youngs_in, poisson_in, youngs_out, poisson_out, delta)
        x = np.linspace(-extent * radius, extent * radius, points)
        stress = inclusion_stress(solution, np.stack([x, np.zeros_like(x)], axis=-1))
        click.echo(f"# pressure={format_value(solution.pressure)}")
        echo_table({"x": x, "sxx": stress[:, 0], "syy": stress[:, 1], "sxy": stress[:, 2]})


@main.command()
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--samples", type=int, default=100, show_default=True)
@click.pass_obj
def selftest(obj: dict[str, Any], seed: int, samples: int) -> None:
    """Run the kernel, transfer, constitutive and Newton property checks."""
    with exit_codes():
        Config(**obj)
        results = run_selftest(seed, samples)
    for result in results:
        click.echo(f"{'ok' if result.passed else 'FAILED'}  {result.name}: {result.detail}")
    if not all(result.passed for result in results):
        sys.exit(EXIT_INVALID)


if __name__ == "__main__":
    main()  # pragma: no cover
