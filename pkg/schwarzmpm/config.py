from __future__ import annotations

import configparser
import dataclasses
import json
import logging
import logging.config
import os
from collections.abc import Callable
from configparser import RawConfigParser
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any

from schwarzmpm._exceptions import ConfigurationError
from schwarzmpm._types import ModeType
from schwarzmpm.bench import (
    GEOMETRY_KEYS,
    MODES,
    SCENARIOS,
    BenchmarkScenario,
    Discretization,
    LoadSpec,
    Termination,
)
from schwarzmpm.constitutive import MaterialModel
from schwarzmpm.implicit_step import NewtonSettings
from schwarzmpm.logging import TRACE_LOG_LEVEL
from schwarzmpm.schwarz import SchwarzSettings

LOG_LEVELS: dict[str, int] = {
    "critical": logging.CRITICAL,
    "error": logging.ERROR,
    "warning": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
    "trace": TRACE_LOG_LEVEL,
}

LOGGING_CONFIG: dict[str, Any] = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "default": {
            "()": "schwarzmpm.logging.DefaultFormatter",
            "fmt": "%(levelprefix)s %(subdomain)s%(message)s",
            "use_colors": None,
        },
        "solver": {
            "()": "schwarzmpm.logging.SolverFormatter",
            "fmt": "%(levelprefix)s %(subdomain)s%(message)s",
            "use_colors": None,
        },
    },
    "handlers": {
        "default": {
            "formatter": "default",
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
        },
        "solver": {
            "formatter": "solver",
            "class": "logging.StreamHandler",
            "stream": "ext://sys.stderr",
        },
    },
    "loggers": {
        "schwarzmpm": {"handlers": ["default"], "level": "INFO", "propagate": False},
        "schwarzmpm.run": {"level": "INFO"},
        "schwarzmpm.solver": {"handlers": ["solver"], "level": "INFO", "propagate": False},
    },
}

THREAD_VARIABLES = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")

logger = logging.getLogger("schwarzmpm.run")


class ConfigError(ConfigurationError):
    def __init__(self, message: str, source: str = "<config>", lineno: int | None = None) -> None:
        self.source = source
        self.lineno = lineno
        where = source if lineno is None else f"{source}, line {lineno}"
        super().__init__(f"{where}: {message}")


def _strict_int(raw: str) -> int:
    return int(raw.strip())


def _optional_str(raw: str) -> str | None:
    return raw.strip() or None


SECTION_KEYS: dict[str, dict[str, Callable[[str], Any]]] = {
    "scenario": {"id": str.strip, "mode": str.strip, "seed": _strict_int, "factory": _optional_str},
    "discretization": {
        "coarse_h": float,
        "fine_h": float,
        "dt": float,
        "substeps": _strict_int,
        "particles_per_cell": _strict_int,
        "padding": _strict_int,
        "jitter": float,
    },
    "load": {"gravity": float, "delta": float, "ramp_frames": _strict_int},
    "termination": {"max_frames": _strict_int, "static_tolerance": float},
    "schwarz": {
        "convergence_tolerance": float,
        "max_iterations": _strict_int,
        "regularization": float,
        "interface_mass": float,
        "layer_width": float,
        "absolute_tolerance": float,
    },
    "newton": {
        "max_iterations": _strict_int,
        "gradient_tolerance": float,
        "relative_tolerance": float,
        "shrink_factor": float,
        "min_step": float,
        "direct_solver_limit": _strict_int,
        "cg_tolerance": float,
    },
}
MATERIAL_KEYS = ("youngs_modulus", "poisson_ratio", "density")


class _LocatedConfig:
    """Parsed INI text that can point back at the line of a section or key."""

    def __init__(self, text: str, source: str) -> None:
        self.source = source
        self.lines = text.splitlines()
        self.parser = RawConfigParser(strict=True, delimiters=("=",), comment_prefixes=("#", ";"))
        self.parser.optionxform = str  # type: ignore[assignment,method-assign]
        try:
            self.parser.read_string(text, source=source)
        except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as exc:
            raise ConfigError(exc.message, source, exc.lineno) from None
        except configparser.MissingSectionHeaderError as exc:
            raise ConfigError("expected a [section] header", source, exc.lineno) from None
        except configparser.ParsingError as exc:
            lineno = exc.errors[0][0] if exc.errors else None
            raise ConfigError("malformed line", source, lineno) from None

    def lineno(self, section: str, key: str | None = None) -> int | None:
        current = None
        for number, line in enumerate(self.lines, start=1):
            stripped = line.strip()
            if stripped.startswith("[") and stripped.endswith("]"):
                current = stripped[1:-1].strip()
                if key is None and current == section:
                    return number
            elif current == section and key is not None and stripped.partition("=")[0].strip() == key:
                return number
        return None

    def error(self, message: str, section: str, key: str | None = None) -> ConfigError:
        return ConfigError(message, self.source, self.lineno(section, key))

    def section(self, name: str) -> dict[str, Any]:
        if not self.parser.has_section(name):
            return {}
        allowed = SECTION_KEYS[name]
        values: dict[str, Any] = {}
        for key, raw in self.parser.items(name):
            if key not in allowed:
                raise self.error(f"unknown key '{key}' in [{name}]", name, key)
            try:
                values[key] = allowed[key](raw)
            except ValueError:
                kind = "an integer" if allowed[key] is _strict_int else "a number"
                raise self.error(f"[{name}] {key} must be {kind}, got '{raw.strip()}'", name, key) from None
        return values


def _build(located: _LocatedConfig) -> tuple[BenchmarkScenario, SchwarzSettings, NewtonSettings]:
    parser = located.parser
    known = set(SECTION_KEYS) | {"geometry"}
    for name in parser.sections():
        if name not in known and not name.startswith("material."):
            raise located.error(f"unknown section [{name}]", name)

    head = located.section("scenario")
    if "id" not in head:
        raise located.error("missing required key 'id'", "scenario")
    scenario_id = head["id"]
    if scenario_id not in SCENARIOS:
        raise located.error(f"unknown scenario '{scenario_id}'", "scenario", "id")
    if head.get("mode", "dual") not in MODES:
        raise located.error(f"unknown mode '{head['mode']}'", "scenario", "mode")

    geometry: dict[str, float] = {}
    if parser.has_section("geometry"):
        allowed_geometry = GEOMETRY_KEYS.get(scenario_id)
        for key, raw in parser.items("geometry"):
            if allowed_geometry is not None and key not in allowed_geometry:
                raise located.error(f"unknown key '{key}' in [geometry]", "geometry", key)
            try:
                geometry[key] = float(raw)
            except ValueError:
                raise located.error(f"[geometry] {key} must be a number", "geometry", key) from None

    materials: dict[str, MaterialModel] = {}
    for name in parser.sections():
        if not name.startswith("material."):
            continue
        entries = dict(parser.items(name))
        for key in entries:
            if key not in MATERIAL_KEYS:
                raise located.error(f"unknown key '{key}' in [{name}]", name, key)
        missing = [key for key in MATERIAL_KEYS if key not in entries]
        if missing:
            raise located.error(f"[{name}] is missing {', '.join(missing)}", name)
        try:
            materials[name.removeprefix("material.")] = MaterialModel(*(float(entries[k]) for k in MATERIAL_KEYS))
        except ValueError as exc:
            raise located.error(str(exc) or f"[{name}] values must be numbers", name) from None

    try:
        scenario = BenchmarkScenario(
            id=scenario_id,
            mode=head.get("mode", "dual"),
            geometry=geometry,
            materials=materials,
            discretization=Discretization(**located.section("discretization")),
            load=LoadSpec(**located.section("load")),
            termination=Termination(**located.section("termination")),
            seed=head.get("seed", 0),
            factory=head.get("factory"),
        )
        scenario.validate()
        schwarz = SchwarzSettings(substeps=scenario.discretization.substeps, **located.section("schwarz"))
        newton = NewtonSettings(**located.section("newton"))
    except ConfigError:
        raise
    except ConfigurationError as exc:
        raise ConfigError(str(exc), located.source) from None
    return scenario, schwarz, newton


def parse_config_string(
    text: str, source: str = "<config>"
) -> tuple[BenchmarkScenario, SchwarzSettings, NewtonSettings]:
    return _build(_LocatedConfig(text, source))


def parse_config(path: str | os.PathLike[str]) -> tuple[BenchmarkScenario, SchwarzSettings, NewtonSettings]:
    """Read and validate a run config; missing keys take their defaults."""
    path = Path(path)
    return parse_config_string(path.read_text(encoding="utf-8"), str(path))


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def dump_config(scenario: BenchmarkScenario, schwarz: SchwarzSettings, newton: NewtonSettings) -> str:
    """Echo settings as config text that parses back to equal objects."""
    sections: list[tuple[str, dict[str, Any]]] = [
        ("scenario", {"id": scenario.id, "mode": scenario.mode, "seed": scenario.seed, "factory": scenario.factory}),
        ("geometry", dict(scenario.geometry)),
    ]
    for name, material in scenario.materials.items():
        sections.append((f"material.{name}", {key: getattr(material, key) for key in MATERIAL_KEYS}))
    sections += [
        ("discretization", dataclasses.asdict(scenario.discretization)),
        ("load", dataclasses.asdict(scenario.load)),
        ("termination", dataclasses.asdict(scenario.termination)),
        ("schwarz", {k: v for k, v in dataclasses.asdict(schwarz).items() if k != "substeps"}),
        ("newton", dataclasses.asdict(newton)),
    ]
    out: list[str] = []
    for name, values in sections:
        entries = [f"{key} = {_format(value)}" for key, value in values.items() if value is not None]
        if not entries and name == "geometry":
            continue
        out.append(f"[{name}]")
        out.extend(entries)
        out.append("")
    return "\n".join(out)


@dataclass
class SuiteConfig:
    base: Path
    levels: list[float]
    modes: list[ModeType] = field(default_factory=lambda: ["single", "dual"])
    coarse_factor: float = 2.0
    coarse_h: float | None = None
    workers: int = 1

    def coarse_for(self, fine_h: float) -> float:
        return self.coarse_h if self.coarse_h is not None else self.coarse_factor * fine_h


SUITE_KEYS = frozenset({"base", "levels", "modes", "coarse_factor", "coarse_h", "workers"})


def parse_suite(path: str | os.PathLike[str]) -> SuiteConfig:
    path = Path(path)
    located = _LocatedConfig(path.read_text(encoding="utf-8"), str(path))
    if not located.parser.has_section("suite"):
        raise ConfigError("missing [suite] section", str(path))
    entries = dict(located.parser.items("suite"))
    for key in entries:
        if key not in SUITE_KEYS:
            raise located.error(f"unknown key '{key}' in [suite]", "suite", key)
    for key in ("base", "levels"):
        if key not in entries:
            raise located.error(f"missing required key '{key}'", "suite")
    try:
        levels = [float(item) for item in entries["levels"].split(",") if item.strip()]
        modes = [item.strip() for item in entries.get("modes", "single, dual").split(",") if item.strip()]
        coarse_factor = float(entries.get("coarse_factor", 2.0))
        coarse_h = float(entries["coarse_h"]) if "coarse_h" in entries else None
        workers = int(entries.get("workers", "1"))
    except ValueError as exc:
        raise located.error(f"invalid [suite] value: {exc}", "suite") from None
    if not levels or any(level <= 0 for level in levels):
        raise located.error("levels must be a non-empty list of positive cell sizes", "suite", "levels")
    for mode in modes:
        if mode not in MODES:
            raise located.error(f"unknown mode '{mode}'", "suite", "modes")
    base = Path(entries["base"])
    if not base.is_absolute():
        base = path.parent / base
    return SuiteConfig(base, levels, modes, coarse_factor, coarse_h, max(1, workers))  # type: ignore[arg-type]


class Config:
    def __init__(
        self,
        config_path: str | os.PathLike[str] | None = None,
        *,
        out_dir: str | os.PathLike[str] | None = None,
        mode: ModeType | None = None,
        seed: int | None = None,
        env_file: str | os.PathLike[str] | None = None,
        log_config: dict[str, Any] | str | RawConfigParser | IO[Any] | None = LOGGING_CONFIG,
        log_level: str | int | None = None,
        use_colors: bool | None = None,
        threads: int | None = None,
        workers: int | None = None,
    ):
        self.config_path = Path(config_path) if config_path is not None else None
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.mode = mode
        self.seed = seed
        self.log_config = log_config
        self.log_level = log_level
        self.use_colors = use_colors
        self.threads = threads
        self.workers = workers or 1

        self.loaded = False
        self.configure_logging()

        if env_file is not None:
            from dotenv import load_dotenv

            logger.info("Loading environment from '%s'", env_file)
            load_dotenv(dotenv_path=env_file)

        if threads is None and "SCHWARZMPM_THREADS" in os.environ:
            self.threads = int(os.environ["SCHWARZMPM_THREADS"])
        if workers is None and "SCHWARZMPM_WORKERS" in os.environ:
            self.workers = int(os.environ["SCHWARZMPM_WORKERS"])

    def configure_logging(self) -> None:
        logging.addLevelName(TRACE_LOG_LEVEL, "TRACE")

        if self.log_config is not None:
            if isinstance(self.log_config, dict):
                if self.use_colors in (True, False):
                    self.log_config["formatters"]["default"]["use_colors"] = self.use_colors
                    self.log_config["formatters"]["solver"]["use_colors"] = self.use_colors
                logging.config.dictConfig(self.log_config)
            elif isinstance(self.log_config, str) and self.log_config.endswith(".json"):
                with open(self.log_config) as file:
                    loaded_config = json.load(file)
                    logging.config.dictConfig(loaded_config)
            elif isinstance(self.log_config, str) and self.log_config.endswith((".yaml", ".yml")):
                # Needs PyYAML, shipped with the `standard` extra.
                import yaml

                with open(self.log_config) as file:
                    loaded_config = yaml.safe_load(file)
                    logging.config.dictConfig(loaded_config)
            else:
                logging.config.fileConfig(self.log_config, disable_existing_loggers=False)

        if self.log_level is not None:
            if isinstance(self.log_level, str):
                log_level = LOG_LEVELS[self.log_level]
            else:
                log_level = self.log_level
            logging.getLogger("schwarzmpm").setLevel(log_level)
            logging.getLogger("schwarzmpm.run").setLevel(log_level)
            logging.getLogger("schwarzmpm.solver").setLevel(log_level)

    def apply_thread_limit(self) -> None:
        """Export the thread cap so BLAS and OpenMP in worker processes honour it."""
        if self.threads is None:
            return
        if self.threads < 1:
            raise ConfigurationError(f"Thread cap must be at least 1, got {self.threads}.")
        for name in THREAD_VARIABLES:
            os.environ[name] = str(self.threads)

    def load(self) -> None:
        assert not self.loaded
        if self.config_path is None:
            raise ConfigurationError("No run config given.")
        scenario, schwarz, newton = parse_config(self.config_path)
        if self.mode is not None:
            scenario.mode = self.mode
        if self.seed is not None:
            scenario.seed = self.seed
        scenario.validate()
        self.scenario = scenario
        self.schwarz = schwarz
        self.newton = newton
        self.apply_thread_limit()
        self.loaded = True
