from __future__ import annotations


class ConfigurationError(ValueError):
    """Invalid input: a config file, scenario geometry, or coupling setup."""


class SolverError(RuntimeError):
    """A numerical procedure failed to produce an admissible state."""
