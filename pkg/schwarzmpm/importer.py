from __future__ import annotations

import importlib
from collections.abc import Callable
from typing import Any

from schwarzmpm._exceptions import ConfigurationError


class ScenarioImportError(ConfigurationError):
    pass


def import_from_string(import_str: Any) -> Any:
    if not isinstance(import_str, str):
        return import_str

    module_str, _, attrs_str = import_str.partition(":")
    if not module_str or not attrs_str:
        raise ScenarioImportError(f'Scenario factory "{import_str}" must be in format "<module>:<attribute>".')

    try:
        module = importlib.import_module(module_str)
    except ModuleNotFoundError as exc:
        if exc.name != module_str:
            raise exc from None
        raise ScenarioImportError(f'Could not import module "{module_str}".')

    instance = module
    try:
        for attr_str in attrs_str.split("."):
            instance = getattr(instance, attr_str)
    except AttributeError:
        raise ScenarioImportError(f'Attribute "{attrs_str}" not found in module "{module_str}".')

    return instance


def import_factory(import_str: Any) -> Callable[..., Any]:
    factory = import_from_string(import_str)
    if not callable(factory):
        raise ScenarioImportError(f'Scenario factory "{import_str}" is not callable.')
    return factory
