from __future__ import annotations

import os
from copy import deepcopy
from pathlib import Path
from typing import Any

import numpy as np
import pytest

from schwarzmpm.config import LOGGING_CONFIG
from schwarzmpm.constitutive import MaterialModel
from schwarzmpm.fields import Subdomain
from tests.utils import make_block

# Note: We explicitly turn the propagate on just for tests, because pytest
# caplog not able to capture no-propagate loggers.
#
# See also: https://github.com/pytest-dev/pytest/issues/3697
LOGGING_CONFIG["loggers"]["schwarzmpm"]["propagate"] = True
LOGGING_CONFIG["loggers"]["schwarzmpm.solver"]["propagate"] = True

RUN_SLOW = os.environ.get("SCHWARZMPM_SLOW") == "1"


def pytest_collection_modifyitems(config: pytest.Config, items: list[pytest.Item]) -> None:
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="benchmark run, set SCHWARZMPM_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="function")
def logging_config() -> dict[str, Any]:
    return deepcopy(LOGGING_CONFIG)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def material() -> MaterialModel:
    return MaterialModel(youngs_modulus=1e4, poisson_ratio=0.3, density=1000.0)


@pytest.fixture
def block(material: MaterialModel) -> Subdomain:
    return make_block((0.0, 0.0), (0.2, 0.1), 0.05, material)


@pytest.fixture
def write_config(tmp_path: Path):
    def write(text: str, name: str = "run.ini") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return write
