from __future__ import annotations

from typing import Literal

import numpy as np
import numpy.typing as npt

FloatArray = npt.NDArray[np.float64]
IntArray = npt.NDArray[np.intp]
BoolArray = npt.NDArray[np.bool_]

SubdomainLabel = Literal["B", "S"]
ScenarioId = Literal["cantilever", "hertz", "inclusion", "custom"]
ModeType = Literal["single", "dual"]
CollisionMode = Literal["sticky", "slip"]
