# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices

from .errors import (
    AnisofemError,
    DegenerateSimplexError,
    MeshFormatError,
    NonconformingMeshError,
    ParameterError,
    QuadratureError,
    SingularMapError,
    UndefinedRatioError,
    UnisolvenceError,
)
from .config import DEFAULT_CONFIG, get_config

__version__ = "0.1.0"

__all__ = [
    "AnisofemError",
    "DegenerateSimplexError",
    "MeshFormatError",
    "NonconformingMeshError",
    "ParameterError",
    "QuadratureError",
    "SingularMapError",
    "UndefinedRatioError",
    "UnisolvenceError",
    "DEFAULT_CONFIG",
    "get_config",
]
