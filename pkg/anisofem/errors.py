# Copyright (c) anisofem contributors under Apache License 2.0 (see LICENSE.txt).
# Anisotropic interpolation error estimates on simplices

class AnisofemError(Exception):
    """Base class of all library errors."""


class DegenerateSimplexError(AnisofemError, ValueError):
    pass


class SingularMapError(AnisofemError, ValueError):
    pass


class ParameterError(AnisofemError, ValueError):
    pass


class QuadratureError(AnisofemError, ValueError):
    pass


class UnisolvenceError(AnisofemError, RuntimeError):
    pass


class MeshFormatError(AnisofemError, ValueError):
    pass


class UndefinedRatioError(AnisofemError, ValueError):
    pass


class NonconformingMeshError(AnisofemError):
    def __init__(self, message, offending=()):
        super().__init__(message)
        self.offending = list(offending)
