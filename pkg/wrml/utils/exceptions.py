"""
This file is part of the WRML ensemble sampling toolkit.

Notes
-----
This module defines the exception hierarchy shared by all WRML modules.
Numerical failures derive from NumericalError so that callers (and the CLI)
can tell them apart from invalid inputs and configuration problems.
"""


class WRMLError(Exception):
    """
    Base class of every error raised by WRML.
    """

    pass


class ConfigError(WRMLError, ValueError):
    pass


class DimensionMismatch(WRMLError, ValueError):
    pass


class InsufficientReplicates(WRMLError, ValueError):
    pass


class EmptyGrid(WRMLError, ValueError):
    pass


class NumericalError(WRMLError):
    """
    Base class of the failures that come from the numerics rather than from the inputs.
    """

    pass


class NonPositiveEmbedding(NumericalError):
    def __init__(self, min_eigenvalue: float, max_eigenvalue: float, shape: tuple):
        self.min_eigenvalue = min_eigenvalue
        self.max_eigenvalue = max_eigenvalue
        self.shape = shape
        super().__init__(
            "Circulant embedding of shape {} is not nonnegative definite: "
            "minimum eigenvalue {:.6g} (maximum {:.6g}). "
            "Enlarge the embedding or the grid spacing.".format(
                shape, min_eigenvalue, max_eigenvalue
            )
        )


class SingularSystem(NumericalError):
    pass


class CFLViolation(NumericalError):
    pass


class LinearSolveFailure(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class NonFiniteInput(NumericalError):
    pass


class UnnormalizedWeights(NumericalError):
    pass


class DegenerateEnsemble(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class DegenerateBasis(NumericalError):
    pass


class MaxIterationsExceeded(NumericalError):
    pass


class StageError(WRMLError):
    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__("Stage <{}> failed: {}".format(stage, cause))
