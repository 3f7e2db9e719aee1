"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`MyosimError`,
so callers (and the CLI exit-code mapping) can catch the family at once.
"""


class MyosimError(Exception):
    """Base class for all package errors."""


class ConfigError(MyosimError):
    pass


class NonFiniteStateError(MyosimError, ValueError):
    def __init__(self, msg="non-finite state"):
        super().__init__(msg)


class IntegrationDivergedError(MyosimError, FloatingPointError):
    def __init__(self, msg="integration diverged"):
        super().__init__(msg)


class DegenerateActivationError(MyosimError, ValueError):
    def __init__(self, msg="degenerate activation bounds"):
        super().__init__(msg)


class SolverError(MyosimError):
    """Linear or nonlinear solver failure."""


class SingularSystemError(SolverError):
    def __init__(self, msg="singular tridiagonal system"):
        super().__init__(msg)


class SolverStalledError(SolverError):
    def __init__(self, msg="iterative solver stalled"):
        super().__init__(msg)


class ElementInversionError(SolverError):
    def __init__(self, msg="element inversion"):
        super().__init__(msg)


class MechanicsSolveError(SolverError):
    def __init__(self, msg="mechanics solve failed", history=None, iterations=0):
        super().__init__(msg)
        self.history = list(history or [])
        self.iterations = iterations


class MeshError(MyosimError, ValueError):
    pass


class OutsideMeshError(MeshError):
    def __init__(self, msg="fiber node outside mesh bounding box"):
        super().__init__(msg)


class DegenerateSegmentError(MeshError):
    def __init__(self, msg="degenerate fiber segment"):
        super().__init__(msg)


class InfeasibleLayoutError(MyosimError):
    def __init__(self, msg="infeasible layout"):
        super().__init__(msg)


class HaloProtocolError(MyosimError):
    def __init__(self, msg="halo protocol violation"):
        super().__init__(msg)


class DatasetError(MyosimError):
    """Problems reading or writing a dataset directory."""


class RegionConflictError(DatasetError):
    def __init__(self, msg="region conflict"):
        super().__init__(msg)


class QuantizationRangeError(DatasetError, ValueError):
    def __init__(self, msg="value out of quantization range"):
        super().__init__(msg)


class PayloadUnderrunError(DatasetError):
    def __init__(self, msg="payload underrun"):
        super().__init__(msg)


class SchemaViolationError(DatasetError):
    def __init__(self, msg="schema violation"):
        super().__init__(msg)


class AlreadyPresentError(DatasetError):
    def __init__(self, msg="already present"):
        super().__init__(msg)
