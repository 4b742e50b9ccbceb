"""
Exception hierarchy shared by every module.

Each error also derives from the builtin it refines, so callers that only know
about ``ValueError``/``KeyError`` keep working.
"""
from typing import Optional


class ReconstructionError(Exception):
    """Base class for all errors raised by this package"""


class SimplexLookupError(ReconstructionError, KeyError):
    """Unknown simplex id or vertex tuple"""


class DimensionMismatchError(ReconstructionError, ValueError):
    """Chains of different dimension combined"""


class FiltrationError(ReconstructionError, ValueError):
    """A face does not precede its coface, or a filtration is malformed"""


class ArgumentError(ReconstructionError, ValueError):
    """An operation was called with arguments violating its precondition"""


class TopologyError(ReconstructionError, ValueError):
    """Surface is open, non-manifold, disconnected or not watertight"""


class InconsistencyError(ReconstructionError, ValueError):
    """Derived combinatorial quantity is impossible (e.g. half-integer genus)"""


class ConformanceError(ReconstructionError, ValueError):
    """Volumetric complex does not contain the surface as a subcomplex"""


class FrameError(ReconstructionError, ValueError):
    """Loop frame is undefined (collinear or too few vertices)"""


class ConfigurationError(ReconstructionError, ValueError):
    """Invalid configuration value or degenerate reference geometry"""


class ParseError(ReconstructionError, ValueError):
    """Malformed input file; remembers where the problem was found"""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(f"{where}{message}")


class PipelineStageError(ReconstructionError, RuntimeError):
    """Failure inside run_pipeline, labelled with the stage that raised it"""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
