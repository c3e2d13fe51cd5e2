# infra/errors.py
"""
Error hierarchy shared by the numerical engines, services and CLI handlers.
Every error carries the process exit code the CLI maps it to.
"""

from typing import List, Optional


class PreintError(Exception):
    """Base class for all failures raised by this package"""

    exit_code = 1


class ConfigError(PreintError, ValueError):
    """Config file missing, unparsable or failing validation"""

    exit_code = 2


class ImuCsvError(PreintError, ValueError):
    """Malformed or non-monotone IMU CSV input"""

    exit_code = 2

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class OutputError(PreintError, OSError):
    exit_code = 2


class IntrinsicsError(PreintError, ValueError):
    """Calibration or noise parameters violating their invariants"""

    exit_code = 2


class IntegrationError(PreintError, ValueError):
    """Measurement that cannot be integrated (non-positive dt, NaN)"""


class CovarianceConditionError(PreintError, ArithmeticError):
    pass


class TrajectoryRangeError(PreintError, ValueError):
    pass


class SceneError(PreintError, ValueError):
    """Synthetic scene too poorly constrained to estimate from"""


class RankDeficientError(PreintError, ArithmeticError):
    """Normal equations singular beyond the fixed gauge"""

    exit_code = 4

    def __init__(self, null_dimensions: List[str]):
        self.null_dimensions = list(null_dimensions)
        shown = ", ".join(self.null_dimensions[:12])
        more = "" if len(self.null_dimensions) <= 12 else f" (+{len(self.null_dimensions) - 12} more)"
        super().__init__(f"normal equations rank-deficient along: {shown}{more}")


class StatisticalFailure(PreintError):
    exit_code = 3


class EstimatorDivergence(PreintError):
    exit_code = 4
