"""Exception hierarchy.  Callers catch ``ModelPrivacyError`` to keep a scenario running."""


class ModelPrivacyError(Exception):
    pass


class ConfigurationError(ModelPrivacyError, ValueError):
    """Inputs violate a documented precondition (shapes, ranges, pairings)."""


class SingularDesignError(ModelPrivacyError):
    """Design matrix too ill-conditioned for a least-squares solve."""

    def __init__(self, message: str, condition_number: float = float("inf")):
        super().__init__(message)
        self.condition_number = condition_number


class ConvergenceError(ModelPrivacyError):
    def __init__(self, message: str, kkt_residual: float):
        super().__init__(message)
        self.kkt_residual = kkt_residual


class DegenerateTargetError(ModelPrivacyError):
    pass


class CalibrationError(ModelPrivacyError):
    pass


class FitError(ModelPrivacyError):
    pass
