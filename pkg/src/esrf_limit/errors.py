"""Exception hierarchy shared by all modules."""


class EsrfError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(EsrfError, ValueError):
    """Bad grid, step size, sweep or config-file contents."""


class ModelValidationError(EsrfError, ValueError):
    """State-space model violates its invariants (non-PD noise, bad shapes...)."""


class DegenerateEnsembleError(EsrfError, ValueError):
    """Ensemble too small or with a singular covariance where one is needed."""

    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


class SingularCovarianceError(DegenerateEnsembleError):
    pass


class NotPSDError(EsrfError, ValueError):
    pass


class NotInvertibleError(EsrfError, ValueError):
    pass


class UnsupportedModelError(EsrfError, TypeError):
    """Operation needs a linear drift but got a Lipschitz one."""


class InvalidPostMultiplierError(EsrfError, ValueError):
    pass


class DivergenceError(EsrfError, RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


class FilterConsistencyError(EsrfError, RuntimeError):
    """Member update and closed-form mean update disagree."""


class FitUnavailable(EsrfError):
    """Too few usable rows for a log-log rate fit."""


class InputError(EsrfError, ValueError):
    """Arguments with mismatched dimensions."""
