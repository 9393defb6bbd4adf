"""Exception hierarchy shared by the package."""


class BdlimError(Exception):
    """Base class for all package errors."""


class ParameterError(BdlimError, ValueError):
    """An argument is outside its admissible range or has the wrong shape."""


class DataError(BdlimError, ValueError):
    """Input data are malformed or inconsistent with the model."""


class InsufficientDataError(DataError):
    pass


class DegenerateCovarianceError(BdlimError, ValueError):
    pass


class ConstraintError(BdlimError, ValueError):
    """A weight-coefficient vector violates the unit-norm / hemisphere constraint."""


class DispatchError(BdlimError, ValueError):
    """A sampler was asked to handle a pattern/family it does not support."""


class SamplerError(BdlimError, RuntimeError):
    """Raised when an MCMC engine cannot continue.

    ``chain_id`` is filled in by :func:`bdlim.samplers.run_chains`,
    ``state`` holds whatever diagnostic snapshot the sampler had and
    ``partial`` the draws stored before the failure, when there are any.
    """

    def __init__(self, message, state=None, chain_id=None, partial=None):
        super().__init__(message)
        self.state = state
        self.chain_id = chain_id
        self.partial = partial

    def __str__(self):
        msg = super().__str__()
        if self.chain_id is not None:
            msg = f"[chain {self.chain_id}] {msg}"
        return msg


class SamplerStuckError(SamplerError):
    pass


class SeparationError(SamplerError):
    """Logistic intercept ran away: the data are (quasi-)completely separated."""


class UnsupportedError(BdlimError, ValueError):
    pass
