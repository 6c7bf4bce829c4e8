"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration document violates the schema.

    The message names the offending key path.
    """


class SingularStepError(RuntimeError):
    """A step matrix has smallest singular value below the declared floor."""


class NonContractiveInverse(RuntimeError):
    """A nonlinear step could not be inverted to the requested residual."""


class NoDecayDetected(RuntimeError):
    """Expanding-scale terms show no decay, so no tail can be bounded."""


class CenterNotTrivial(RuntimeError):
    """An operation requiring a trivial center block found a nonzero one."""


class CertificateNotPassed(RuntimeError):
    """A solver was invoked with a certificate whose verdict is not a pass."""
