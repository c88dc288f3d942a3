"""Exception types shared across the package."""


class HfaError(Exception):
    """Base class for all package errors."""


class EigenvalueAtMu(HfaError):
    """The chemical potential sits on (or too close to) an eigenvalue.

    Raised by spectral projections when the requested energy threshold is
    within the gap tolerance of the spectrum, which signals a closed gap or
    a resonant chemical potential.
    """


class NoGap(HfaError):
    """No interior spectral gap above the detection threshold."""


class ResolventSingular(HfaError):
    """Resolvent requested at an energy too close to the spectrum."""


class GapTooSmall(HfaError):
    """Contraction estimate inapplicable: interaction too large for the gap."""


class MaxIterExceeded(HfaError):
    """Self-consistent iteration ran out of iterations.

    Carries the partial result (with its residual trace) for diagnosis.
    """

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class ResonantBox(HfaError):
    """A resolvent-decay check was requested on a resonant box."""


class ConfigError(HfaError):
    """Invalid run configuration; the message names the offending key."""
