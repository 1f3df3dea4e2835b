"""Exception and warning types shared across the package."""


class UnilabError(Exception):
    """Base class for all package errors."""


class NonPowerOfTwo(UnilabError, ValueError):
    pass


class DimensionMismatch(UnilabError, ValueError):
    pass


class NoConvergence(UnilabError, RuntimeError):
    """An iterative routine hit its iteration cap.

    ``estimate`` carries the last iterate so callers can still use it.
    """

    def __init__(self, message, estimate=None):
        super().__init__(message)
        self.estimate = estimate


class InvalidL(UnilabError, ValueError):
    pass


class NegativeLambda(UnilabError, ValueError):
    pass


class ExplicitTooLarge(UnilabError, ValueError):
    pass


class BadAspect(UnilabError, ValueError):
    pass


class UnsupportedEnsemble(UnilabError, ValueError):
    pass


class UnsupportedKind(UnilabError, ValueError):
    pass


class BadGamma(UnilabError, ValueError):
    pass


class ProxDiverged(UnilabError, RuntimeError):
    pass


class ZeroSignal(UnilabError, ValueError):
    pass


class BadProbabilities(UnilabError, ValueError):
    pass


class NotDivergenceFree(UnilabError, ValueError):
    pass


class MCVarianceTooHigh(UnilabError, RuntimeError):
    pass


class BadDegree(UnilabError, ValueError):
    pass


class ConfigError(UnilabError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


class SingularSigma(UserWarning):
    """Covariance was singular; a pseudo-inverse was used instead."""


class NonPSDIntermediate(UserWarning):
    """A state-evolution covariance was projected back onto the PSD cone."""
