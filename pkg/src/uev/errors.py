"""Exception hierarchy shared by every module."""


class UncertainEvidenceError(Exception):
    """Base class for all errors raised by :mod:`uev`."""


class ConfigError(UncertainEvidenceError, ValueError):
    """Invalid user-supplied configuration or parameters."""


class DimensionMismatch(ConfigError):
    pass


class BudgetTooSmall(ConfigError):
    pass


class DomainError(ConfigError):
    pass


class InvalidTable(ConfigError):
    pass


class UnsupportedCombination(UncertainEvidenceError):
    """The requested engine cannot handle this model/evidence pair."""


class InconsistentEvidence(UncertainEvidenceError):
    """Jeffrey's rule cannot be consistent with the base model."""


class InferenceError(UncertainEvidenceError):
    """Base class for failures during (approximate) inference."""


class ZeroMarginal(InferenceError):
    pass


class DegenerateEvidence(InferenceError):
    pass


class AllWeightsZero(InferenceError):
    pass


class InitOffSupport(InferenceError):
    pass


class NormalizerUnavailable(InferenceError):
    pass


class TooFewDraws(InferenceError):
    pass
