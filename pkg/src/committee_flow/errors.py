"""Exception types shared across the package."""


class CommitteeFlowError(Exception):
    """Base class for all errors raised by committee_flow."""


class DimensionError(CommitteeFlowError):
    """Array shapes do not match the declared network or state sizes."""


class DomainError(CommitteeFlowError):
    """A moment formula was evaluated outside its mathematical domain.

    Raised e.g. when an arcsin argument leaves [-1, 1] or a covariance
    block is not positive semi-definite beyond the round-off tolerance.
    """


class DivergenceError(CommitteeFlowError):
    """A closed-form asymptote or fixed-point solve diverges.

    Raised when a denominator crosses zero or the linearized fixed-point
    Jacobian is singular (learning rate at or beyond the divergence point).
    """


class IdxFormatError(CommitteeFlowError):
    """An IDX binary file is malformed or has an unexpected magic number."""


class ConfigError(CommitteeFlowError):
    """An experiment configuration is invalid."""
