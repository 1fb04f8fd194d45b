"""Error taxonomy shared by the library and the CLI exit-code mapping."""


class PBANError(Exception):
    """Base class for every error raised on purpose by this package."""


class ParameterError(PBANError, ValueError):
    """Invalid hyperparameter or argument value."""


class ContractError(PBANError, RuntimeError):
    """A caller broke an API contract (non-scalar backward root, missing gradient...)."""


class DimensionError(PBANError, ValueError):
    """Tensor shapes do not fit together."""


class DataError(PBANError):
    """Input data is inconsistent (size mismatch in a pair, no patches, empty manifest)."""


class FormatError(DataError):
    """A file does not follow the expected format."""


class DecodeError(DataError):
    """A file follows the expected format but its payload is truncated or corrupt."""


class NumericError(PBANError, ArithmeticError):
    """A computation produced or would produce a non-finite value."""


class UndefinedMetricError(NumericError):
    """A correlation metric is undefined on the given sample."""


class FitDegenerateError(NumericError):
    """The five-parameter logistic fit cannot be set up on the given sample."""


class UnknownOpError(ParameterError, LookupError):
    """The named operator is not registered for gradient checking."""
