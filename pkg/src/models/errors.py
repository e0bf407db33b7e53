class AggregationError(Exception):
    """Base class for errors raised by the aggregation toolkit."""

    exit_code = 1


class DataError(AggregationError, ValueError):
    """Input data is malformed, non-finite or inconsistent."""

    exit_code = 2


class ModelFileError(DataError):
    """A serialized model file is corrupt or has an unsupported version."""


class NumericError(AggregationError, ArithmeticError):
    """A numerical procedure could not produce a usable result."""

    exit_code = 3
