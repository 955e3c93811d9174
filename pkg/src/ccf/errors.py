"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class CcfError(Exception):
    exit_code = 4


class ConfigError(CcfError, ValueError):
    """Bad run configuration: unknown column, degenerate split, invalid range."""

    exit_code = 2


class DataQualityError(CcfError, ValueError):
    """Input data cannot be used as given (non-finite entries, too few rows)."""

    exit_code = 2


class EmptySampleError(CcfError, ValueError):
    exit_code = 2


class SchemaError(CcfError, ValueError):
    """A saved model and a data file do not describe the same series."""

    exit_code = 3


class NumericError(CcfError, ArithmeticError):
    exit_code = 4


class SingularDesignError(NumericError):
    """The component design F(beta)'F(beta) is not invertible."""
