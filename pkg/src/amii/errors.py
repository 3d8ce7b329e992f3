"""Exception taxonomy shared by all amii modules.

The CLI maps these onto process exit codes: ConfigError -> 2,
DataError -> 3, NumericError -> 4.
"""


class AmiiError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(AmiiError):
    """Invalid configuration key, value, or combination."""


class ParameterError(ConfigError):
    """A function argument is outside its documented domain."""


class DataError(AmiiError):
    """Input data is malformed, inconsistent, or insufficient."""


class SchemaError(DataError):
    """A CSV or file is missing required columns/fields."""


class SplitError(DataError):
    """A participant-disjoint dataset split cannot be constructed."""


class TruncationError(DataError):
    """An input stream ended before the requested output was produced."""


class FormatError(DataError):
    """A binary artifact (checkpoint) has bad magic, version, or framing."""


class ConsistencyError(DataError):
    """A stored artifact does not match the configuration it is loaded into."""


class NumericError(AmiiError):
    """A non-finite value appeared where finite arithmetic was required."""


class DimensionError(AmiiError):
    """Tensor shapes are incompatible for the requested operation."""


class StateError(AmiiError):
    """An object was used in an order its lifecycle does not allow."""
