"""Exception hierarchy shared across the package.

The CLI maps these onto its exit-code scheme: configuration problems are
exit 2, data/parse problems 3, numerical divergence 4, corrupt index
files 5.
"""


class ConquantError(Exception):
    """Base class for all package errors."""


class ConfigurationError(ConquantError):
    """Invalid parameter combination (e.g. M not dividing D, n > doc count)."""


class DimensionError(ConfigurationError):
    """Shape or length mismatch between numeric inputs."""


class DataError(ConquantError):
    """Malformed input data: bad TSV line, wrong embedding width, etc."""


class CorruptIndexError(ConquantError):
    """A binary index or embedding file failed validation; the message names
    the section that failed."""


class DivergenceError(ConquantError):
    """A training quantity became non-finite; the message names the
    offending component."""


class NumericalUnderflowError(ConquantError):
    """Sinkhorn scaling underflowed; a larger epsilon is required."""


class ConsistencyError(ConquantError):
    """Internal invariant broken, e.g. a batch carries reconstructions that
    no longer match its codes. Indicates a caller bug, not bad user input."""
