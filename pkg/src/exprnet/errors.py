"""Exception types shared across the package."""


class ContractError(ValueError):
    """A precondition on shapes, ranges or call order was violated."""


class FormatError(ValueError):
    """A file or byte stream is malformed."""


class UnsupportedError(FormatError):
    """A well-formed file uses a feature this package does not read."""


class ConfigError(ValueError):
    """A configuration value or corpus layout is invalid."""


class DivergenceError(FloatingPointError):
    """Training produced a non-finite loss or gradient."""
