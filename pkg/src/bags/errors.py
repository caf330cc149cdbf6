"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes, so raising the right class
matters more than the message text.
"""


class BagsError(Exception):
    """Base class for all package errors."""


class ConfigError(BagsError):
    """Invalid configuration: bad values, unknown keys, conflicting flags."""


class DataError(BagsError):
    """Input data problems: missing files, shape mismatches, bad manifests."""


class FormatError(BagsError):
    """Malformed binary artifacts: bad magic, version, or checksum."""


class NumericsError(BagsError):
    """Numerical failure: non-finite values where finite ones are required."""
