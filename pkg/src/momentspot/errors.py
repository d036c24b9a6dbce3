"""Exception hierarchy and process exit codes shared across the package."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class MomentSpotError(Exception):
    """Base class for all package-specific failures."""

    code = "error"


class ConfigurationError(MomentSpotError):
    """Invalid configuration: bad dimensions, incompatible checkpoints, bad flags."""

    code = "config"


class DataError(MomentSpotError):
    """Unreadable or inconsistent data: corpora, annotation files, feature files."""

    code = "data"


class CorruptFileError(DataError):
    """A container file failed structural validation (bad header, wrong byte count)."""

    code = "corrupt-file"


class NumericError(MomentSpotError):
    """Non-finite values where finite numbers are required (inputs or losses)."""

    code = "numeric"
