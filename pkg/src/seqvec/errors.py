"""Exception hierarchy shared across the package.

Each class maps to one CLI exit code (see ``seqvec.cli``), so errors raised
anywhere in the library surface as a machine-parsable class name.
"""


class SeqvecError(Exception):
    """Base class for all seqvec errors."""

    exit_code = 1
    error_class = "internal"


class ParseError(SeqvecError):
    """A line of an input file failed to parse."""

    exit_code = 4
    error_class = "format"

    def __init__(self, message, line_no=None, path=None):
        self.line_no = line_no
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line_no is not None:
            where += f"{line_no}: "
        super().__init__(f"{where}{message}")


class ConfigError(SeqvecError):
    """Invalid configuration or precondition violation."""

    exit_code = 5
    error_class = "config"


class MissingInputError(SeqvecError):
    """A required input file does not exist."""

    exit_code = 3
    error_class = "missing-input"


class ContainerError(SeqvecError):
    """Model container is malformed (bad magic, version, or truncation)."""

    exit_code = 4
    error_class = "format"

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class FingerprintError(SeqvecError):
    """Artifacts from different pipeline configurations were mixed."""

    exit_code = 6
    error_class = "fingerprint"


class NumericsError(SeqvecError):
    """A non-finite value appeared where finite math was required."""

    exit_code = 1
    error_class = "numerics"


class DataError(SeqvecError):
    """Input data cannot support the requested operation."""

    exit_code = 4
    error_class = "data"
