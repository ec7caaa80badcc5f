"""Exception hierarchy shared by the library and the CLI."""


class NwpcoError(Exception):
    """Base class for all library errors."""


class DomainError(NwpcoError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AlignmentError(DomainError):
    """A time value does not fall on the observation mesh."""


class ConfigError(NwpcoError, ValueError):
    """Invalid experiment or selection configuration."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where = f"[{key}"
            if line is not None:
                where += f", line {line}"
            where += "] "
        super().__init__(where + message)


class DataFileError(NwpcoError, OSError):
    """A data file exists but its contents are malformed."""
