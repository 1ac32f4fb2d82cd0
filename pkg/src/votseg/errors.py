"""Exception hierarchy. The CLI maps each family to an exit code."""


class VotError(Exception):
    exit_code = 1


class DataError(VotError):
    """Bad or inconsistent input data (manifests, annotations, features)."""

    exit_code = 1


class InputContractError(DataError, ValueError):
    """An argument violates an operation's preconditions."""


class ParseError(DataError):
    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)


class FormatError(DataError):
    """Audio or file properties we refuse to handle (rate, channels, ...)."""


class ConfigError(VotError, ValueError):
    exit_code = 2


class ModelFormatError(ConfigError):
    """Model file written by an incompatible format version."""


class StorageError(VotError, OSError):
    exit_code = 3
