from typing import Optional


class ObjtxError(Exception):
    """Root of every error raised by objtx."""


class DimensionError(ObjtxError, ValueError):
    pass


class ConfigError(ObjtxError, ValueError):
    pass


class UsageError(ObjtxError, ValueError):
    pass


class DataError(ObjtxError, ValueError):
    pass


class CapacityError(ObjtxError, ValueError):
    pass


class LoadError(DataError):
    """Corpus or checkpoint could not be loaded; `line` is 1-based when known."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")
