from typing import Optional


class FcfError(Exception):
    """Base error for the detector pipeline."""


class InvalidInputError(FcfError, ValueError):
    """Input arrays, sizes or indices violate an operation's preconditions."""


class InsufficientDataError(FcfError):
    pass


class ConfigError(FcfError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"{key}: {message}")


class ParseError(FcfError):
    """Malformed artifact file; message carries path, line and filter id when known."""

    def __init__(
        self,
        message: str,
        path: Optional[str] = None,
        line: Optional[int] = None,
        filter_id: Optional[str] = None,
    ):
        self.path = path
        self.line = line
        self.filter_id = filter_id
        where = []
        if path:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        if filter_id:
            where.append(f"filter {filter_id}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
