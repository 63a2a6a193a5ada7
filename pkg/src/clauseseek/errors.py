"""Exception types shared across the package."""

from __future__ import annotations


class FormatError(ValueError):
    """Malformed input file content (span fields, TSV records, lexicons).

    Carries optional path / line number context so CLI errors point at the
    offending line.
    """

    def __init__(self, message: str, *, path: str | None = None,
                 line_no: int | None = None) -> None:
        self.path = path
        self.line_no = line_no
        prefix = ""
        if path is not None:
            prefix = f"{path}:"
        if line_no is not None:
            prefix += f"{line_no}:"
        if prefix:
            prefix += " "
        super().__init__(prefix + message)


class ConfigError(ValueError):
    """Invalid pipeline configuration or an infeasible config/data combination."""


class UnencodableSpanError(ValueError):
    """A span produced no usable tokens or vectors ("unencodable seed")."""


class RunError(RuntimeError):
    """An episode failed while processing an input file; carries the line number."""

    def __init__(self, message: str, line_no: int) -> None:
        self.line_no = line_no
        super().__init__(f"line {line_no}: {message}")
