"""Diagnostics shared by the spec and program frontends."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["Diagnostic", "DiagnosticError"]


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    message: str
    code: str = "syntax"
    severity: str = "error"

    def render(self, path: str = "<input>") -> str:
        return f"{path}:{self.line}:{self.column}: {self.severity}: {self.message}"


class DiagnosticError(ValueError):
    """Base for errors carrying a list of positioned diagnostics."""

    def __init__(self, diagnostics: list[Diagnostic], path: str = "<input>"):
        self.diagnostics = list(diagnostics)
        self.path = path
        super().__init__(
            "\n".join(d.render(path) for d in self.diagnostics) or "invalid input"
        )
