"""Exception hierarchy shared across the harness.

Everything the CLI maps to exit code 1 derives from :class:`StanLoopError`.
"""

from __future__ import annotations


class StanLoopError(Exception):
    """Base class for domain errors raised by the harness."""


class InvalidInputError(StanLoopError, ValueError):
    pass


class ConfigurationError(StanLoopError):
    pass


class CompileError(StanLoopError):
    def __init__(self, message: str, compiler_output: str = "") -> None:
        super().__init__(message)
        self.compiler_output = compiler_output

    def __str__(self) -> str:
        base = super().__str__()
        if self.compiler_output:
            return f"{base}\n{self.compiler_output}"
        return base


class SamplerError(StanLoopError):
    def __init__(self, message: str, output: str = "") -> None:
        super().__init__(message)
        self.output = output

    def __str__(self) -> str:
        base = super().__str__()
        if self.output:
            return f"{base}\n{self.output}"
        return base


class ContractViolation(StanLoopError):
    """A model ran but its output breaks the log_lik / divergent__ contract."""


class ParseError(StanLoopError, ValueError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None) -> None:
        where = []
        if path is not None:
            where.append(str(path))
        if line is not None:
            where.append(f"line {line}")
        prefix = ":".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.line = line
        self.path = path


class ProposerError(StanLoopError):
    def __init__(self, message: str, output: str = "") -> None:
        super().__init__(message)
        self.output = output

    def __str__(self) -> str:
        base = super().__str__()
        if self.output:
            return f"{base}\n--- proposer output ---\n{self.output}"
        return base


class WorkspaceError(StanLoopError):
    pass
