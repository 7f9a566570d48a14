"""Text assets shipped with the package."""

from __future__ import annotations

from importlib import resources


def program_text() -> str:
    """Instruction file placed in every workspace for file-editing proposers."""
    return resources.files(__name__).joinpath("program.md").read_text(encoding="utf-8")
