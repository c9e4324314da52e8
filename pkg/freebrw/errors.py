"""
Exception hierarchy for freebrw.

Censoring, empty Monte Carlo cells, inconclusive verdicts and failed
property checks are results, not errors; nothing here is raised for them.
"""

from __future__ import annotations

from typing import Any, List, Optional


class FreeBrwError(Exception):
    """Base class for every error raised by the package."""


class MalformedWordError(FreeBrwError, ValueError):
    pass


class GroupAxiomError(FreeBrwError, ValueError):
    def __init__(self, axiom: str, witness: Any, factor: Optional[int] = None):
        self.axiom = axiom
        self.witness = witness
        self.factor = factor
        where = f"factor {factor}: " if factor is not None else ""
        super().__init__(f"{where}{axiom} violated, witness {witness!r}")


class CapExceededError(FreeBrwError, RuntimeError):
    def __init__(self, what: str, reached: int, cap: int, partial: Any = None):
        self.what = what
        self.reached = reached
        self.cap = cap
        self.partial = partial
        super().__init__(f"{what} cap exceeded: reached {reached} (cap {cap})")


class ConfigError(FreeBrwError, ValueError):
    def __init__(self, violations: List[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid configuration")


class InsufficientDataError(FreeBrwError, ValueError):
    pass


class InconsistentInputError(FreeBrwError, ValueError):
    pass
