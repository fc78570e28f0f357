"""Exception types shared across the package."""

from __future__ import annotations


class ZsnpgError(Exception):
    """Base class for all zsnpg errors."""


class GameValidationError(ZsnpgError, ValueError):
    """A game, policy or distribution violates its invariants.

    `problems` lists every violation found, each prefixed with the
    JSON-path style location (e.g. ``transition[1][0][1]``). File-level
    parse errors also carry the 1-based `line` and `column`.
    """

    def __init__(
        self,
        message: str,
        problems: list[str] | None = None,
        *,
        line: int | None = None,
        column: int | None = None,
    ) -> None:
        self.problems = list(problems or [])
        self.line = line
        self.column = column
        details = message
        if line is not None:
            details = f"line {line}, column {column}: {details}"
        if self.problems:
            details += "\n" + "\n".join(f"  - {p}" for p in self.problems)
        super().__init__(details)


class NumericsError(ZsnpgError, RuntimeError):
    """An exact computation failed a numerical sanity check."""


class OracleError(ZsnpgError, RuntimeError):
    """The certified matrix-game solver ran out of budget."""

    def __init__(self, message: str, best_gap: float) -> None:
        self.best_gap = best_gap
        super().__init__(f"{message} (best duality gap {best_gap:.3e})")


class BudgetError(ZsnpgError, ValueError):
    """An enumeration would exceed its configured budget."""
