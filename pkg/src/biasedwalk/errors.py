"""Error types shared across the package.

Argument and domain problems raise plain ValueError; the classes here mark
failures of a different kind, so callers (notably the command line front
end) can map them to distinct exit statuses.
"""

from __future__ import annotations


class ResourceBudgetError(RuntimeError):
    """A requested computation would exceed its configured memory or
    state-count budget."""


class ConvergenceError(RuntimeError):
    """An iterative solve exhausted its iteration budget before reaching
    the required residual tolerance."""
