"""Exception hierarchy shared across the package."""


class RegretDesignError(Exception):
    """Base class for all package errors."""


class ValidationError(RegretDesignError, ValueError):
    """Input violates a type invariant or an operation precondition."""


class MissingMeanError(RegretDesignError, KeyError):
    """A state of nature has no mean for a requested (treatment, cell, exposure)."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing mean"


class EmptyStratum(RegretDesignError):
    """A stratum needed for estimation has no observations."""


class MissingCell(RegretDesignError):
    """A rule in the grid has no sampled arm."""


class TieError(RegretDesignError):
    """Two welfare estimates coincide where a strict ordering is required."""


class InfeasibleError(RegretDesignError):
    """No allocation or design satisfies the requested constraints."""
