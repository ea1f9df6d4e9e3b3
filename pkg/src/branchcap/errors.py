"""Exception types shared across the package.

Every rejected precondition gets its own class so callers (and the CLI exit-code
mapping) can tell configuration mistakes apart from numerical failures.
"""


class BranchcapError(Exception):
    """Base class for all package errors."""


class ConfigError(BranchcapError):
    """Malformed configuration input (bad JSON, unknown preset, bad field)."""


# --- step distribution validation ---

class BadProbabilities(ConfigError):
    """Probabilities negative, non-finite, or not summing to 1."""


class NonCentered(ConfigError):
    """Step distribution has a nonzero mean."""


class DegenerateCovariance(ConfigError):
    """Step covariance matrix is not positive definite."""


class StrictSubgroup(ConfigError):
    """Support generates a strict subgroup of the integer lattice."""


# --- offspring distribution validation ---

class NotCritical(ConfigError):
    """Offspring mean differs from 1."""


class ZeroVariance(ConfigError):
    """Offspring distribution is deterministic (single atom at 1)."""


class StepOutsideSupport(BranchcapError):
    """Path takes a step the step distribution cannot make."""


# --- window / solver failures ---

class WindowTooSmall(BranchcapError):
    """Requested point too close to (or outside) the window boundary."""


class MarginTooSmall(BranchcapError):
    """Target set does not leave the required margin inside the window."""


class NoConvergence(BranchcapError):
    """Iterative solver failed to reach tolerance within its budget."""


# --- estimator preconditions ---

class OverlappingSets(BranchcapError):
    """Joint-visit estimation requires disjoint target sets."""


class RadiusTooSmall(BranchcapError):
    """Capacity probe radius too close to the target set."""


class BudgetExceeded(BranchcapError):
    """Requested study does not fit in the supplied sample budget."""


# --- infinite set machinery ---

class ShellTooLarge(BranchcapError):
    """Shell point count exceeds the configured cap (no sub-sampling)."""
