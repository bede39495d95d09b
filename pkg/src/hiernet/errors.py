"""Exception types shared across the package."""


class HierarchyError(ValueError):
    """Malformed hierarchy structure (dangling or level-mismatched child references)."""


class CapacityError(ValueError):
    """Not enough level-0 slots or neurons to hold the requested hierarchy."""


class PlacementError(CapacityError):
    """A level has more concepts than its network layer has neurons."""


class InfeasibleParameters(ValueError):
    """Parameter inequalities fail; ``residuals`` maps each condition to its slack."""

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = dict(residuals or {})


class WTAContractError(RuntimeError):
    """The revised winner-take-all found no candidate neuron."""
