"""Exception types raised across the package."""


class FaithfulMCMCError(Exception):
    """Base class for all package errors."""


class ContractViolation(FaithfulMCMCError, ValueError):
    """Inputs do not satisfy an operation's preconditions."""


class ConfigError(FaithfulMCMCError, ValueError):
    """Experiment configuration failed validation."""


class InfeasibleError(FaithfulMCMCError):
    """The requested computation cannot be carried out exactly."""


class StateSpaceTooLarge(InfeasibleError):
    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"state space has {size} states, exceeding the cap of {cap}")


class InfeasibleIntegralError(InfeasibleError):
    """Exact MUCOLA transition probabilities need Gaussian volumes of Voronoi cells."""


class UnsupportedKernelError(InfeasibleError):
    """The kernel has no closed-form transition probability, or the model lacks needed structure."""


class NoLegalMoveError(ContractViolation):
    pass


class NoUniqueStationaryError(FaithfulMCMCError):
    pass


class NonReversibleError(FaithfulMCMCError):
    def __init__(self, pair: tuple[int, int], residual: float):
        self.pair = pair
        self.residual = residual
        super().__init__(
            f"kernel is not reversible: worst pair {pair} has detailed-balance residual {residual:.3e}"
        )


class ChainAborted(FaithfulMCMCError):
    """A callback failed; ``trace`` holds everything recorded before the failure."""

    def __init__(self, message: str, trace):
        self.trace = trace
        super().__init__(message)
