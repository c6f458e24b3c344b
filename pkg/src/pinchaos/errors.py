"""Exception types raised across the package."""

__all__ = [
    "PinchaosError",
    "DomainError",
    "TailNotConverged",
    "RenewalUnderflow",
    "EmbeddingNotPSD",
    "NonFiniteInput",
    "SingularPoint",
    "NonIntegrableCell",
    "ProposalMismatch",
]


class PinchaosError(Exception):
    """Base class for all package errors."""


class DomainError(PinchaosError, ValueError):
    """A parameter lies outside the admissible domain of the model."""


class TailNotConverged(PinchaosError):
    """The analytic tail estimate of a gap law is not accurate enough."""


class RenewalUnderflow(PinchaosError):
    """A renewal mass needed for conditioning vanished numerically."""


class EmbeddingNotPSD(PinchaosError):
    """Circulant embedding is indefinite and no exact fallback is allowed."""

    def __init__(self, min_eigenvalue, N):
        self.min_eigenvalue = float(min_eigenvalue)
        self.N = int(N)
        super().__init__(
            f"circulant embedding has eigenvalue {self.min_eigenvalue:.3e} "
            f"and N={self.N} exceeds the Cholesky cap"
        )


class NonFiniteInput(PinchaosError, ValueError):
    """An environment value is NaN or infinite."""


class SingularPoint(PinchaosError, ValueError):
    """A density was evaluated at one of its singular points."""


class NonIntegrableCell(PinchaosError):
    """Monte Carlo cell averaging failed to stabilise."""


class ProposalMismatch(PinchaosError):
    """Importance weights are too degenerate to trust the estimate."""

    def __init__(self, ess, nodes):
        self.ess = float(ess)
        self.nodes = int(nodes)
        super().__init__(
            f"effective sample size {self.ess:.1f} is below 1% of {self.nodes} nodes"
        )
