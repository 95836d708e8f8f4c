"""Exception types shared across the package."""


class MlpicError(Exception):
    """Base class for all package-specific errors."""


class NoConsistentGamma(MlpicError):
    """No single noise-to-control ratio satisfies the required relation at all probes."""


class NonFiniteState(MlpicError):
    """A simulated state left the finite range (model blow-up at this level)."""


class AllZeroWeights(MlpicError):
    """Every particle weight is zero: total degeneracy, abort the run."""


class DegenerateWeights(MlpicError):
    """The unnormalized importance-weight sum underflowed to zero."""


class ConfigError(MlpicError):
    """Invalid experiment configuration."""
