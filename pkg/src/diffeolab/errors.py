"""Exception hierarchy for the laboratory."""


class DiffeolabError(Exception):
    """Base class for all library errors."""


class DomainError(DiffeolabError):
    """Point outside a map's domain."""


class CompositionError(DiffeolabError):
    """Domain/target mismatch in a composition."""


class BuilderError(DiffeolabError):
    """Invalid builder expression or parameters."""


class InvarianceError(DiffeolabError):
    """Sub-interval is not invariant under the map."""


class MarginError(DiffeolabError):
    """Gluing margin precondition violated.

    Carries the measured restricted norms so callers can diagnose how far
    the inputs were from admissibility.
    """

    def __init__(self, msg, measured=None):
        super().__init__(msg)
        self.measured = measured


class MatchingError(DiffeolabError):
    """Value mismatch at a required matching point."""


class CoincidenceZoneError(DiffeolabError):
    """Map does not coincide with the base map near the endpoints."""


class CommutationError(DiffeolabError):
    """Commutation residual above threshold."""


class TruncationError(DiffeolabError):
    """Requested evaluation range reaches a non-extendable endpoint."""


class HypothesisError(DiffeolabError):
    """Input violates a theorem-level hypothesis (e.g. endpoint derivatives)."""


class CapError(DiffeolabError):
    """An iteration count exceeded its configured cap."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}


class BracketError(DiffeolabError):
    """Bisection bracket endpoints do not straddle the root."""


class IndeterminateDelayError(DiffeolabError):
    """Translation-number floor did not stabilize below n_max."""


class NormalizationError(DiffeolabError):
    """Cocycle not normalized where normalization is required."""


class ConfigError(DiffeolabError):
    """Invalid scenario configuration."""


class GeometryError(DiffeolabError):
    """Iterated domains overlap or other geometric precondition fails."""


class DivergenceError(DiffeolabError):
    """Iteration failed to converge within its step budget."""

    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace
