"""Exception types shared across the package.

Every failure mode that callers are expected to handle gets its own class so
that tests (and the CLI, which maps them to exit codes) can discriminate
without string matching.
"""


class HillflowError(Exception):
    """Base class for all package-specific errors."""


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------

class DegenerateBasis(HillflowError):
    """Lattice basis vectors are (numerically) linearly dependent."""


class ConditionTwoViolated(HillflowError):
    """Two non-parallel lattice vectors in the search ball share a norm."""


class OrthogonalDirection(HillflowError):
    """A requested dual direction is orthogonal to every admissible vector."""


# ---------------------------------------------------------------------------
# hill1d
# ---------------------------------------------------------------------------

class IntegrationFailure(HillflowError):
    """The ODE integrator failed (step underflow or Wronskian drift)."""


class RootBracketFailure(HillflowError):
    """A root bracket for a spectral quantity could not be established."""


class InterlacingViolation(HillflowError):
    """Computed band edges / Dirichlet values violate the interlacing order."""


class NoCriticalPoint(UserWarning):
    """Warning category: a gap is closed (or too small) so the interior
    critical point cannot be bracketed; the gap midpoint is substituted."""


class PoleAtLambda(UserWarning):
    """Warning category: an evaluation point collided with a product pole.

    The evaluation proceeds at a point shifted by a tiny amount; the warning
    carries the flag required by the product-formula contract.
    """


# ---------------------------------------------------------------------------
# finitegap
# ---------------------------------------------------------------------------

class OutOfRange(HillflowError):
    """A scalar argument lies outside the function's admissible range."""


class OutOfGap(HillflowError):
    """A Dirichlet value lies outside its gap by more than the tolerance."""


class CollisionError(HillflowError):
    """Two tracked Dirichlet values approached each other during a flow."""


class DegenerateGap(HillflowError):
    """Spectral data degenerate for the requested operation (e.g. an
    eigenfunction denominator vanished)."""


# ---------------------------------------------------------------------------
# potential2d
# ---------------------------------------------------------------------------

class GapMismatch(HillflowError):
    """A realized directional potential missed its target gap lengths by more
    than the second-order budget."""


class AliasingDetected(HillflowError):
    """Significant Fourier mass at the Nyquist shell of a tensor grid."""


# ---------------------------------------------------------------------------
# invariants
# ---------------------------------------------------------------------------

class QuadratureNotConverged(HillflowError):
    """Doubling the quadrature grid moved an invariant beyond tolerance."""


class MethodsDisagree(HillflowError):
    """Two independent evaluation routes disagree beyond their joint budget."""


class NoFeasibleEpsilon(HillflowError):
    """The coupling-size search found no pair satisfying the certificates."""


# ---------------------------------------------------------------------------
# jacobian
# ---------------------------------------------------------------------------

class QuadratureNoiseDominates(HillflowError):
    """All finite-difference columns are below the quadrature noise floor."""


class PatternViolation(HillflowError):
    """The Jacobian block structure check failed beyond tolerance."""


# ---------------------------------------------------------------------------
# cli
# ---------------------------------------------------------------------------

class ConfigError(HillflowError):
    """An experiment config failed schema validation (also raised when a
    config-supplied value breaks a constructor downstream)."""
