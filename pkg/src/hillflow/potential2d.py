"""Separable 2D potentials on a planar lattice and their gap parametrization.

A potential built from finitely many fundamental dual directions,

    q(x) = sum_j |delta_j|^2 q_j(delta_j . x),

is described by a ManifoldPoint: the lattice, the direction list (with
delta_3 = delta_1 + delta_2), a four-component coupling vector eps scaling
the base gap table, and torus coordinates for every tracked gap.  This
module realizes the directional potentials q_j from that data, assembles
2D samples on the fundamental cell, evaluates the weighted direction sum
h used by the spectral invariants, and provides the 2D Fourier analysis
that inverts the assembly.

Gap scaling: writing I_j for the tracked gap indices of direction j, the
effective gap lengths are eps_j*gamma_{j,1} for j <= 2 at m = 1 (the two
"large" gaps), eps_3*gamma_{3,m} for direction 3, and eps_4*gamma_{j,m}
everywhere else.  At eps = (e1, e2, 0, 0) the potential degenerates to
the sum of two one-gap potentials.
"""

import dataclasses
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .errors import AliasingDetected, GapMismatch, IntegrationFailure
from .finitegap import GapCoordinate, TorusPoint, alpha_tilde_flow_E1
from .hill1d import DIP_FLOOR, Potential1D, compute_spectrum
from .lattice import Direction, Lattice2D
from .weierstrass import WpParams, one_gap_potential, tau_from_gap

__all__ = [
    "ManifoldPoint", "Potential2D", "effective_gaps", "realize_directional",
    "realize_potential2d", "assemble", "h_field", "directional_fourier",
    "line_coefficients",
]

#: effective gaps below this are treated as exactly closed
_GAP_FLOOR = 1e-13

#: samples used to tabulate phase-modulated gap-opening terms
_E1_SAMPLES = 64


@dataclass(frozen=True, eq=False)
class ManifoldPoint:
    """A point of the gap-parametrized family of separable 2D potentials.

    Fields
    ------
    lattice : Lattice2D
    directions : tuple of Direction
        At least three, with directions[2] = directions[0] + directions[1]
        in dual coordinates.
    eps : 4-tuple of floats in [0, 1]
        Gap scaling vector (eps1, eps2, eps3, eps4).
    index_sets : tuple of tuples of int
        Tracked gap indices I_j per direction; the first three directions
        must track the same number of gaps, and directions 1, 2 must
        include gap 1.
    base_gaps : tuple of tuples of float
        Base gap lengths gamma_{j,m} > 0 aligned with index_sets.
    alpha : tuple of TorusPoint
        Torus coordinates per direction, one coordinate per tracked gap.
    """

    lattice: Lattice2D
    directions: tuple
    eps: tuple
    index_sets: tuple
    base_gaps: tuple
    alpha: tuple

    def __post_init__(self):
        dirs = tuple(self.directions)
        if len(dirs) < 3:
            raise ValueError("at least three directions are required")
        for d in dirs:
            if not isinstance(d, Direction):
                raise TypeError("directions must be Direction instances")
        d1, d2, d3 = dirs[0], dirs[1], dirs[2]
        if (d3.p, d3.r) != (d1.p + d2.p, d1.r + d2.r):
            raise ValueError(
                "direction 3 must equal direction 1 + direction 2, got "
                "(%d,%d) != (%d,%d)+(%d,%d)"
                % (d3.p, d3.r, d1.p, d1.r, d2.p, d2.r))

        eps = tuple(float(e) for e in self.eps)
        if len(eps) != 4 or any(e < 0.0 or e > 1.0 for e in eps):
            raise ValueError("eps must be four numbers in [0, 1]")

        index_sets = tuple(tuple(int(m) for m in I) for I in self.index_sets)
        gaps = tuple(tuple(float(g) for g in G) for G in self.base_gaps)
        alpha = tuple(self.alpha)
        if not (len(index_sets) == len(gaps) == len(alpha) == len(dirs)):
            raise ValueError("directions, index_sets, base_gaps and alpha "
                             "must have equal lengths")
        for j, (I, G, A) in enumerate(zip(index_sets, gaps, alpha), start=1):
            if any(m < 1 for m in I) or list(I) != sorted(set(I)):
                raise ValueError("index set %r of direction %d must be "
                                 "sorted distinct positive ints" % (I, j))
            if len(G) != len(I):
                raise ValueError("base gap row %d does not match its index set"
                                 % j)
            if any(g <= 0.0 for g in G):
                raise ValueError("base gaps must be positive")
            if not isinstance(A, TorusPoint) or A.dimension != len(I):
                raise ValueError("alpha[%d] must be a TorusPoint with one "
                                 "coordinate per tracked gap" % (j - 1))
        if len(index_sets[0]) != len(index_sets[1]) or \
                len(index_sets[0]) != len(index_sets[2]):
            raise ValueError("the first three directions must track the same "
                             "number of gaps")
        if 1 not in index_sets[0] or 1 not in index_sets[1]:
            raise ValueError("directions 1 and 2 must track gap 1")

        object.__setattr__(self, "directions", dirs)
        object.__setattr__(self, "eps", eps)
        object.__setattr__(self, "index_sets", index_sets)
        object.__setattr__(self, "base_gaps", gaps)
        object.__setattr__(self, "alpha", alpha)

    # -- derived index structure -------------------------------------------

    @property
    def n_directions(self):
        return len(self.directions)

    @property
    def big_gap_set(self):
        """The two large-gap labels ((1, 1), (2, 1))."""
        return ((1, 1), (2, 1))

    @property
    def coupled_gap_set(self):
        """Labels (j, m) with j <= 2, m > 1, ordered by j then m."""
        out = []
        for j in (1, 2):
            out.extend((j, m) for m in self.index_sets[j - 1] if m > 1)
        return tuple(out)

    @property
    def small_gap_set(self):
        """All tracked labels except the two large gaps, ordered j then m.

        This is the index set of the invariant vector and of the angle
        coordinates entering the rigidity Jacobian; the first
        ``n_coupled`` labels are exactly the coupled set.
        """
        out = list(self.coupled_gap_set)
        for j in range(3, self.n_directions + 1):
            out.extend((j, m) for m in self.index_sets[j - 1])
        return tuple(out)

    @property
    def n_coupled(self):
        return len(self.coupled_gap_set)

    @property
    def total_gaps(self):
        return sum(len(I) for I in self.index_sets)

    def gap_position(self, j, m):
        """Index of m within I_j (raises ValueError when not tracked)."""
        return self.index_sets[j - 1].index(m)

    def alpha_tilde(self, j, m):
        """Lifted angle of the (j, m) coordinate."""
        return self.alpha[j - 1].coords[self.gap_position(j, m)].alpha_tilde

    def with_alpha(self, j, m, alpha_tilde):
        """Copy of the point with the angle of gap (j, m) replaced.

        ``alpha_tilde`` is a lifted angle (any real value, reduced mod pi).
        """
        pos = self.gap_position(j, m)
        coords = list(self.alpha[j - 1].coords)
        coords[pos] = GapCoordinate.from_alpha_tilde(alpha_tilde)
        alpha = list(self.alpha)
        alpha[j - 1] = TorusPoint(tuple(coords))
        return dataclasses.replace(self, alpha=tuple(alpha))

    def with_eps(self, eps):
        """Copy of the point with the coupling vector replaced."""
        return dataclasses.replace(self, eps=tuple(float(e) for e in eps))


def effective_gaps(point):
    """Effective gap lengths per direction as a tuple of arrays.

    Scaling rule: eps_j at (j, 1) for j <= 2, eps_4 at (j, m > 1) for
    j <= 2, eps_3 for all of direction 3, eps_4 for directions beyond 3.
    """
    e1, e2, e3, e4 = point.eps
    out = []
    for j, (I, G) in enumerate(zip(point.index_sets, point.base_gaps),
                               start=1):
        G = np.asarray(G)
        if j <= 2:
            ej = e1 if j == 1 else e2
            scale = np.where(np.asarray(I) == 1, ej, e4)
        elif j == 3:
            scale = e3
        else:
            scale = e4
        out.append(scale * G)
    return tuple(out)


# ---------------------------------------------------------------------------
# directional realization
# ---------------------------------------------------------------------------

@lru_cache(maxsize=32)
def _one_gap_background(gap, m_max):
    """Untranslated one-gap potential with the given first-gap length.

    Returns the potential together with its spectrum up to m_max (gap
    edges are translation invariant, so the spectrum serves every
    translate of the potential).
    """
    q = one_gap_potential(WpParams(tau_from_gap(gap)))
    return q, compute_spectrum(q, max(m_max, 1))


@lru_cache(maxsize=256)
def _translation_for_angle(gap, angle):
    """Translation s0 placing the first-gap angle of the one-gap potential
    at ``angle``.

    The untranslated potential sits at the top of its gap (lifted angle
    pi/2); the angle advances monotonically by pi per unit translation,
    so s0 is where the scalar phase flow first reaches ``angle`` mod pi.
    """
    target = angle % np.pi
    if abs(target - 0.5 * np.pi) < 1e-15:
        return 0.0
    _, spec = _one_gap_background(gap, 1)
    lo, hi = spec.gap_edges[0]
    lam0 = spec.lambda0
    stop = target if target > 0.5 * np.pi else target + np.pi

    def rhs(s, at):
        return [np.sqrt(lo + (hi - lo) * np.sin(at[0]) ** 2 - lam0)]

    def event(s, at):
        return at[0] - stop

    event.terminal = True
    sol = solve_ivp(rhs, (0.0, 1.5), [0.5 * np.pi], events=event,
                    method="DOP853", rtol=1e-12, atol=1e-12)
    if not sol.t_events[0].size:
        raise IntegrationFailure("phase target not reached within one period")
    return float(sol.t_events[0][0])


def _gap_opening_terms(targets, angles):
    """Potential whose harmonics open the listed gaps to first order.

    For a zero background the term opening gap m with length g at angle a
    is exactly g*cos(2 pi m s + 2a).
    """
    n = max(m for m, _ in targets)
    cos = np.zeros(n)
    sin = np.zeros(n)
    for (m, g), a in zip(targets, angles):
        cos[m - 1] += g * np.cos(2.0 * a)
        sin[m - 1] -= g * np.sin(2.0 * a)
    return Potential1D(cos, sin)


def _resolution_floor(lam):
    """Smallest gap length the shooting classifier can certify near lam."""
    lam = max(1.0, abs(lam))
    return 4.0 * np.sqrt(DIP_FLOOR * lam) + 1e-8 * (1.0 + lam)


def _verify_gaps(q, I, targets, j, budget):
    """Compare realized gap lengths against their targets.

    The tolerance per gap is budget * target^2 (the first-order
    realization is accurate to second order) plus the shooting resolution
    floor, below which open and closed gaps cannot be told apart.
    """
    spec = compute_spectrum(q, max(I))
    for m, target in zip(I, targets):
        realized = float(np.diff(spec.gap_edges[m - 1])[0])
        tol = budget * target ** 2 + _resolution_floor(spec.gap_edges[m - 1, 1])
        if abs(realized - target) > tol:
            raise GapMismatch(
                "direction %d gap %d: realized %.6e vs target %.6e "
                "(tol %.2e)" % (j, m, realized, target, tol))


def realize_directional(point, j, *, verify=True, budget=10.0):
    """Directional potential q_j matching the effective gap table.

    Directions whose gaps all scale with a small parameter (direction 3,
    directions beyond 3, and the m > 1 part of directions 1-2) are
    realized to first order: each tracked gap m of length g contributes
    the resonant term g*cos(2*alpha_tilde_m(s)), where alpha_tilde_m is
    the phase of gap m over the direction's background.  Over the zero
    background the phase is pi*m*s + alpha_{j,m} and the term is the
    plain harmonic g*cos(2 pi m s + 2 alpha); over the one-gap background
    of directions 1-2 it is the modulated phase of the joint flow, which
    keeps the first-order opening exact.  Gap (j, 1) of directions 1-2 is
    realized exactly through the one-gap family, translated so the gap-1
    angle matches the supplied coordinate.

    With ``verify`` the realized potential's band structure is computed
    and each tracked gap compared to its target within
    ``budget * target**2`` plus the shooting resolution floor;
    disagreement raises GapMismatch.
    """
    if not 1 <= j <= point.n_directions:
        raise ValueError("direction index %r out of range" % (j,))
    I = point.index_sets[j - 1]
    geff = effective_gaps(point)[j - 1]
    angles = [point.alpha[j - 1].coords[k].alpha_tilde for k in range(len(I))]

    parts = []
    background_spec = None
    if j <= 2 and 1 in I:
        g1 = geff[I.index(1)]
        if g1 > _GAP_FLOOR:
            base, background_spec = _one_gap_background(g1, max(I))
            s0 = _translation_for_angle(g1, angles[I.index(1)])
            parts.append(base.translate(s0))

    small = [((m, g), a) for (m, g), a in zip(zip(I, geff), angles)
             if g > _GAP_FLOOR and not (j <= 2 and m == 1)]
    if small:
        if background_spec is None:
            parts.append(_gap_opening_terms(*zip(*small)))
        else:
            s = np.arange(_E1_SAMPLES) / _E1_SAMPLES
            a1 = angles[I.index(1)]
            vals = np.zeros(_E1_SAMPLES)
            for (m, g), a in small:
                at = alpha_tilde_flow_E1(j, m, background_spec, (a1, a), s)
                vals += g * np.cos(2.0 * at)
            parts.append(Potential1D.from_samples(vals))

    if not parts:
        return Potential1D.zero()
    q = parts[0]
    for p in parts[1:]:
        q = q + p
    if verify:
        _verify_gaps(q, I, geff, j, budget)
    return q


# ---------------------------------------------------------------------------
# 2D assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Potential2D:
    """Evaluator for q(x) = sum_j |delta_j|^2 q_j(delta_j . x)."""

    directions: tuple
    components: tuple

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        total = 0.0
        for d, q in zip(self.directions, self.components):
            total = total + d.norm_sq * q(x @ d.delta)
        return total

    def on_grid(self, s, t):
        """Samples on the tensor grid of cell coordinates (s, t).

        The cell coordinates are s = delta_1 . x, t = delta_2 . x, in
        which every direction evaluates along p*s + r*t and the
        fundamental cell is the unit square.
        """
        s = np.asarray(s, dtype=float)[:, None]
        t = np.asarray(t, dtype=float)[None, :]
        total = np.zeros((s.shape[0], t.shape[1]))
        for d, q in zip(self.directions, self.components):
            total += d.norm_sq * q(d.p * s + d.r * t)
        return total


def realize_potential2d(point, *, verify=True, budget=10.0):
    """Realize every directional potential of a ManifoldPoint."""
    comps = tuple(realize_directional(point, j, verify=verify, budget=budget)
                  for j in range(1, point.n_directions + 1))
    return Potential2D(point.directions, comps)


def assemble(point, s, t, *, verify=True):
    """Samples of the 2D potential on a cell-coordinate tensor grid."""
    return realize_potential2d(point, verify=verify).on_grid(s, t)


def h_field(point, j, s, t, *, pot=None, verify=True):
    """The weighted direction sum h entering the spectral invariants.

    h(x) = sum over directions e with delta_e . d_j != 0 of
    (delta_e / (delta_e . d_j)) q_e(delta_e . x), where d_j is the
    shortest lattice vector orthogonal to direction j.  The pairing
    delta_e . d_j is an integer, so exclusion of orthogonal terms is
    exact; direction j itself always drops out.  Returns samples of
    shape (len(s), len(t), 2) on the cell-coordinate grid.
    """
    if not 1 <= j <= point.n_directions:
        raise ValueError("direction index %r out of range" % (j,))
    if pot is None:
        pot = realize_potential2d(point, verify=verify)
    dj = point.directions[j - 1]
    mj, nj = dj.d_coeffs
    s = np.asarray(s, dtype=float)[:, None]
    t = np.asarray(t, dtype=float)[None, :]
    out = np.zeros((s.shape[0], t.shape[1], 2))
    for e, q in zip(pot.directions, pot.components):
        w = e.p * mj + e.r * nj  # delta_e . d_j, exactly
        if w == 0:
            continue
        vals = q(e.p * s + e.r * t) / w
        out[:, :, 0] += e.delta[0] * vals
        out[:, :, 1] += e.delta[1] * vals
    return out


# ---------------------------------------------------------------------------
# 2D Fourier analysis
# ---------------------------------------------------------------------------

def directional_fourier(samples):
    """2D Fourier coefficients of cell-coordinate samples.

    The coefficient array c satisfies q(s, t) = sum c[k1, k2]
    exp(2 pi i (k1 s + k2 t)); index (k1, k2) corresponds to the dual
    lattice point k1 delta_1 + k2 delta_2, so the entries are the
    lattice Fourier coefficients a_delta.  Grid sizes must be powers of
    two.  AliasingDetected is raised when the Nyquist rows carry relative
    energy above 1e-12, i.e. when the grid undersamples the potential.
    """
    q = np.asarray(samples, dtype=float)
    if q.ndim != 2:
        raise ValueError("expected a 2-D sample array")
    n1, n2 = q.shape
    if n1 & (n1 - 1) or n2 & (n2 - 1) or n1 < 2 or n2 < 2:
        raise ValueError("grid sizes must be powers of two, got %r" % (q.shape,))
    c = np.fft.fft2(q) / q.size
    floor = 1e-12 * max(1.0, float(np.abs(c).max()))
    if np.abs(c[n1 // 2, :]).max() > floor or np.abs(c[:, n2 // 2]).max() > floor:
        raise AliasingDetected(
            "energy at the Nyquist frequency exceeds the aliasing floor; "
            "increase the grid")
    return c


def line_coefficients(coeffs, direction, n_max):
    """Coefficients a_{n delta} along multiples of one direction, n = 1..n_max."""
    n1, n2 = coeffs.shape
    n = np.arange(1, n_max + 1)
    return coeffs[(n * direction.p) % n1, (n * direction.r) % n2]
