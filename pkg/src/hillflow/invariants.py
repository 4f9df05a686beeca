"""Spectral invariants of the separable family and their angle couplings.

For a lattice direction j the auxiliary field

    h_j(x) = sum_{e : delta_e . d_j != 0} (delta_e / (delta_e . d_j)) q_e(delta_e . x)

collects the other directions' profiles, and the invariant attached to a
tracked gap (j, m) is the unit-cell quadrature

    Phi_{j,m} = vol_gamma * mean_{(s,t)} |h_j|^2 (phi_{j,m})^2,

where (phi_{j,m})^2 is the normalized squared eigenfunction at the upper
edge of gap m of direction j's one-dimensional potential (the limit
profile when that gap is closed).  Everything is sampled on a uniform
tensor grid over the unit cell, where the plain mean is a spectrally
accurate quadrature and the directional profiles restrict to the grid by
integer index gathering.

The module also provides:

* the closed-form cosine fit of Phi_{j,m} in its own angle for j >= 3 at
  the decoupled point eps_3 = eps_4 = 0, with the product-of-background-
  coefficients amplitude it must reproduce;
* the mixed derivative d^2 Phi_{j,m} / d eps_3 d alpha_{j,m} at the
  decoupled point by two independent routes (exact quadrature of the
  first-order integrand vs. one-sided finite differences in eps_3);
* the b-coefficients pairing direction-3 harmonics with eigenfunction
  phase derivatives, b_{j,m,n} = int_0^1 cos(2 pi n s + 2 alpha_{3,n})
  d(phi_{j,m})^2/d alpha_{j,m} ds;
* the phase-sensitivity matrix of the closed-gap angles over the small
  gap set (identity at the decoupled point);
* the certified selection of coupling sizes (eps_1, eps_2) from a margin
  parameter beta, with the inequality slacks reported.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import MethodsDisagree, NoFeasibleEpsilon, QuadratureNotConverged
from .finitegap import (alpha_tilde_flow_E1, eigenfunction_sq,
                        initial_torus_point, limit_eigenfunction_E1, mu_flow)
from .hill1d import compute_spectrum
from .lattice import coupling_constant
from .potential2d import (_GAP_FLOOR, _one_gap_background, Potential2D,
                          effective_gaps, h_field, realize_directional)
from .weierstrass import WpParams, tau_from_gap, wp_fourier_coeffs

__all__ = [
    "DEFAULT_GRID", "InvariantVector", "phi", "ClosedFormFit",
    "phi_limit_closed_form", "b_coeff", "alpha_derivative_profile",
    "MixedDerivativeResult", "mixed_derivative", "phase_sensitivity",
    "EpsilonSelection", "select_epsilons",
]

DEFAULT_GRID = 256

# (alpha_2, alpha_3) probe pairs used when estimating remainder constants;
# chosen away from multiples of pi/2 so the leading sin terms stay generic.
_ALPHA_PAIRS = ((0.35, 1.25), (1.05, 0.45), (1.80, 2.15), (2.50, 2.95))


# ---------------------------------------------------------------------------
# caches
# ---------------------------------------------------------------------------
# Finite-difference sweeps revisit the same sub-objects many times (an angle
# perturbation in one direction leaves every other direction's realized
# potential, spectrum and flow bit-identical), so the expensive stages are
# memoized on value keys.  Caches are cleared wholesale when they grow large.

_REALIZE_CACHE = {}
_SPECTRUM_CACHE = {}
_FLOW_CACHE = {}
_PROFILE_CACHE = {}
_CACHE_LIMIT = 512


def _cap(cache):
    if len(cache) > _CACHE_LIMIT:
        cache.clear()


def clear_caches():
    """Drop all memoized realizations, spectra, flows and profiles."""
    for c in (_REALIZE_CACHE, _SPECTRUM_CACHE, _FLOW_CACHE, _PROFILE_CACHE):
        c.clear()


def _direction_key(point, j):
    geff = effective_gaps(point)[j - 1]
    ang = tuple(point.alpha[j - 1].coords[k].alpha_tilde
                for k in range(len(point.index_sets[j - 1])))
    return (j, point.index_sets[j - 1], geff.tobytes(), ang)


def _realized(point, j):
    """Realized 1-D potential of direction ``j`` (memoized)."""
    key = _direction_key(point, j)
    if key not in _REALIZE_CACHE:
        _cap(_REALIZE_CACHE)
        _REALIZE_CACHE[key] = realize_directional(point, j, verify=False)
    return _REALIZE_CACHE[key]


def _pot_key(q):
    return (q.cos_coeffs.tobytes(), q.sin_coeffs.tobytes())


def _spectrum_of(q, m_max):
    key = _pot_key(q) + (m_max,)
    if key not in _SPECTRUM_CACHE:
        _cap(_SPECTRUM_CACHE)
        _SPECTRUM_CACHE[key] = compute_spectrum(q, m_max)
    return _SPECTRUM_CACHE[key]


def _flow_of(q, spec, grid):
    """Full-period translation flow of ``q`` on the uniform grid (memoized)."""
    key = _pot_key(q) + (grid,)
    if key not in _FLOW_CACHE:
        _cap(_FLOW_CACHE)
        s = np.arange(grid) / grid
        start = initial_torus_point(q, spec)
        _FLOW_CACHE[key] = mu_flow(spec, start, s)
    return _FLOW_CACHE[key]


# ---------------------------------------------------------------------------
# eigenfunction profiles
# ---------------------------------------------------------------------------

def _phi_profile(point, j, m, grid):
    """(phi_{j,m})^2 sampled on the uniform period grid, mean exactly 1.

    Dispatch: an open tracked gap uses the product formula over the
    realized direction potential (spectrum + Dirichlet flow); a closed
    gap riding on an open gap-1 background uses the degenerate-edge
    limit eigenfunction; a closed gap over a flat background is the
    plain 2 cos^2(pi m s + alpha) profile.
    """
    I = point.index_sets[j - 1]
    pos = point.gap_position(j, m)
    geff = effective_gaps(point)[j - 1]
    key = ("prof", _direction_key(point, j), m, grid)
    if key in _PROFILE_CACHE:
        return _PROFILE_CACHE[key]
    s = np.arange(grid) / grid
    if geff[pos] > _GAP_FLOOR:
        q = _realized(point, j)
        spec = _spectrum_of(q, max(I))
        fl = _flow_of(q, spec, grid)
        prof = eigenfunction_sq(spec, m, fl.mu)
    elif j <= 2 and geff[I.index(1)] > _GAP_FLOOR:
        g1 = float(geff[I.index(1)])
        spec_bg = _one_gap_background(g1, max(I))[1]
        a1 = point.alpha_tilde(j, 1)
        am = point.alpha_tilde(j, m)
        phi_s = limit_eigenfunction_E1(j, m, spec_bg, (a1, am), s)
        prof = phi_s * phi_s
    else:
        prof = 2.0 * np.cos(np.pi * m * s + point.alpha_tilde(j, m)) ** 2
    _cap(_PROFILE_CACHE)
    _PROFILE_CACHE[key] = prof
    return prof


def alpha_derivative_profile(point, j, m, *, grid=DEFAULT_GRID, step=1e-5):
    """d (phi_{j,m})^2 / d alpha_{j,m} on the period grid (central FD)."""
    at = point.alpha_tilde(j, m)
    hi = _phi_profile(point.with_alpha(j, m, at + step), j, m, grid)
    lo = _phi_profile(point.with_alpha(j, m, at - step), j, m, grid)
    return (hi - lo) / (2.0 * step)


# ---------------------------------------------------------------------------
# the invariants
# ---------------------------------------------------------------------------

def _gather_index(direction, grid):
    """Index array mapping the tensor grid to the 1-D directional grid."""
    i = np.arange(grid)
    return (direction.p * i[:, None] + direction.r * i[None, :]) % grid


def _h_squared(point, j, grid):
    """|h_j|^2 on the tensor grid, from memoized realized components."""
    comps = tuple(_realized(point, jj)
                  for jj in range(1, point.n_directions + 1))
    keys = tuple(_pot_key(c) for c in comps)
    key = ("hsq", j, grid, keys,
           tuple((d.p, d.r) for d in point.directions))
    if key in _PROFILE_CACHE:
        return _PROFILE_CACHE[key]
    s = np.arange(grid) / grid
    pot = Potential2D(point.directions, comps)
    h = h_field(point, j, s, s, pot=pot)
    h2 = np.einsum("ijk,ijk->ij", h, h)
    _cap(_PROFILE_CACHE)
    _PROFILE_CACHE[key] = h2
    return h2


def _phi_value(point, j, m, grid):
    prof = _phi_profile(point, j, m, grid)
    h2 = _h_squared(point, j, grid)
    idx = _gather_index(point.directions[j - 1], grid)
    return point.lattice.vol_gamma * float(np.mean(h2 * prof[idx]))


def phi(point, j, m, *, grid=DEFAULT_GRID, verify_quadrature=False):
    """Invariant Phi_{j,m} of the tracked gap (j, m) at ``point``.

    ``grid`` is the per-axis tensor quadrature size (a power of two is
    customary but not required here; directional gathers only need the
    grid to be uniform).  With ``verify_quadrature`` the value is
    recomputed on the doubled grid and QuadratureNotConverged is raised
    when the two differ by more than 1e-8.
    """
    val = _phi_value(point, j, m, grid)
    if verify_quadrature:
        val2 = _phi_value(point, j, m, 2 * grid)
        if abs(val2 - val) > 1e-8:
            raise QuadratureNotConverged(
                "Phi_{%d,%d} moved by %.3e under grid doubling (%d -> %d)"
                % (j, m, abs(val2 - val), grid, 2 * grid))
    return val


@dataclass(frozen=True)
class InvariantVector:
    """All tracked invariants of a point, ordered j then m over the
    small gap set (the first ``n`` labels are the coupled gaps of
    directions 1-2)."""

    labels: tuple
    values: np.ndarray
    n_coupled: int
    grid: int

    @classmethod
    def compute(cls, point, *, grid=DEFAULT_GRID, verify_quadrature=False):
        labels = point.small_gap_set
        values = np.array([
            phi(point, j, m, grid=grid, verify_quadrature=verify_quadrature)
            for (j, m) in labels])
        return cls(labels, values, point.n_coupled, grid)

    def to_csv(self, path, footer_comment=""):
        lines = ["i,j,m,phi"]
        for i, ((j, m), v) in enumerate(zip(self.labels, self.values), 1):
            lines.append("%d,%d,%d,%.17g" % (i, j, m, v))
        if footer_comment:
            lines.append("# " + footer_comment)
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# closed form at the decoupled point, j >= 3
# ---------------------------------------------------------------------------

def _require_decoupled(point, what):
    if point.eps[2] != 0.0 or point.eps[3] != 0.0:
        raise ValueError("%s requires eps_3 = eps_4 = 0 (got %r)"
                         % (what, (point.eps[2], point.eps[3])))


def _background_cos_coeff(point, l, index):
    """Cosine coefficient (untranslated convention) of background ``l``
    at the given harmonic index; zero when the background is flat or the
    index is out of range."""
    if index < 1:
        return 0.0
    g1 = float(effective_gaps(point)[l - 1][point.gap_position(l, 1)])
    if g1 <= _GAP_FLOOR:
        return 0.0
    coeffs = 2.0 * wp_fourier_coeffs(WpParams(tau_from_gap(g1)))
    if index > len(coeffs):
        return 0.0
    return float(coeffs[index - 1])


@dataclass(frozen=True)
class ClosedFormFit:
    """Cosine fit of Phi_{j,m} against its own angle at the decoupled point.

    ``coefficient`` is the predicted amplitude
    c_{1,2,j} * a^1_{m|p_j|} * a^2_{m|r_j|} built from the two realized
    background potentials' cosine coefficients (untranslated convention);
    ``fitted_amplitude`` and ``fitted_phase`` come from a least-squares
    fit of A cos(2 alpha + phase) + D over the sampled angles, and
    ``offset`` is the fitted D (equal to the average of Phi over any two
    angles a quarter period apart).  ``residual`` is the max deviation
    of the fit from the samples.
    """

    coefficient: float
    fitted_amplitude: float
    fitted_phase: float
    offset: float
    residual: float
    alphas: np.ndarray
    values: np.ndarray


def phi_limit_closed_form(point, j, m, *, grid=DEFAULT_GRID, n_alpha=8):
    """Fit Phi_{j,m}(alpha_{j,m}) for j >= 3 at the decoupled point.

    Phi is exactly a first harmonic in 2 alpha there, so eight samples
    overdetermine the (A, B, D) fit and the residual doubles as a
    quadrature self-check.  When the two backgrounds are translated
    (gap-1 angles away from pi/2) the fitted phase shifts accordingly;
    the amplitude is translation invariant.
    """
    if j < 3:
        raise ValueError("closed-form fit applies to directions j >= 3")
    _require_decoupled(point, "phi_limit_closed_form")
    d = point.directions[j - 1]
    cc = coupling_constant(point.lattice, point.directions[0],
                           point.directions[1], d)
    a1 = _background_cos_coeff(point, 1, m * abs(d.p))
    a2 = _background_cos_coeff(point, 2, m * abs(d.r))
    coefficient = cc * a1 * a2

    alphas = np.arange(n_alpha) * np.pi / n_alpha
    values = np.array([_phi_value(point.with_alpha(j, m, a), j, m, grid)
                       for a in alphas])
    design = np.column_stack([np.cos(2 * alphas), np.sin(2 * alphas),
                              np.ones(n_alpha)])
    coef, *_ = np.linalg.lstsq(design, values, rcond=None)
    fitted = float(np.hypot(coef[0], coef[1]))
    phase = float(np.arctan2(-coef[1], coef[0]))
    residual = float(np.max(np.abs(design @ coef - values)))
    return ClosedFormFit(coefficient, fitted, phase, float(coef[2]),
                         residual, alphas, values)


# ---------------------------------------------------------------------------
# b-coefficients and the mixed derivative
# ---------------------------------------------------------------------------

def b_coeff(point, j, m, n, *, grid=DEFAULT_GRID, step=1e-5):
    """b_{j,m,n} = int_0^1 cos(2 pi n s + 2 alpha_{3,n})
    d(phi_{j,m})^2/d alpha_{j,m} ds at the decoupled point.

    ``j`` must be 1 or 2 and ``n`` tracked by direction 3.  On the
    diagonal n = m the leading term is sin(2 alpha_{3,m} - 2 alpha_{j,m})
    with an O(eps_j) remainder; off the diagonal the coefficient decays
    like eps_j^|m-n|.
    """
    if j not in (1, 2):
        raise ValueError("b-coefficients are defined for directions 1-2")
    _require_decoupled(point, "b_coeff")
    a3n = point.alpha_tilde(3, n)
    g = alpha_derivative_profile(point, j, m, grid=grid, step=step)
    s = np.arange(grid) / grid
    return float(np.mean(np.cos(2 * np.pi * n * s + 2 * a3n) * g))


@dataclass(frozen=True)
class MixedDerivativeResult:
    """d^2 Phi_{j,m} / d eps_3 d alpha_{j,m} at the decoupled point.

    ``quadrature`` integrates the first-order integrand
    2 (w_l . w_3) q_l d(q_3)/d eps_3 d(phi^2)/d alpha exactly on the
    tensor grid; ``finite_difference`` is the one-sided second-order
    difference of the alpha-derivative of Phi in eps_3 >= 0.
    ``normalized`` divides by twice the coupling constant c_{3,l,j},
    which reduces the leading term to
    2 a^l_m gamma_{3,m} sin(2 alpha_{3,m} - 2 alpha_{j,m});
    ``reference`` is that closed form (zero when m is untracked by
    direction 3).
    """

    quadrature: float
    finite_difference: float
    normalized: float
    reference: float
    coupling: float


def mixed_derivative(point, j, m, *, grid=DEFAULT_GRID, eps3_step=1e-3,
                     alpha_step=1e-5, disagree_tol=1e-4):
    """Mixed derivative of Phi_{j,m} in (eps_3, alpha_{j,m}) by two routes.

    Raises MethodsDisagree when the quadrature and finite-difference
    values differ by more than ``disagree_tol * max(1, |quadrature|)``.
    """
    if j not in (1, 2):
        raise ValueError("mixed derivative is defined for directions 1-2")
    _require_decoupled(point, "mixed_derivative")
    dj = point.directions[j - 1]
    dl = point.directions[(2 - j)]          # the other large direction
    d3 = point.directions[2]
    lat = point.lattice

    # route (a): quadrature of the first-order integrand
    w_num = float(dl.delta @ d3.delta)
    w_den = ((dl.p * dj.d_coeffs[0] + dl.r * dj.d_coeffs[1])
             * (d3.p * dj.d_coeffs[0] + d3.r * dj.d_coeffs[1]))
    wl3 = w_num / w_den
    s = np.arange(grid) / grid
    I3 = point.index_sets[2]
    gam3 = np.asarray(point.base_gaps[2])
    dq3 = np.zeros(grid)
    for pos, n in enumerate(I3):
        dq3 += gam3[pos] * np.cos(2 * np.pi * n * s
                                  + 2 * point.alpha_tilde(3, n))
    ql = _realized(point, 3 - j)(s)
    g = alpha_derivative_profile(point, j, m, grid=grid, step=alpha_step)
    idx_l = _gather_index(dl, grid)
    idx_3 = _gather_index(d3, grid)
    idx_j = _gather_index(dj, grid)
    integrand = ql[idx_l] * dq3[idx_3] * g[idx_j]
    quad = 2.0 * wl3 * lat.vol_gamma * float(np.mean(integrand))

    # route (b): one-sided finite differences in eps_3 of dPhi/dalpha
    e1, e2 = point.eps[0], point.eps[1]
    at = point.alpha_tilde(j, m)

    def g_of(eps3):
        pt = point.with_eps((e1, e2, eps3, 0.0))
        hi = _phi_value(pt.with_alpha(j, m, at + alpha_step), j, m, grid)
        lo = _phi_value(pt.with_alpha(j, m, at - alpha_step), j, m, grid)
        return (hi - lo) / (2.0 * alpha_step)

    h = eps3_step
    fd = (-3.0 * g_of(0.0) + 4.0 * g_of(h) - g_of(2.0 * h)) / (2.0 * h)

    if abs(quad - fd) > disagree_tol * max(1.0, abs(quad)):
        raise MethodsDisagree(
            "mixed derivative (%d,%d): quadrature %.6e vs FD %.6e"
            % (j, m, quad, fd))

    cc = coupling_constant(lat, d3, dl, dj)
    normalized = quad / (2.0 * cc)
    if m in I3:
        acl = 0.5 * _background_cos_coeff(point, 3 - j, m)
        ref = 2.0 * acl * gam3[I3.index(m)] * np.sin(
            2 * point.alpha_tilde(3, m) - 2 * at)
    else:
        ref = 0.0
    return MixedDerivativeResult(quad, fd, normalized, float(ref), cc)


# ---------------------------------------------------------------------------
# phase sensitivity at the decoupled point
# ---------------------------------------------------------------------------

def _phase_at(point, j, m, s_val):
    """Lifted angle alpha_tilde_{j,m}(s) of a closed gap at the decoupled
    point: the joint flow over the direction's one-gap background for
    directions 1-2, the free slope pi*m*s otherwise."""
    geff = effective_gaps(point)[j - 1]
    I = point.index_sets[j - 1]
    at = point.alpha_tilde(j, m)
    if j <= 2 and geff[I.index(1)] > _GAP_FLOOR:
        g1 = float(geff[I.index(1)])
        spec_bg = _one_gap_background(g1, max(I))[1]
        a1 = point.alpha_tilde(j, 1)
        out = alpha_tilde_flow_E1(j, m, spec_bg, (a1, at),
                                  np.array([0.0, s_val]))
        return float(out[-1])
    return at + np.pi * m * s_val


def phase_sensitivity(point, *, s_val=0.37, step=1e-4):
    """Sensitivity matrix d alpha_tilde_{j,m}(s) / d alpha_{r,k} at the
    decoupled point, rows and columns over the small gap set.

    Each closed-gap phase rides only on its own direction's gap-1
    background, so the matrix is the identity: the diagonal is exact
    because the starting angle enters the flow additively, and
    off-diagonal entries vanish because no other small-gap angle enters
    the flow at all.  Computed by central differences so the statement
    is checked on the evaluated map, not assumed.
    """
    _require_decoupled(point, "phase_sensitivity")
    labels = point.small_gap_set
    n = len(labels)
    mat = np.zeros((n, n))
    for col, (r, k) in enumerate(labels):
        art = point.alpha_tilde(r, k)
        hi = point.with_alpha(r, k, art + step)
        lo = point.with_alpha(r, k, art - step)
        for row, (j, m) in enumerate(labels):
            if j != r:
                continue            # other directions never read alpha_{r,k}
            mat[row, col] = (_phase_at(hi, j, m, s_val)
                             - _phase_at(lo, j, m, s_val)) / (2 * step)
    return mat


# ---------------------------------------------------------------------------
# coupling-size selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EpsilonSelection:
    """Certified pair (eps_1, eps_2) for a margin parameter beta.

    ``slacks`` lists (name, value) for every inequality entering the
    certificate; all values are positive when the pair is feasible.
    ``vacuous`` flags the degenerate case of an identically zero
    direction-3 gap table, where every constraint is empty and the grid
    maximum is returned.
    """

    eps1: float
    eps2: float
    beta: float
    slacks: tuple
    vacuous: bool = False

    def to_json(self, path):
        payload = {
            "eps1": self.eps1, "eps2": self.eps2, "beta": self.beta,
            "vacuous": self.vacuous,
            "slacks": {name: val for name, val in self.slacks},
        }
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _background_coeff_table(point_template, l, eps_l, n_max):
    """Classical background coefficients a^l_k, k = 1..n_max, at coupling
    ``eps_l`` (zero table when the background is flat)."""
    g1 = eps_l * point_template.base_gaps[l - 1][
        point_template.gap_position(l, 1)]
    if g1 <= _GAP_FLOOR:
        return np.zeros(n_max)
    coeffs = wp_fourier_coeffs(WpParams(tau_from_gap(g1)))
    out = np.zeros(n_max)
    k = min(n_max, coeffs.size)
    out[:k] = coeffs[:k]
    return out


def select_epsilons(beta, point_template, *, grid=DEFAULT_GRID,
                    eps_grid=None, b_floor=1e-9, gamma3=None):
    """Choose (eps_1, eps_2) with certified inequality slacks.

    ``beta`` in (0, 1) is the phase margin: all certificates bound
    signal terms from below by sin(beta) on the angle set staying
    ``beta`` away from multiples of pi/2 in the doubled angles.  The
    template supplies the lattice, directions, index sets, base gap
    tables and angles; its eps entries are ignored.  ``gamma3``
    optionally overrides the direction-3 gap table (a table of zeros
    makes every constraint vacuous and returns the grid maximum).

    Selection runs in two stages on a log grid (largest candidates
    first).  First eps_2 is fixed by the diagonal-remainder bound
    eps_2 * C < sin(beta), with C the empirical constant of the
    O(eps_2) remainder of b_{2,m,m}.  Then eps_1 is fixed jointly by
    the main-term bound (M_m + 2) eps_1 < |a^2_m| gamma_{3,m}
    sin(beta) / (2 n) over direction 1's tracked gaps and by the order
    bound: for each m, the first non-vanishing b_{2,m,n} term dominates
    the tail sum_{k>n} gamma_{3,k} a^1_k b_{2,m,k}.  Raises
    NoFeasibleEpsilon when the grid is exhausted.
    """
    if not 0.0 < beta < 1.0:
        raise ValueError("beta must lie in (0, 1)")
    if eps_grid is None:
        eps_grid = np.geomspace(0.9, 1e-6, 13)
    eps_grid = np.sort(np.asarray(eps_grid, float))[::-1]
    sin_beta = float(np.sin(beta))
    I1, I2, I3 = (point_template.index_sets[k] for k in range(3))
    if gamma3 is None:
        gamma3 = point_template.base_gaps[2]
    gam3 = np.asarray(gamma3, float)
    if gam3.shape != (len(I3),):
        raise ValueError("gamma3 must have one entry per tracked gap of "
                         "direction 3")
    n_coupled = point_template.n_coupled

    if np.all(gam3 <= _GAP_FLOOR):
        return EpsilonSelection(float(eps_grid[0]), float(eps_grid[0]),
                                float(beta), (), vacuous=True)

    def at_pairs(pt, m, aj, a3, j):
        out = pt.with_alpha(j, m, aj)
        if m in I3:
            out = out.with_alpha(3, m, a3)
        return out

    # --- stage 1: eps_2 from the diagonal remainder constant ------------
    eps2 = None
    slack2 = None
    for cand in eps_grid:
        dev = 0.0
        pt2 = point_template.with_eps((0.0, float(cand), 0.0, 0.0))
        for m in I2:
            if m not in I3:
                continue            # no resonant diagonal term to certify
            for aj, a3 in _ALPHA_PAIRS:
                pt = at_pairs(pt2, m, aj, a3, 2)
                b = b_coeff(pt, 2, m, m, grid=grid)
                dev = max(dev, abs(b - np.sin(2 * a3 - 2 * aj)))
        if dev < sin_beta:
            eps2, slack2 = float(cand), sin_beta - dev
            break
    if eps2 is None:
        raise NoFeasibleEpsilon(
            "no eps_2 on the grid satisfies the remainder bound "
            "(closest deviation %.3e vs sin(beta) = %.3e)" % (dev, sin_beta))
    slacks = [("eps2_diagonal_remainder", slack2)]

    # --- stage 2: tables that do not depend on eps_1 --------------------
    pt2 = point_template.with_eps((0.0, eps2, 0.0, 0.0))
    n_max = max(max(I1), max(I2), max(I3))
    a2 = _background_coeff_table(point_template, 2, eps2, n_max)

    b_max = {}          # (m, n) -> max |b_{2,m,n}| over probe angles
    b_at_max = {}       # (m, n) -> full row {k: b_{2,m,k}} at the argmax
    for m in I2:
        for n in I3:
            best, best_pt = 0.0, None
            for aj, a3 in _ALPHA_PAIRS:
                pt = at_pairs(pt2, m, aj, a3, 2)
                val = abs(b_coeff(pt, 2, m, n, grid=grid))
                if val >= best:
                    best, best_pt = val, pt
            b_max[(m, n)] = best
            b_at_max[(m, n)] = {k: b_coeff(best_pt, 2, m, k, grid=grid)
                                for k in I3 if k > n}

    # --- stage 3: eps_1 jointly from the main-term and order bounds -----
    def m_bound(pt1, m):
        g = alpha_derivative_profile(pt1, 1, m, grid=grid)
        return float(np.max(np.abs(g)))

    chosen = None
    for cand in eps_grid:
        pt1 = point_template.with_eps((float(cand), eps2, 0.0, 0.0))
        a1 = _background_coeff_table(point_template, 1, float(cand), n_max)
        trial = []
        ok = True
        for m in I1:
            if m not in I3 or gam3[I3.index(m)] <= _GAP_FLOOR:
                continue
            rhs = (abs(a2[m - 1]) * gam3[I3.index(m)] * sin_beta
                   / (2.0 * n_coupled))
            lhs = (m_bound(pt1, m) + 2.0) * float(cand)
            trial.append(("main_term_m%d" % m, rhs - lhs))
            if rhs - lhs <= 0:
                ok = False
                break
        if ok:
            for m in I2:
                lead = None
                for n in I3:
                    if b_max[(m, n)] > b_floor:
                        lead = n
                        break
                if lead is None:
                    continue        # row vanishes identically: nothing to order
                lhs = (gam3[I3.index(lead)] * abs(a1[lead - 1])
                       * b_max[(m, lead)])
                tail = sum(gam3[I3.index(k)] * a1[k - 1] * bk
                           for k, bk in b_at_max[(m, lead)].items())
                trial.append(("order_dominance_m%d" % m, lhs - abs(tail)))
                ok = ok and lhs - abs(tail) > 0
        if ok:
            chosen = float(cand)
            slacks.extend(trial)
            break
    if chosen is None:
        raise NoFeasibleEpsilon(
            "no eps_1 on the grid satisfies the main-term/order bounds "
            "at eps_2 = %.3e" % eps2)
    return EpsilonSelection(chosen, eps2, float(beta), tuple(slacks))
