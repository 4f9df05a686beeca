"""Isospectral torus flows for finite-gap Hill operators.

Angle coordinates on the torus of potentials sharing a periodic spectrum,
the translation flow of the Dirichlet eigenvalues, trace-formula
reconstruction of the potential, squared periodic eigenfunctions with
their s-derivatives, and the phase flow / limit eigenfunctions for the
regime where a direction carries a single open gap.

Each open gap m hosts one Dirichlet eigenvalue mu_m in [lam_m^-, lam_m^+],
parametrized by

    mu_m = lam_m^- + gamma_m * sin(alpha_tilde_m)**2,

where the lifted angle alpha_tilde_m increases monotonically under
translation and winds by m*pi per period.  Integrating in the lifted
angles removes the square-root singularity the mu-equations have at the
gap edges; the sheet label (direction of mu motion) flips automatically
as the angle passes multiples of pi/2.
"""

import numpy as np
from dataclasses import dataclass
from scipy.integrate import solve_ivp

from .errors import (CollisionError, DegenerateGap, IntegrationFailure,
                     OutOfGap)

__all__ = [
    "GapCoordinate", "TorusPoint", "FlowResult",
    "alpha_from_mu", "mu_from_alpha", "initial_torus_point",
    "mu_flow", "reconstruct_potential",
    "eigenfunction_sq", "eigenfunction_sq_ds",
    "alpha_tilde_flow_E1", "limit_eigenfunction_E1",
    "COLLISION_TOL",
]

#: two Dirichlet trajectories closer than this abort the flow
COLLISION_TOL = 1e-10

_RTOL = 1e-12
_ATOL = 1e-12
_HALF_PI = 0.5 * np.pi


@dataclass(frozen=True)
class GapCoordinate:
    """Position of a Dirichlet eigenvalue inside its open gap.

    ``alpha`` lies in (-pi/2, pi/2] and parametrizes the eigenvalue
    through mu = lam^- + (lam^+ - lam^-) sin(alpha)^2; ``sheet`` records
    the direction of motion of mu under the translation flow (+1 while
    mu increases, -1 while it decreases).  Together they cover the full
    circle: interior alpha > 0 forces sheet +1, interior alpha < 0
    forces sheet -1, and at the turning points alpha in {0, pi/2} both
    sheet labels describe the same state.
    """

    alpha: float
    sheet: int = 1

    def __post_init__(self):
        if not (-_HALF_PI < self.alpha <= _HALF_PI):
            raise ValueError("alpha must lie in (-pi/2, pi/2], got %r"
                             % (self.alpha,))
        if self.sheet not in (-1, 1):
            raise ValueError("sheet must be +1 or -1, got %r" % (self.sheet,))
        if 0.0 < self.alpha < _HALF_PI and self.sheet != 1:
            raise ValueError("alpha in (0, pi/2) requires sheet +1")
        if self.alpha < 0.0 and self.sheet != -1:
            raise ValueError("alpha in (-pi/2, 0) requires sheet -1")

    @property
    def alpha_tilde(self):
        """Lifted angle in [0, pi): alpha on sheet +1, alpha + pi on sheet -1."""
        return self.alpha if self.alpha >= 0.0 else self.alpha + np.pi

    @classmethod
    def from_alpha_tilde(cls, alpha_tilde):
        """Coordinate for a lifted angle (any real value, reduced mod pi)."""
        at = float(alpha_tilde) % np.pi
        if at <= _HALF_PI:
            return cls(at, 1)
        return cls(at - np.pi, -1)


@dataclass(frozen=True)
class TorusPoint:
    """One coordinate per open gap, ordered by increasing gap index."""

    coords: tuple

    def __post_init__(self):
        coords = tuple(self.coords)
        for c in coords:
            if not isinstance(c, GapCoordinate):
                raise TypeError("coords must be GapCoordinate instances")
        object.__setattr__(self, "coords", coords)

    @property
    def dimension(self):
        return len(self.coords)

    @property
    def alpha_tilde(self):
        """Vector of lifted angles, one per open gap."""
        return np.array([c.alpha_tilde for c in self.coords])

    @classmethod
    def from_alpha_tilde(cls, values):
        return cls(tuple(GapCoordinate.from_alpha_tilde(v) for v in values))


def alpha_from_mu(mu, edges, sheet=1, tol=None):
    """Angle coordinate of a Dirichlet eigenvalue in the gap ``edges``.

    Parameters
    ----------
    mu : float
        Eigenvalue, expected in [lam^-, lam^+] up to `tol`.
    edges : pair of floats
        Gap endpoints (lam^-, lam^+) with lam^- < lam^+.
    sheet : {+1, -1}
        Direction of motion of mu, kept as supplied.
    tol : float, optional
        Clipping tolerance; beyond it OutOfGap is raised.  Defaults to
        1e-9 relative to the edge magnitudes.

    Returns
    -------
    GapCoordinate
    """
    lo, hi = float(edges[0]), float(edges[1])
    if not hi > lo:
        raise ValueError("edges must satisfy lam^- < lam^+")
    if tol is None:
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
    if mu < lo - tol or mu > hi + tol:
        raise OutOfGap("mu=%r outside gap [%g, %g]" % (mu, lo, hi))
    r = min(max((mu - lo) / (hi - lo), 0.0), 1.0)
    a = float(np.arcsin(np.sqrt(r)))
    if sheet == -1 and 0.0 < a < _HALF_PI:
        a = -a
    return GapCoordinate(a, +1 if sheet == 1 else -1)


def mu_from_alpha(c, edges):
    """Dirichlet eigenvalue encoded by a coordinate in the gap ``edges``."""
    lo, hi = float(edges[0]), float(edges[1])
    if hi < lo:
        raise ValueError("edges must satisfy lam^- <= lam^+")
    return lo + (hi - lo) * np.sin(c.alpha) ** 2


def initial_torus_point(q, spec, *, step=1e-5):
    """Torus coordinates of the potential ``q`` itself.

    Angles come from the Dirichlet eigenvalues stored in ``spec``; the
    sheet of each open gap is set from the sign of the forward change of
    the eigenvalue under a small translation of ``q``.  The label is
    ambiguous when a turning point falls within ``step`` of s = 0; pick
    a smaller step or build the point explicitly in that case.
    """
    from .hill1d import dirichlet_spectrum

    if spec.dirichlet is None:
        raise ValueError("spectrum carries no Dirichlet eigenvalues")
    I = spec.open_set
    if not I:
        return TorusPoint(())
    idx = np.asarray(I, dtype=int) - 1
    mu0 = np.asarray(spec.dirichlet)[idx]
    mup = dirichlet_spectrum(q.translate(step), spec.m_max)[idx]
    coords = []
    for i, m in enumerate(I):
        sheet = +1 if mup[i] >= mu0[i] else -1
        coords.append(alpha_from_mu(mu0[i], spec.gap_edges[m - 1], sheet))
    return TorusPoint(tuple(coords))


def _omega(at, lo, hi, gam, lam0):
    """Angular speeds of the lifted angles ``at`` plus the mu values."""
    mu = lo + gam * np.sin(at) ** 2
    om = np.sqrt(mu - lam0)
    if len(mu) > 1:
        diff = np.abs(mu[:, None] - mu[None, :])
        np.fill_diagonal(diff, np.inf)
        if diff.min() < COLLISION_TOL:
            raise CollisionError(
                "Dirichlet trajectories within %g of each other" % COLLISION_TOL)
        num = (hi[None, :] - mu[:, None]) * (lo[None, :] - mu[:, None])
        np.fill_diagonal(num, 1.0)
        np.fill_diagonal(diff, 1.0)
        om = om * np.prod(np.sqrt(np.maximum(num, 0.0)) / diff, axis=1)
    return mu, om


def mu_flow(spec, start, s_grid, *, rtol=_RTOL, atol=_ATOL):
    """Translation flow of the Dirichlet eigenvalues of a finite-gap spectrum.

    The coupled system is integrated in the lifted angles, where each
    right-hand side

        d(alpha_tilde_m)/ds = sqrt(mu_m - lam_0)
            * prod_{n != m} sqrt((lam_n^+ - mu_m)(lam_n^- - mu_m)) / |mu_n - mu_m|

    is smooth and positive; the corresponding mu-equations would have
    square-root turning points at the gap edges.  The convention is
    normalized so that the trajectory mu_m(s) reproduces the Dirichlet
    spectrum of the translated potential q(. + s).

    Parameters
    ----------
    spec : Spectrum1D
        Finite-gap spectral data (only the open gaps enter the flow).
    start : TorusPoint or array_like
        Starting coordinates, one per open gap; an array is read as
        lifted angles.
    s_grid : array_like
        Strictly increasing evaluation points.

    Returns
    -------
    FlowResult
        Lifted angles, eigenvalues and their s-derivatives on the grid.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or s_grid.size == 0:
        raise ValueError("s_grid must be a nonempty 1-D array")
    if s_grid.size > 1 and np.any(np.diff(s_grid) <= 0.0):
        raise ValueError("s_grid must be strictly increasing")
    I = spec.open_set
    g = len(I)
    if isinstance(start, TorusPoint):
        at0 = start.alpha_tilde
    else:
        at0 = np.asarray(start, dtype=float)
    if at0.shape != (g,):
        raise ValueError("start has %d coordinates, spectrum has %d open gaps"
                         % (at0.size, g))
    ns = s_grid.size
    if g == 0:
        empty = np.zeros((ns, 0))
        return FlowResult(s_grid, [], empty, empty.copy(), empty.copy())

    idx = np.asarray(I, dtype=int) - 1
    lo = spec.gap_edges[idx, 0].copy()
    hi = spec.gap_edges[idx, 1].copy()
    gam = hi - lo
    lam0 = spec.lambda0

    def rhs(s, at):
        return _omega(at, lo, hi, gam, lam0)[1]

    if s_grid[0] == s_grid[-1]:
        at = np.tile(at0, (ns, 1))
    else:
        sol = solve_ivp(rhs, (s_grid[0], s_grid[-1]), at0, t_eval=s_grid,
                        method="DOP853", rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegrationFailure("translation flow failed: %s" % sol.message)
        at = sol.y.T

    mu = np.empty((ns, g))
    dmu = np.empty((ns, g))
    for i in range(ns):
        mu[i], om = _omega(at[i], lo, hi, gam, lam0)
        dmu[i] = gam * np.sin(2.0 * at[i]) * om
    return FlowResult(s_grid, list(I), at, mu, dmu)


@dataclass
class FlowResult:
    """Flow trajectories on an s grid, one column per open gap."""

    s: np.ndarray
    m_list: list
    alpha_tilde: np.ndarray
    mu: np.ndarray
    dmu_ds: np.ndarray

    def torus_point(self, i):
        """Coordinates at grid index ``i`` (sheets derived from the angles)."""
        return TorusPoint.from_alpha_tilde(self.alpha_tilde[i])

    def to_csv(self, path, footer_comment=""):
        header = ",".join(
            ["s"]
            + ["mu_%d" % m for m in self.m_list]
            + ["alpha_tilde_%d" % m for m in self.m_list])
        data = np.hstack([self.s[:, None], self.mu, self.alpha_tilde])
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   footer="# " + footer_comment if footer_comment else "",
                   fmt="%.17e")


def _mu_columns(spec, mu_at_s):
    """Validate/shape a mu trajectory array against the open gaps of ``spec``."""
    I = spec.open_set
    mu = np.asarray(mu_at_s, dtype=float)
    if mu.ndim == 1:
        mu = mu[:, None]
    if mu.ndim != 2 or mu.shape[1] != len(I):
        raise ValueError("expected %d mu columns, got shape %r"
                         % (len(I), np.shape(mu_at_s)))
    return mu, np.asarray(I, dtype=int) - 1


def reconstruct_potential(spec, mu_at_s):
    """Potential samples from spectral edges and a Dirichlet trajectory.

    q(s) = lam_0 + sum over open gaps of (lam_m^+ + lam_m^- - 2 mu_m(s)).
    With no open gaps the result is the constant lam_0.
    """
    mu, idx = _mu_columns(spec, mu_at_s)
    edges = spec.gap_edges[idx]
    return spec.lambda0 + np.sum(edges[:, 0] + edges[:, 1] - 2.0 * mu, axis=1)


def _eigenfunction_ratios(spec, m, mu_at_s):
    """Per-gap factors (lam_m^+ - mu_n)/(lam_m^+ - lamdot_n) and the edge data."""
    if not 1 <= m <= spec.m_max:
        raise ValueError("gap index m=%r outside 1..%d" % (m, spec.m_max))
    mu, idx = _mu_columns(spec, mu_at_s)
    lamp = spec.gap_edges[m - 1, 1]
    lamdot = spec.critical[idx]
    if np.any(np.abs(lamp - lamdot) <= 1e-12 * max(1.0, abs(lamp))):
        raise DegenerateGap(
            "edge lam_%d^+ coincides with a critical point" % m)
    return (lamp - mu) / (lamp - lamdot), lamp, lamdot


def eigenfunction_sq(spec, m, mu_at_s):
    """Squared periodic eigenfunction at the upper edge of gap ``m``.

    The product over open gaps n of (lam_m^+ - mu_n(s))/(lam_m^+ - lamdot_n)
    is rescaled so its integral over one period equals 1.  ``mu_at_s``
    must be sampled on a uniform grid covering exactly one period with
    the right endpoint excluded (s_k = k/N), which makes the plain
    sample mean a spectrally accurate quadrature.
    """
    ratios, _, _ = _eigenfunction_ratios(spec, m, mu_at_s)
    raw = np.prod(ratios, axis=1)
    return raw / np.mean(raw)


def eigenfunction_sq_ds(spec, m, mu_at_s, dmu_ds):
    """s-derivative of :func:`eigenfunction_sq` on the same grid.

    Differentiates the product formula analytically using the flow
    derivatives ``dmu_ds``; each leave-one-out product is formed
    explicitly so gap edges (where a factor vanishes) need no special
    casing.  Shares the normalization constant with eigenfunction_sq.
    """
    ratios, lamp, lamdot = _eigenfunction_ratios(spec, m, mu_at_s)
    dmu, _ = _mu_columns(spec, dmu_ds)
    if dmu.shape != ratios.shape:
        raise ValueError("dmu_ds shape %r does not match mu_at_s" %
                         (np.shape(dmu_ds),))
    raw = np.prod(ratios, axis=1)
    total = np.zeros(ratios.shape[0])
    for k in range(ratios.shape[1]):
        others = np.prod(np.delete(ratios, k, axis=1), axis=1)
        total += (-dmu[:, k] / (lamp - lamdot[k])) * others
    return total / np.mean(raw)


def _single_gap_data(spec_j, m):
    """Edge data for the phase flow of closed gap ``m`` over a one-gap spectrum."""
    if not (isinstance(m, (int, np.integer)) and 2 <= m <= spec_j.m_max):
        raise ValueError("m must be an integer in 2..%d, got %r"
                         % (spec_j.m_max, m))
    if not np.all(spec_j.closed[1:]):
        raise ValueError("direction spectrum must have at most gap 1 open")
    lo1, hi1 = spec_j.gap_edges[0]
    lamp = spec_j.gap_edges[m - 1, 1]
    return spec_j.lambda0, lo1, hi1, lamp


def _flow_E1_full(m, spec_j, alpha_start, s_grid, rtol, atol):
    """Joint (alpha_tilde_1, alpha_tilde_m) phase flow; returns an (ns, 2) array."""
    lam0, lo1, hi1, lamp = _single_gap_data(spec_j, m)
    gam1 = hi1 - lo1
    C = np.sqrt((lamp - lam0) * (lamp - hi1) * (lamp - lo1))
    at0 = np.asarray(alpha_start, dtype=float)
    if at0.shape != (2,):
        raise ValueError(
            "alpha_start must supply (alpha_tilde_1, alpha_tilde_m)")
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or s_grid.size == 0:
        raise ValueError("s_grid must be a nonempty 1-D array")

    def rhs(s, at):
        mu1 = lo1 + gam1 * np.sin(at[0]) ** 2
        return [np.sqrt(mu1 - lam0), C / (lamp - mu1)]

    if s_grid[0] == s_grid[-1]:
        return np.tile(at0, (s_grid.size, 1))
    sol = solve_ivp(rhs, (s_grid[0], s_grid[-1]), at0, t_eval=s_grid,
                    method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationFailure("phase flow failed: %s" % sol.message)
    return sol.y.T


def _check_direction_label(j):
    if j not in (1, 2):
        raise ValueError("direction label j must be 1 or 2, got %r" % (j,))


def alpha_tilde_flow_E1(j, m, spec_j, alpha_start, s_grid, *,
                        rtol=_RTOL, atol=_ATOL):
    """Phase of closed gap ``m`` riding on the single open gap of direction ``j``.

    Integrates the joint system

        d(alpha_tilde_1)/ds = sqrt(mu_1 - lam_0),
        d(alpha_tilde_m)/ds = C_m / (lam_m^+ - mu_1(s)),
        C_m = sqrt((lam_m^+ - lam_0)(lam_m^+ - lam_1^+)(lam_m^+ - lam_1^-)),

    with mu_1 = lam_1^- + gamma_1 sin(alpha_tilde_1)^2 taken from
    ``spec_j``.  The result depends on the starting pair only through
    alpha_tilde_1 and an additive shift in alpha_tilde_m, so the
    sensitivity of the output to its own starting angle is exactly 1 and
    to every other closed-gap angle exactly 0.  When the open gap
    shrinks to zero the angle grows linearly with slope
    C_m / (lam_m^+ - lam_1^-), which is m*pi for the free spectrum.

    Parameters
    ----------
    j : {1, 2}
        Direction label (bookkeeping only).
    m : int
        Closed gap index, m >= 2.
    spec_j : Spectrum1D
        Spectrum of the direction potential; gaps 2.. must be closed.
    alpha_start : pair of floats
        Starting lifted angles (alpha_tilde_1, alpha_tilde_m).
    s_grid : array_like
        Evaluation points.

    Returns
    -------
    ndarray
        alpha_tilde_m on the grid.
    """
    _check_direction_label(j)
    return _flow_E1_full(m, spec_j, alpha_start, s_grid, rtol, atol)[:, 1]


def limit_eigenfunction_E1(j, m, spec_j, alpha, s_grid, *,
                           rtol=_RTOL, atol=_ATOL):
    """Eigenfunction at the doubly degenerate edge lam_m^+ of direction ``j``.

    For a one-gap direction potential, gap m >= 2 is closed and lam_m^+
    is a double eigenvalue; the member of the eigenspace selected by the
    starting angles is

        phi(s) = sqrt(2) cos(alpha_tilde_m(s))
                 * sqrt((lam_m^+ - mu_1(s)) / (lam_m^+ - lamdot_1)),

    with alpha_tilde_m from :func:`alpha_tilde_flow_E1`.  The closed
    form is normalized only approximately, so the returned samples are
    rescaled to unit period integral of phi^2; ``s_grid`` must therefore
    be a uniform grid over one period with the right endpoint excluded.
    As the open gap closes this reduces to sqrt(2) cos(m*pi*s + alpha).
    """
    _check_direction_label(j)
    at = _flow_E1_full(m, spec_j, alpha, s_grid, rtol, atol)
    lam0, lo1, hi1, lamp = _single_gap_data(spec_j, m)
    mu1 = lo1 + (hi1 - lo1) * np.sin(at[:, 0]) ** 2
    lamdot1 = spec_j.critical[0]
    phi = np.sqrt(2.0) * np.cos(at[:, 1]) * np.sqrt((lamp - mu1) /
                                                    (lamp - lamdot1))
    return phi / np.sqrt(np.mean(phi ** 2))
