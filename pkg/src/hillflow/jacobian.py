"""Jacobian of the invariant map and the rigidity certification scan.

The map sends the tracked angles alpha_{l,k} over the small gap set to
the invariants Phi_{j,m}.  Its Jacobian J has rows indexed by the
angles and columns by the invariants (both in the small-gap ordering of
:class:`~hillflow.invariants.InvariantVector`); every entry is a central
finite difference of a quadrature value.

At the decoupled point the first ``n`` columns (the coupled gaps of
directions 1-2) vanish identically, so det J = 0 there.  What survives
is the reduced determinant: replace those columns by their eps_3
derivatives.  The resulting matrix is triangular up to numerically
small off-pattern entries - the coupled block is diagonal (the mixed
derivatives), the remaining columns have a single entry at their own
(j, m) row - so its determinant splits into a product of diagonal
entries.  ``structure_at_eps0`` verifies that shape, and
``reduced_determinant`` returns the direct determinant next to the
diagonal product.

``rigidity_scan`` leaves the decoupled point: on a grid of coupling
pairs (eps_3, eps_4) and a sample of angle tables it evaluates |det J|
per cell and certifies the cell when the determinant exceeds ten times
its own noise floor - the shift of the determinant when every
quadrature is doubled at fixed difference step, which is the dominant
error source at the default step.  Cells at degenerate angles - any
multiple of pi/2 in a doubled angle - stay at the noise floor and are
reported as the empirical zero set.
"""

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import invariants as _inv
from .errors import PatternViolation, QuadratureNoiseDominates
from .finitegap import TorusPoint
from .invariants import DEFAULT_GRID
from .lattice import coupling_constant

__all__ = [
    "JacobianReport", "StructureReport", "ReducedDeterminant",
    "ScanCell", "ScanResult", "jacobian", "structure_at_eps0",
    "reduced_determinant", "rigidity_scan",
]


# ---------------------------------------------------------------------------
# finite-difference assembly
# ---------------------------------------------------------------------------

def _phi_row(point, labels, grid):
    """All tracked invariants of ``point`` as one array."""
    return np.array([_inv._phi_value(point, j, m, grid)
                     for (j, m) in labels])


def _jacobian_matrix(point, grid, h_alpha):
    """J[r, c] = d Phi_{labels[c]} / d alpha_{labels[r]}, central FD."""
    labels = point.small_gap_set
    n_all = len(labels)
    J = np.empty((n_all, n_all))
    for r, (l, k) in enumerate(labels):
        at = point.alpha_tilde(l, k)
        hi = _phi_row(point.with_alpha(l, k, at + h_alpha), labels, grid)
        lo = _phi_row(point.with_alpha(l, k, at - h_alpha), labels, grid)
        J[r] = (hi - lo) / (2.0 * h_alpha)
    return J


def _coupled_column_derivative(point, grid, h_alpha, eps3_step):
    """d v_i / d eps_3 for the coupled columns i <= n, one-sided in
    eps_3 >= 0 at second order."""
    labels = point.small_gap_set
    n = point.n_coupled
    e1, e2 = point.eps[0], point.eps[1]
    stack = []
    for mult in (0, 1, 2):
        pt = point.with_eps((e1, e2, mult * eps3_step, 0.0))
        J = _jacobian_matrix(pt, grid, h_alpha)
        stack.append(J[:, :n])
    v0, v1, v2 = stack
    return (-3.0 * v0 + 4.0 * v1 - v2) / (2.0 * eps3_step)


# ---------------------------------------------------------------------------
# Jacobian report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JacobianReport:
    """Finite-difference Jacobian of the invariant map at one point.

    ``J`` has rows indexed by the angles and columns by the invariants,
    both in small-gap order; ``det`` comes from the pivoted LU
    factorization.  ``zero_columns`` lists columns with max-norm below
    ``ztol`` = 1e-6 * max|J|.  ``structure_flags`` records whether the
    coupled columns vanish and whether every remaining column is
    dominated by its own (j, m) row.  ``noise_floor`` re-evaluates the
    strongest column on the doubled quadrature grid.
    """

    J: np.ndarray
    det: float
    zero_columns: tuple
    structure_flags: dict
    condition_number: float
    noise_floor: float
    ztol: float
    labels: tuple
    n_coupled: int


def jacobian(point, h_alpha=1e-5, *, grid=DEFAULT_GRID):
    """Assemble the full Jacobian report at ``point``.

    Raises QuadratureNoiseDominates when even the largest entry of J
    fails to clear ten times the quadrature-limited noise of the
    strongest column (estimated by recomputing that column with the
    doubled grid).
    """
    labels = point.small_gap_set
    n = point.n_coupled
    J = _jacobian_matrix(point, grid, h_alpha)
    j_max = float(np.max(np.abs(J)))

    col_norms = np.max(np.abs(J), axis=0)
    kcol = int(np.argmax(col_norms))
    l, k = labels[kcol]
    ref = J[:, kcol]
    dbl = np.empty_like(ref)
    for r, (lr, kr) in enumerate(labels):
        at = point.alpha_tilde(lr, kr)
        hi = _inv._phi_value(point.with_alpha(lr, kr, at + h_alpha),
                             l, k, 2 * grid)
        lo = _inv._phi_value(point.with_alpha(lr, kr, at - h_alpha),
                             l, k, 2 * grid)
        dbl[r] = (hi - lo) / (2.0 * h_alpha)
    noise = float(np.max(np.abs(dbl - ref)))
    if j_max < 10.0 * noise:
        raise QuadratureNoiseDominates(
            "largest Jacobian entry %.3e sits below 10x the quadrature "
            "noise %.3e of column (%d,%d)" % (j_max, noise, l, k))

    ztol = 1e-6 * j_max
    zero_columns = tuple(i for i in range(len(labels))
                         if col_norms[i] < ztol)
    tail_single = True
    for i in range(n, len(labels)):
        own = abs(J[i, i])
        rest = np.abs(np.delete(J[:, i], i))
        tail_single = tail_single and own > 10.0 * np.max(rest)
    flags = {
        "coupled_columns_zero": all(i in zero_columns for i in range(n)),
        "tail_single_entry": bool(tail_single),
    }
    return JacobianReport(
        J=J, det=float(np.linalg.det(J)), zero_columns=zero_columns,
        structure_flags=flags,
        condition_number=float(np.linalg.cond(J)),
        noise_floor=noise, ztol=ztol, labels=labels, n_coupled=n)


# ---------------------------------------------------------------------------
# structure at the decoupled point
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureReport:
    """Verified block structure of the Jacobian at the decoupled point.

    ``coupled_residual`` is the largest coupled-column norm relative to
    max|J|; ``mixed_diagonal`` holds the eps_3 derivatives of the
    coupled columns at their own rows, ``i3_block_max`` the largest
    derivative entry in the direction-3 row block (generally nonzero),
    and ``single_entries`` the dominant entries of the remaining
    columns together with their closed-form prediction
    -2 c_{1,2,j} a1 a2 sin(2 alpha).  ``off_pattern`` is the largest
    entry outside all allowed positions, relative to the dominant scale
    of its own matrix.
    """

    j_norm: float
    coupled_residual: float
    mixed_diagonal: np.ndarray
    i3_block_max: float
    single_entries: np.ndarray
    closed_form: np.ndarray
    closed_form_residual: float
    off_pattern: float
    labels: tuple
    n_coupled: int


def structure_at_eps0(point, *, grid=DEFAULT_GRID, h_alpha=1e-5,
                      eps3_step=1e-3, pattern_tol=1e-4,
                      coupled_tol=1e-6):
    """Check the decoupled-point shape of the Jacobian.

    Verifies (i) the coupled columns vanish relative to max|J|,
    (ii) their eps_3 derivatives are diagonal up to entries in the
    direction-3 row block, (iii) every remaining column has a single
    entry at its own row matching the product closed form.  Raises
    PatternViolation naming the offending entry otherwise.
    """
    _inv._require_decoupled(point, "structure_at_eps0")
    labels = point.small_gap_set
    n = point.n_coupled
    J = _jacobian_matrix(point, grid, h_alpha)
    j_norm = float(np.max(np.abs(J)))

    coupled_residual = float(np.max(np.abs(J[:, :n]))) / j_norm
    if coupled_residual >= coupled_tol:
        i = int(np.argmax(np.max(np.abs(J[:, :n]), axis=0)))
        raise PatternViolation(
            "coupled column %s has relative norm %.3e (tolerance %.1e)"
            % (labels[i], coupled_residual, coupled_tol))

    dV = _coupled_column_derivative(point, grid, h_alpha, eps3_step)
    i3_rows = [r for r, (l, _) in enumerate(labels) if l == 3]
    off_dv = 0.0
    scale_dv = float(np.max(np.abs(dV)))
    for i in range(n):
        allowed = {i, *i3_rows}
        for r in range(len(labels)):
            if r in allowed:
                continue
            off_dv = max(off_dv, abs(dV[r, i]) / scale_dv)
            if off_dv >= pattern_tol:
                raise PatternViolation(
                    "eps_3 derivative of column %s has off-pattern entry "
                    "%.3e at row %s" % (labels[i], dV[r, i], labels[r]))

    single = np.empty(len(labels) - n)
    closed = np.empty(len(labels) - n)
    off_tail = 0.0
    scale_tail = float(np.max(np.abs(J[:, n:])))
    for i in range(n, len(labels)):
        j, m = labels[i]
        single[i - n] = J[i, i]
        d = point.directions[j - 1]
        cc = coupling_constant(point.lattice, point.directions[0],
                               point.directions[1], d)
        a1 = _inv._background_cos_coeff(point, 1, m * abs(d.p))
        a2 = _inv._background_cos_coeff(point, 2, m * abs(d.r))
        closed[i - n] = (-2.0 * cc * a1 * a2
                         * np.sin(2.0 * point.alpha_tilde(j, m)))
        for r in range(len(labels)):
            if r == i:
                continue
            off_tail = max(off_tail, abs(J[r, i]) / scale_tail)
            if off_tail >= pattern_tol:
                raise PatternViolation(
                    "column %s has off-pattern entry %.3e at row %s"
                    % (labels[i], J[r, i], labels[r]))

    strong = np.abs(closed) > 1e-3 * np.max(np.abs(closed))
    cf_res = float(np.max(np.abs(single[strong] - closed[strong])
                          / np.abs(closed[strong])))
    return StructureReport(
        j_norm=j_norm, coupled_residual=coupled_residual,
        mixed_diagonal=np.array([dV[i, i] for i in range(n)]),
        i3_block_max=float(np.max(np.abs(dV[i3_rows, :]))),
        single_entries=single, closed_form=closed,
        closed_form_residual=cf_res,
        off_pattern=max(off_dv, off_tail), labels=labels, n_coupled=n)


# ---------------------------------------------------------------------------
# reduced determinant
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ReducedDeterminant:
    """det of the coupled-column eps_3 derivatives next to the tail
    columns, with the diagonal product it factors into."""

    direct: float
    diagonal_product: float
    diagonal: np.ndarray
    labels: tuple

    @property
    def rel_gap(self):
        scale = max(abs(self.direct), abs(self.diagonal_product))
        return abs(self.direct - self.diagonal_product) / scale


def reduced_determinant(point, *, grid=DEFAULT_GRID, h_alpha=1e-5,
                        eps3_step=1e-3):
    """Evaluate the reduced determinant at the decoupled point.

    The matrix replaces the vanishing coupled columns of J by their
    eps_3 derivatives; by the verified triangular structure its
    determinant agrees with the product of the diagonal entries.
    """
    _inv._require_decoupled(point, "reduced_determinant")
    labels = point.small_gap_set
    n = point.n_coupled
    J = _jacobian_matrix(point, grid, h_alpha)
    dV = _coupled_column_derivative(point, grid, h_alpha, eps3_step)
    M = J.copy()
    M[:, :n] = dV
    diag = np.diagonal(M).copy()
    return ReducedDeterminant(
        direct=float(np.linalg.det(M)),
        diagonal_product=float(np.prod(diag)),
        diagonal=diag, labels=labels)


# ---------------------------------------------------------------------------
# rigidity scan
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScanCell:
    eps3: float
    eps4: float
    alpha_id: str
    abs_det: float
    noise_floor: float
    certified: bool


@dataclass(frozen=True)
class ScanResult:
    """|det J| over a coupling grid and angle sample, with per-cell
    noise floors and certification flags."""

    eps1: float
    eps2: float
    grid: int
    h_alpha: float
    cells: tuple

    @property
    def zero_set(self):
        """Cells indistinguishable from det = 0."""
        return tuple((c.eps3, c.eps4, c.alpha_id) for c in self.cells
                     if not c.certified)

    @property
    def certified_fraction(self):
        flags = [c.certified for c in self.cells]
        return float(np.mean(flags)) if flags else 0.0

    def to_csv(self, path, header_comment=""):
        lines = []
        if header_comment:
            lines.append("# " + header_comment)
        lines.append("eps3,eps4,alpha_id,abs_det,noise_floor,certified_flag")
        for c in self.cells:
            lines.append("%.17g,%.17g,%s,%.17g,%.17g,%d"
                         % (c.eps3, c.eps4, c.alpha_id, c.abs_det,
                            c.noise_floor, int(c.certified)))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _with_angles(template, angles):
    alpha = tuple(TorusPoint.from_alpha_tilde(a) for a in angles)
    return dataclasses.replace(template, alpha=alpha)


def rigidity_scan(template, eps1, eps2, *, eps3_values, eps4_values,
                  alpha_samples, grid=64, h_alpha=1e-5):
    """Certify nonvanishing of det J over a coupling grid.

    ``alpha_samples`` maps sample ids to full angle tables (one tuple
    of lifted angles per direction).  Each cell evaluates det J on the
    base and the doubled quadrature grid at the same difference step;
    the shift is the noise floor and the cell is certified when |det|
    exceeds ten times it.  Cells are independent; failures never abort
    the scan.
    """
    cells = []
    for alpha_id, angles in alpha_samples.items():
        base = _with_angles(template, angles)
        for e3 in eps3_values:
            for e4 in eps4_values:
                pt = base.with_eps((eps1, eps2, float(e3), float(e4)))
                d_lo = np.linalg.det(_jacobian_matrix(pt, grid, h_alpha))
                d_hi = np.linalg.det(_jacobian_matrix(pt, 2 * grid,
                                                      h_alpha))
                floor = abs(d_hi - d_lo)
                cells.append(ScanCell(
                    eps3=float(e3), eps4=float(e4), alpha_id=str(alpha_id),
                    abs_det=abs(float(d_hi)), noise_floor=float(floor),
                    certified=bool(abs(d_hi) > 10.0 * floor)))
    return ScanResult(eps1=float(eps1), eps2=float(eps2), grid=grid,
                      h_alpha=float(h_alpha), cells=tuple(cells))
