import numpy as np
import pytest
from numpy.testing import assert_allclose

from hillflow import invariants as inv
from hillflow import jacobian as jac
from hillflow.errors import PatternViolation, QuadratureNoiseDominates
from hillflow.finitegap import TorusPoint
from hillflow.lattice import build_lattice, fundamental_directions
from hillflow.potential2d import ManifoldPoint

GAP_TABLE = ((7.0, 0.8, 0.35), (6.5, 0.9, 0.3), (1.2, 0.8, 0.5),
             (0.9, 0.6, 0.3))
ANGLES = ((np.pi / 2, 0.7, 1.3), (np.pi / 2, 0.4, 2.1),
          (0.9, 1.7, 0.45), (2.3, 0.8, 1.15))
DEGENERATE = ((np.pi / 2, np.pi / 2, np.pi / 2),) * 4
EPS_SELECTED = (3.080070288241024e-05, 0.9)


@pytest.fixture(scope="module")
def desk():
    lat = build_lattice((1.0, 0.0), (0.35, 1.12))
    return lat, fundamental_directions(lat, 1.6)


def make_point(desk, eps, gaps=GAP_TABLE, angles=ANGLES):
    lat, dirs = desk
    alpha = tuple(TorusPoint.from_alpha_tilde(a) for a in angles)
    return ManifoldPoint(lat, dirs, tuple(float(e) for e in eps),
                         ((1, 2, 3),) * 4, gaps, alpha)


@pytest.fixture(scope="module")
def balanced(desk):
    """Backgrounds at comparable strength, small couplings off."""
    return make_point(desk, (6 / 7, 6 / 6.5, 0.0, 0.0))


# -- Jacobian report --------------------------------------------------------

def test_jacobian_rank_deficiency_at_decoupled_point(balanced):
    rep = jac.jacobian(balanced, grid=128)
    n = rep.n_coupled
    assert rep.zero_columns == tuple(range(n))
    assert abs(rep.det) <= rep.ztol
    assert rep.structure_flags == {"coupled_columns_zero": True,
                                   "tail_single_entry": True}
    assert 11.0 < np.max(np.abs(rep.J)) < 11.2
    assert rep.noise_floor < 1e-8
    assert np.linalg.matrix_rank(rep.J, tol=rep.ztol) == len(rep.labels) - n


def test_jacobian_nondegenerate_when_coupled(desk):
    pt = make_point(desk, (0.4, 0.4, 0.3, 0.25))
    rep = jac.jacobian(pt, grid=32)
    assert rep.zero_columns == ()
    assert abs(rep.det) > 1e-20
    assert rep.condition_number < 1e6
    assert not rep.structure_flags["coupled_columns_zero"]

    # the determinant is alternating in the column enumeration
    rng = np.random.default_rng(11)
    for _ in range(3):
        perm = rng.permutation(len(rep.labels))
        sign = np.linalg.det(np.eye(len(perm))[:, perm])
        got = np.linalg.det(rep.J[:, perm])
        assert got == pytest.approx(sign * rep.det, rel=1e-10)


def test_jacobian_noise_guard(desk, monkeypatch):
    free = make_point(desk, (0.0, 0.0, 0.0, 0.0))
    raw = inv._phi_value

    def noisy(point, j, m, grid):
        val = raw(point, j, m, grid)
        if grid == 128:     # corrupt only the doubled-grid evaluations
            wobble = sum(point.alpha_tilde(l, k)
                         for (l, k) in point.small_gap_set)
            val += 1e-2 * np.sin(37.0 * wobble)
        return val

    monkeypatch.setattr(inv, "_phi_value", noisy)
    with pytest.raises(QuadratureNoiseDominates):
        jac.jacobian(free, grid=64)


# -- structure at the decoupled point ---------------------------------------

def test_structure_at_decoupled_point(balanced):
    sr = jac.structure_at_eps0(balanced, grid=128)
    assert sr.coupled_residual < 1e-6
    assert sr.off_pattern < 1e-5
    assert sr.closed_form_residual < 1e-6
    assert sr.i3_block_max > 0.1        # the direction-3 block is real
    assert_allclose(sr.mixed_diagonal,
                    [8.60513e-02, 2.27891e-02, 4.18129e-01, -1.64948e-02],
                    rtol=1e-3)
    # tail columns match the product closed form entry by entry
    assert_allclose(sr.single_entries, sr.closed_form, rtol=1e-5)

    # the coupled diagonal is the same mixed derivative the dual-route
    # evaluator produces
    r = inv.mixed_derivative(balanced, 1, 2, grid=128)
    assert sr.mixed_diagonal[0] == pytest.approx(r.finite_difference,
                                                 rel=1e-9)


def test_structure_guards(desk, balanced):
    with pytest.raises(ValueError):
        jac.structure_at_eps0(make_point(desk, (0.5, 0.5, 0.2, 0.0)))
    with pytest.raises(PatternViolation):
        jac.structure_at_eps0(balanced, grid=128, coupled_tol=1e-13)


# -- reduced determinant ----------------------------------------------------

def test_reduced_determinant_triangular_factorization(balanced):
    rd = jac.reduced_determinant(balanced, grid=128)
    assert rd.rel_gap < 1e-3            # triangularity consequence
    assert rd.rel_gap < 1e-6            # observed much tighter
    assert rd.direct == pytest.approx(4.0737e-14, rel=1e-3)
    sr = jac.structure_at_eps0(balanced, grid=128)
    assert_allclose(rd.diagonal[:4], sr.mixed_diagonal, rtol=1e-9)
    assert_allclose(rd.diagonal[4:], sr.single_entries, rtol=1e-9)


def test_reduced_determinant_gamma3_scaling(desk, balanced):
    rd = jac.reduced_determinant(balanced, grid=128)
    doubled = tuple(tuple(2 * g for g in row) if j == 2 else row
                    for j, row in enumerate(GAP_TABLE))
    rd2 = jac.reduced_determinant(
        make_point(desk, (6 / 7, 6 / 6.5, 0.0, 0.0), gaps=doubled),
        grid=128)
    # each coupled diagonal entry is linear in the direction-3 gaps
    assert_allclose(rd2.diagonal[:4] / rd.diagonal[:4], 2.0, rtol=0.05)
    # the remaining entries ignore them
    assert_allclose(rd2.diagonal[4:], rd.diagonal[4:], rtol=1e-6)
    assert rd2.direct == pytest.approx(16.0 * rd.direct, rel=1e-3)


def test_reduced_determinant_guard(desk):
    with pytest.raises(ValueError):
        jac.reduced_determinant(make_point(desk, (0.5, 0.5, 0.0, 0.1)))


# -- rigidity scan ----------------------------------------------------------

def test_rigidity_scan_certification(desk, tmp_path):
    template = make_point(desk, (0.0, 0.0, 0.0, 0.0))
    res = jac.rigidity_scan(
        template, *EPS_SELECTED,
        eps3_values=[0.15], eps4_values=[0.1],
        alpha_samples={"generic": ANGLES, "degenerate": DEGENERATE},
        grid=64)
    by_id = {c.alpha_id: c for c in res.cells}
    generic, degenerate = by_id["generic"], by_id["degenerate"]
    assert generic.certified
    assert generic.abs_det > 100 * generic.noise_floor
    assert not degenerate.certified
    assert res.zero_set == ((0.15, 0.1, "degenerate"),)
    assert res.certified_fraction == pytest.approx(0.5)

    path = tmp_path / "scan.csv"
    res.to_csv(path, header_comment="config=deadbeef")
    text = path.read_text().splitlines()
    assert text[0] == "# config=deadbeef"
    rows = np.genfromtxt(path, delimiter=",", names=True, dtype=None,
                         encoding=None, skip_header=1)
    assert rows.shape == (2,)
    assert rows["certified_flag"].tolist() == [1, 0]


def test_rigidity_scan_boundary_rows(desk):
    template = make_point(desk, (0.0, 0.0, 0.0, 0.0))
    res = jac.rigidity_scan(
        template, *EPS_SELECTED,
        eps3_values=[0.0, 0.05], eps4_values=[0.0],
        alpha_samples={"generic": ANGLES},
        grid=64)
    cells = {(c.eps3, c.eps4): c for c in res.cells}
    # the fully decoupled plane is rank deficient
    assert not cells[(0.0, 0.0)].certified
    assert cells[(0.0, 0.0)].abs_det <= cells[(0.05, 0.0)].abs_det
    # a small third coupling alone already gives a nonzero determinant,
    # though not with certification margin at this resolution
    visible = cells[(0.05, 0.0)]
    assert visible.abs_det > visible.noise_floor > 0
