"""Executable acceptance criteria for the whole package.

Twelve numbered, independently runnable checks: the 1D spectral core
(1-7), the decoupled-point structure of the 2D invariant map (8-10), the
perturbative closed forms (11), and the rigidity certification scan (12).
Each check returns a :class:`CriterionResult`; :func:`run_criteria` drives
any subset and emits one pass/fail line per criterion.  This is what
``hillflow selftest`` calls, and what ``tests/test_acceptance.py``
parametrizes over.

Potentials and their spectra are cached per process, and criterion 12
asserts that the cumulative runtime of everything executed so far stays
inside the half-hour budget.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .hill1d import (Potential1D, compute_spectrum, dirichlet_spectrum,
                     discriminant_batch, discriminant_product_ratio,
                     galerkin_oracle)
from .weierstrass import (WpParams, band_edges, gap_from_tau,
                          one_gap_potential, tau_from_gap)
from .finitegap import (TorusPoint, initial_torus_point, mu_flow,
                        reconstruct_potential, eigenfunction_sq,
                        eigenfunction_sq_ds)
from .lattice import build_lattice, fundamental_directions
from .potential2d import ManifoldPoint
from . import invariants as _inv
from . import jacobian as _jac


# ---------------------------------------------------------------------------
# shared fixtures (desk-scale setup)
# ---------------------------------------------------------------------------

_GAP_TABLE = ((7.0, 0.8, 0.35), (6.5, 0.9, 0.3), (1.2, 0.8, 0.5),
              (0.9, 0.6, 0.3))
_ANGLES_A = ((np.pi / 2, 0.7, 1.3), (np.pi / 2, 0.4, 2.1),
             (0.9, 1.7, 0.45), (2.3, 0.8, 1.15))
_ANGLES_B = ((1.2, 0.5, 2.0), (0.3, 1.9, 0.8), (2.6, 0.7, 1.35),
             (0.55, 2.2, 1.9))
_ANGLES_DEGENERATE = ((np.pi / 2, np.pi / 2, np.pi / 2),) * 4
_EPS_BALANCED = (6.0 / 7.0, 6.0 / 6.5, 0.0, 0.0)
#: output of select_epsilons at beta = 0.3 (criterion 12 re-derives it)
_EPS_SELECTED = (3.080070288241024e-05, 0.9)

_N_DENSE = 256
_S_DENSE = np.arange(_N_DENSE) / _N_DENSE

_DESK = None
_BATTERY = {}
_SPECTRA = {}
_DURATIONS = {}


def _desk_point(eps, angles=_ANGLES_A):
    global _DESK
    if _DESK is None:
        lat = build_lattice((1.0, 0.0), (0.35, 1.12))
        _DESK = (lat, fundamental_directions(lat, 1.6))
    lat, dirs = _DESK
    alpha = tuple(TorusPoint.from_alpha_tilde(a) for a in angles)
    return ManifoldPoint(lat, dirs, tuple(float(e) for e in eps),
                         ((1, 2, 3),) * 4, _GAP_TABLE, alpha)


def _potential(name):
    if name not in _BATTERY:
        if name == "zero":
            q = Potential1D.zero()
        elif name == "cos":
            q = Potential1D(np.array([2.0]), np.zeros(1))
        elif name == "wp1":
            q = one_gap_potential(WpParams(1.0))
        elif name == "wp2":
            q = one_gap_potential(WpParams(2.0))
        elif name == "lame2":
            base = one_gap_potential(WpParams(1.0))
            q = Potential1D(3.0 * np.asarray(base.cos_coeffs),
                            np.zeros(len(base.cos_coeffs))).translate(0.21)
        else:  # pragma: no cover - internal battery only
            raise KeyError(name)
        _BATTERY[name] = q
    return _BATTERY[name]


def _spectrum(name, m_max=10):
    key = (name, m_max)
    if key not in _SPECTRA:
        _SPECTRA[key] = compute_spectrum(_potential(name), m_max)
    return _SPECTRA[key]


def _fft_deriv(values, order=1):
    n = len(values)
    k = 2j * np.pi * np.fft.rfftfreq(n, d=1.0 / n)
    return np.fft.irfft(np.fft.rfft(values) * k ** order, n)


# ---------------------------------------------------------------------------
# result plumbing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float

    @property
    def line(self):
        return "[%s] criterion %2d, %s: %s (%.1f s)" % (
            "PASS" if self.passed else "FAIL", self.number, self.name,
            self.detail, self.seconds)


def _finish(number, name, t0, fails, detail):
    dt = time.perf_counter() - t0
    _DURATIONS[number] = dt
    if fails:
        return CriterionResult(number, name, False, "; ".join(fails), dt)
    return CriterionResult(number, name, True, detail, dt)


# ---------------------------------------------------------------------------
# criteria 1-7: 1D spectral core
# ---------------------------------------------------------------------------

def criterion_1():
    """Zero potential: lambda_0 = 0 and lambda_m^+- = mu_m = (m pi)^2."""
    t0 = time.perf_counter()
    spec = compute_spectrum(Potential1D.zero(), 10)
    _SPECTRA[("zero", 10)] = spec
    dt = time.perf_counter() - t0
    target = (np.arange(1, 11) * np.pi) ** 2
    rel = max(
        float(np.max(np.abs(spec.gap_edges - target[:, None]) / target[:, None])),
        float(np.max(np.abs(spec.dirichlet - target) / target)))
    lam0 = abs(spec.lambda0)
    fails = []
    if rel >= 1e-8:
        fails.append("edge/Dirichlet rel err %.2e >= 1e-8" % rel)
    if lam0 >= 1e-8:
        fails.append("|lambda_0| %.2e >= 1e-8" % lam0)
    if dt >= 5.0:
        fails.append("runtime %.1f s >= 5 s" % dt)
    return _finish(1, "free spectrum", t0, fails,
                   "max rel err %.1e, |lambda_0| %.1e, %.1f s"
                   % (rel, lam0, dt))


def criterion_2():
    """Strict band interlacing and Dirichlet membership, whole battery."""
    t0 = time.perf_counter()
    violations = []
    for name in ("zero", "cos", "wp1", "wp2", "lame2"):
        spec = _spectrum(name)
        e, mu = spec.gap_edges, spec.dirichlet
        if not spec.lambda0 < e[0, 0]:
            violations.append("%s: lambda_0 >= lambda_1^-" % name)
        if not np.all(e[:, 0] <= e[:, 1]):
            violations.append("%s: crossed gap edges" % name)
        if not np.all(e[:-1, 1] < e[1:, 0]):
            violations.append("%s: bands out of order" % name)
        if not (np.all(mu >= e[:, 0]) and np.all(mu <= e[:, 1])):
            violations.append("%s: Dirichlet value outside its gap" % name)
    return _finish(2, "interlacing", t0, violations,
                   "0 violations over 5 potentials, m <= 10")


def criterion_3():
    """Shooting vs Galerkin (K = 32) eigenvalues, rel. 1e-6 for m <= 10."""
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("zero", "cos", "wp1", "wp2"):
        q, spec = _potential(name), _spectrum(name)
        shoot_per, shoot_ap = [spec.lambda0], []
        for m in range(1, 11):
            side = shoot_ap if m % 2 == 1 else shoot_per
            side.extend(spec.gap_edges[m - 1])
        for mine, oracle in (
                (np.sort(shoot_per), galerkin_oracle(q, 32, "periodic")),
                (np.sort(shoot_ap), galerkin_oracle(q, 32, "antiperiodic")),
                (spec.dirichlet[:10], galerkin_oracle(q, 32, "dirichlet"))):
            rel = np.abs(mine - oracle[: len(mine)]) \
                / np.maximum(1.0, np.abs(mine))
            worst = max(worst, float(np.max(rel)))
    fails = [] if worst < 1e-6 else \
        ["max rel deviation %.2e >= 1e-6" % worst]
    return _finish(3, "shooting vs Galerkin", t0, fails,
                   "4 potentials, 3 sectors, max rel dev %.1e" % worst)


def criterion_4():
    """One-gap certification of the tau = 1 potential."""
    t0 = time.perf_counter()
    spec = _spectrum("wp1")
    fails = []
    high = float(np.max(spec.gap_lengths[1:8]))
    if high >= 1e-6:
        fails.append("gamma_m %.2e >= 1e-6 for some 2 <= m <= 8" % high)
    if spec.open_set != [1]:
        fails.append("open set %r != [1]" % spec.open_set)
    lam0, lo, hi = band_edges(WpParams(1.0))
    edge_dev = max(abs(spec.lambda0 - lam0),
                   abs(spec.gap_edges[0, 0] - lo),
                   abs(spec.gap_edges[0, 1] - hi))
    if edge_dev >= 1e-6:
        fails.append("edge deviation %.2e >= 1e-6" % edge_dev)
    rt = max(abs(tau_from_gap(gap_from_tau(t)) - t) / t
             for t in (0.5, 1.0, 2.0, 4.0, 8.0))
    if rt >= 1e-8:
        fails.append("tau round-trip rel err %.2e >= 1e-8" % rt)
    return _finish(4, "one-gap certification", t0, fails,
                   "edge dev %.1e, tau round-trip %.1e" % (edge_dev, rt))


def criterion_5():
    """Product formula vs shooting discriminant, 50 samples, rel. 1e-4.

    The tail depth must outrun the second-order edge shifts of the
    closed gaps (which scale with the square of the potential
    amplitude); 24 retained factors keep the truncation bias below
    3e-5 across [lambda_0, lambda_10^+] for both test potentials.
    """
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("wp1", "lame2"):
        q, spec = _potential(name), _spectrum(name, 24)
        lo, hi = spec.lambda0, spec.gap_edges[9, 1]
        lams = lo + (np.arange(50) + 0.5) * (hi - lo) / 50.0
        direct = discriminant_batch(q, lams)[0] ** 2 - 4.0
        prod = np.array([discriminant_product_ratio(spec, lam, 24)
                         for lam in lams])
        rel = np.abs(prod - direct) / np.abs(direct)
        worst = max(worst, float(np.max(rel)))
    fails = [] if worst < 1e-4 else ["max rel dev %.2e >= 1e-4" % worst]
    return _finish(5, "discriminant product", t0, fails,
                   "one- and two-gap, 50 samples each, max rel dev %.1e"
                   % worst)


def criterion_6():
    """Isospectral flow: 16 translates, reconstruction and Dirichlet."""
    t0 = time.perf_counter()
    s16 = np.arange(16) / 16.0
    fails = []
    worst_mu, worst_spec = 0.0, 0.0
    for name, q in (("wp1", _potential("wp1").translate(0.13)),
                    ("lame2", _potential("lame2"))):
        spec = compute_spectrum(q, 6)
        start = initial_torus_point(q, spec)
        idx = np.asarray(spec.open_set, int) - 1
        m_top = max(spec.open_set)

        fr = mu_flow(spec, start, s16)
        for k, s in enumerate(s16):
            mu_ref = dirichlet_spectrum(q.translate(s), m_top)[idx]
            worst_mu = max(worst_mu,
                           float(np.max(np.abs(fr.mu[k] - mu_ref))))

        dense = mu_flow(spec, start, _S_DENSE)
        rec = reconstruct_potential(spec, dense.mu)
        off = float(np.mean(rec))
        spec_rec = compute_spectrum(Potential1D.from_samples(rec), 6)
        worst_spec = max(
            worst_spec, abs(spec_rec.lambda0 + off - spec.lambda0),
            float(np.max(np.abs(spec_rec.gap_edges + off - spec.gap_edges))))
    if worst_mu >= 1e-6:
        fails.append("flowed mu vs translated Dirichlet %.2e >= 1e-6"
                     % worst_mu)
    if worst_spec >= 1e-6:
        fails.append("reconstruction spectrum drift %.2e >= 1e-6"
                     % worst_spec)
    return _finish(6, "isospectral flow", t0, fails,
                   "mu drift %.1e, spectrum drift %.1e"
                   % (worst_mu, worst_spec))


def criterion_7():
    """Squared eigenfunctions: ODE residual, normalization, s-derivative."""
    t0 = time.perf_counter()
    h = 1e-4
    worst_ode, worst_norm, worst_ds = 0.0, 0.0, 0.0
    for q in (_potential("wp1").translate(0.13),
              _potential("wp2").translate(0.13),
              _potential("lame2")):
        spec = compute_spectrum(q, 6)
        start = initial_torus_point(q, spec)
        fr = mu_flow(spec, start, _S_DENSE)
        qs, qps = q(_S_DENSE), q.derivative()(_S_DENSE)

        stp = mu_flow(spec, start, np.array([0.0, h]))
        frp = mu_flow(spec, stp.alpha_tilde[1], _S_DENSE + h)
        stm = mu_flow(spec, start, np.array([0.0, 1.0 - h]))
        frm = mu_flow(spec, stm.alpha_tilde[1], (1.0 - h) + _S_DENSE)

        for m in spec.open_set:
            E = eigenfunction_sq(spec, m, fr.mu)
            worst_norm = max(worst_norm, abs(float(np.mean(E)) - 1.0))
            lam = spec.gap_edges[m - 1, 1]
            drive = 4.0 * (qs - lam) * _fft_deriv(E, 1)
            resid = _fft_deriv(E, 3) - drive - 2.0 * qps * E
            scale = float(np.max(np.abs(drive))) + 1.0
            worst_ode = max(worst_ode, float(np.max(np.abs(resid))) / scale)

            dE = eigenfunction_sq_ds(spec, m, fr.mu, fr.dmu_ds)
            fd = (eigenfunction_sq(spec, m, frp.mu)
                  - eigenfunction_sq(spec, m, frm.mu)) / (2.0 * h)
            worst_ds = max(worst_ds, float(np.max(np.abs(dE - fd)))
                           / max(1.0, float(np.max(np.abs(dE)))))
    fails = []
    if worst_ode >= 1e-5:
        fails.append("ODE residual %.2e >= 1e-5" % worst_ode)
    if worst_norm >= 1e-8:
        fails.append("normalization error %.2e >= 1e-8" % worst_norm)
    if worst_ds >= 1e-5:
        fails.append("s-derivative FD gap %.2e >= 1e-5" % worst_ds)
    return _finish(7, "squared eigenfunctions", t0, fails,
                   "ODE %.1e, norm %.1e, d/ds %.1e"
                   % (worst_ode, worst_norm, worst_ds))


# ---------------------------------------------------------------------------
# criteria 8-11: decoupled-point structure and closed forms
# ---------------------------------------------------------------------------

def criterion_8():
    """Phase-sensitivity matrix at the decoupled point is the identity."""
    t0 = time.perf_counter()
    pt = _desk_point((*_EPS_SELECTED, 0.0, 0.0))
    mat = _inv.phase_sensitivity(pt)
    dev = float(np.max(np.abs(mat - np.eye(mat.shape[0]))))
    fails = [] if dev < 1e-7 else ["deviation %.2e >= 1e-7" % dev]
    return _finish(8, "phase sensitivity identity", t0, fails,
                   "max |S - I| = %.1e" % dev)


def criterion_9():
    """Closed-form invariants for the weak directions at the decoupled
    point: cosine fit residual < 1e-6, amplitude match rel. 1e-4, < 60 s."""
    t0 = time.perf_counter()
    pt = _desk_point(_EPS_BALANCED)
    worst_res, worst_amp = 0.0, 0.0
    for (j, m) in pt.small_gap_set:
        if j < 3:
            continue
        fit = _inv.phi_limit_closed_form(pt, j, m, grid=256)
        worst_res = max(worst_res, fit.residual)
        worst_amp = max(worst_amp,
                        abs(fit.fitted_amplitude - abs(fit.coefficient))
                        / abs(fit.coefficient))
    dt = time.perf_counter() - t0
    fails = []
    if worst_res >= 1e-6:
        fails.append("fit residual %.2e >= 1e-6" % worst_res)
    if worst_amp >= 1e-4:
        fails.append("amplitude rel dev %.2e >= 1e-4" % worst_amp)
    if dt >= 60.0:
        fails.append("runtime %.1f s >= 60 s" % dt)
    return _finish(9, "closed-form invariants", t0, fails,
                   "6 fits, residual %.1e, amplitude dev %.1e, %.1f s"
                   % (worst_res, worst_amp, dt))


def criterion_10():
    """Block structure at the decoupled point: dead coupled columns,
    bounded off-pattern mass, rank N - 2 - n."""
    t0 = time.perf_counter()
    pt = _desk_point(_EPS_BALANCED)
    rep = _jac.jacobian(pt, grid=128)
    n = rep.n_coupled
    j_max = float(np.max(np.abs(rep.J)))
    coupled = float(np.max(np.max(np.abs(rep.J[:, :n]), axis=0)))
    rank = int(np.linalg.matrix_rank(rep.J, tol=rep.ztol))
    want_rank = pt.total_gaps - 2 - n
    st = _jac.structure_at_eps0(pt, grid=128)
    fails = []
    if coupled >= 1e-6 * j_max:
        fails.append("coupled column norm %.2e >= 1e-6 * %.2e"
                     % (coupled, j_max))
    if st.off_pattern >= 1e-5:
        fails.append("off-pattern mass %.2e >= 1e-5" % st.off_pattern)
    if rank != want_rank:
        fails.append("rank %d != %d" % (rank, want_rank))
    return _finish(10, "decoupled Jacobian structure", t0, fails,
                   "coupled/|J| %.1e, off-pattern %.1e, rank %d"
                   % (coupled / j_max, st.off_pattern, rank))


def criterion_11():
    """Perturbative closed forms: mixed derivative and b-coefficients."""
    t0 = time.perf_counter()
    pt = _desk_point((0.05, 0.08, 0.0, 0.0))
    fails = []

    worst_mixed = 0.0
    for m in (2, 3):
        r = _inv.mixed_derivative(pt, 1, m, grid=128)
        worst_mixed = max(worst_mixed, abs(r.normalized - r.reference))
    if worst_mixed >= 10 * pt.eps[0]:
        fails.append("mixed derivative dev %.2e >= 10 eps_1" % worst_mixed)

    # m = 1 is the open background gap of direction 2, outside the
    # small-gap set; the diagonal identity targets the closed rows.
    pt_b = _desk_point((0.0, 0.08, 0.0, 0.0))
    worst_b = 0.0
    for m in (2, 3):
        want = np.sin(2 * pt_b.alpha_tilde(3, m) - 2 * pt_b.alpha_tilde(2, m))
        worst_b = max(worst_b,
                      abs(_inv.b_coeff(pt_b, 2, m, m, grid=128) - want))
    if worst_b >= 10 * pt_b.eps[1]:
        fails.append("b diagonal dev %.2e >= 10 eps_2" % worst_b)

    eps_probe = np.array([0.02, 0.04, 0.08])
    worst_slope = 0.0
    for (m, n) in ((2, 3), (3, 2), (2, 1), (3, 1), (2, 2)):
        vals = []
        for e2 in eps_probe:
            pe = _desk_point((0.0, float(e2), 0.0, 0.0))
            vals.append(abs(_inv.b_coeff(pe, 2, m, n, grid=128)))
        slope = float(np.polyfit(np.log(eps_probe), np.log(vals), 1)[0])
        dev = abs(slope - abs(m - n))
        worst_slope = max(worst_slope, dev)
        if dev >= 0.3:
            fails.append("b_(2,%d,%d) slope %.2f misses |m-n| = %d"
                         % (m, n, slope, abs(m - n)))
    return _finish(11, "perturbative closed forms", t0, fails,
                   "mixed dev %.1e, b dev %.1e, worst slope gap %.2f"
                   % (worst_mixed, worst_b, worst_slope))


# ---------------------------------------------------------------------------
# criterion 12: rigidity scan
# ---------------------------------------------------------------------------

def criterion_12():
    """Certified rigidity on generic cells, dead degenerate cells, and the
    cumulative runtime budget."""
    t0 = time.perf_counter()
    template = _desk_point(_EPS_BALANCED)
    fails = []

    sel = _inv.select_epsilons(0.3, template, grid=128)
    bad = [name for name, val in sel.slacks if not val > 0]
    if bad:
        fails.append("non-positive slacks: %s" % ", ".join(bad))

    def scan(eps3, eps4, samples):
        return _jac.rigidity_scan(template, sel.eps1, sel.eps2,
                                  eps3_values=eps3, eps4_values=eps4,
                                  alpha_samples=samples, grid=64)

    pool = scan((0.05, 0.15, 0.3), (0.1, 0.2), {"A": _ANGLES_A}).cells \
        + scan((0.15,), (0.1,), {"B": _ANGLES_B}).cells
    frac = float(np.mean([c.certified for c in pool]))
    if frac < 0.9:
        fails.append("certified fraction %.2f < 0.9" % frac)

    degen = scan((0.15, 0.3), (0.1,), {"deg": _ANGLES_DEGENERATE}).cells
    if any(c.certified for c in degen):
        fails.append("degenerate angle cell certified")

    zero_plane = scan((0.0,), (0.0,), {"A": _ANGLES_A}).cells
    if any(c.certified for c in zero_plane) or \
            any(c.abs_det != 0.0 for c in zero_plane):
        fails.append("zero-coupling cell not identically zero")

    dt = time.perf_counter() - t0
    total = sum(_DURATIONS.values()) + dt
    if total >= 1800.0:
        fails.append("cumulative runtime %.0f s >= 1800 s" % total)
    return _finish(12, "rigidity scan", t0, fails,
                   "eps = (%.3e, %.2f), %d/%d generic cells certified, "
                   "suite %.0f s" % (sel.eps1, sel.eps2,
                                     sum(c.certified for c in pool),
                                     len(pool), total))


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

_CRITERIA = {
    1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4,
    5: criterion_5, 6: criterion_6, 7: criterion_7, 8: criterion_8,
    9: criterion_9, 10: criterion_10, 11: criterion_11, 12: criterion_12,
}


def run_criteria(numbers=None, report=None):
    """Run the selected acceptance criteria (all twelve by default).

    ``report`` is called with one formatted line per finished criterion.
    A criterion that raises is reported as failed; the rest still run.
    """
    if numbers is None:
        numbers = sorted(_CRITERIA)
    numbers = [int(n) for n in numbers]
    unknown = [n for n in numbers if n not in _CRITERIA]
    if unknown:
        raise ConfigError("unknown criteria %r (valid: 1-12)" % unknown)
    results = []
    for n in numbers:
        t0 = time.perf_counter()
        try:
            res = _CRITERIA[n]()
        except Exception as exc:  # pragma: no cover - defensive
            res = CriterionResult(n, _CRITERIA[n].__doc__.split("\n")[0],
                                  False, "error: %r" % exc,
                                  time.perf_counter() - t0)
        results.append(res)
        if report is not None:
            report(res.line)
    return results
