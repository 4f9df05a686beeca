"""Hill operators -d²/ds² + q(s) with unit period.

Monodromy matrices, the discriminant, periodic / anti-periodic band edges,
the Dirichlet spectrum, interior critical points of the discriminant, a
product-formula evaluation of Δ²−4, and an independent Galerkin oracle.

Conventions
-----------
Potentials are finite real trigonometric series with zero mean.  Spectral
quantities are indexed by the gap number m = 1, 2, ...; m = 0 refers to the
ground periodic eigenvalue λ₀.  The discriminant Δ(λ) is the trace of the
unit-period monodromy matrix; the m-th gap is the interval where
(−1)^m Δ(λ) ≥ 2, and its edges are roots of Δ = ±2 with sign (−1)^m.

Open vs. closed gaps are decided by the dip |Δ(λ̇_m)| − 2 at the interior
critical point λ̇_m.  In double precision the shooting method cannot certify
a gap length much below ~1e−4 (the dip scales like γ²/λ), so gaps whose dip
falls below ``DIP_FLOOR`` are reported as exactly closed with γ = 0.  This is
the honest reading of the data: a dip at the integrator noise level carries
no information about a tiny positive gap length.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp
from scipy.linalg import eigh

from .errors import (
    IntegrationFailure,
    InterlacingViolation,
    NoCriticalPoint,
    PoleAtLambda,
    RootBracketFailure,
)

#: gap lengths below this are treated as closed when forming the open set I
GAP_TOL = 1e-8

#: dip |Δ(λ̇)|−2 below this is indistinguishable from integrator noise
DIP_FLOOR = 5e-12

#: tolerance on |det(monodromy) − 1|
WRONSKIAN_TOL = 1e-9

_RTOL = 1e-13
_ATOL = 1e-13


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

@dataclass
class Potential1D:
    """Real trigonometric polynomial q(s) = Σ_{n≥1} a_n cos 2πns + b_n sin 2πns.

    ``cos_coeffs[n-1]`` and ``sin_coeffs[n-1]`` hold the coefficients of
    frequency n.  The mean is zero by construction (there is no n = 0 slot).
    """

    cos_coeffs: np.ndarray
    sin_coeffs: np.ndarray

    def __post_init__(self):
        a = np.atleast_1d(np.asarray(self.cos_coeffs, dtype=float))
        b = np.atleast_1d(np.asarray(self.sin_coeffs, dtype=float))
        n = max(a.size, b.size, 1)
        self.cos_coeffs = np.zeros(n)
        self.sin_coeffs = np.zeros(n)
        self.cos_coeffs[: a.size] = a
        self.sin_coeffs[: b.size] = b

    # -- evaluation ---------------------------------------------------------

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        ph = 2.0 * np.pi * np.multiply.outer(s, np.arange(1, self.cos_coeffs.size + 1))
        return np.cos(ph) @ self.cos_coeffs + np.sin(ph) @ self.sin_coeffs

    value = __call__

    # -- simple properties --------------------------------------------------

    @property
    def max_frequency(self) -> int:
        nz = np.nonzero((self.cos_coeffs != 0) | (self.sin_coeffs != 0))[0]
        return 0 if nz.size == 0 else int(nz[-1]) + 1

    def coeff_bound(self) -> float:
        """Σ |a_n| + |b_n|, an upper bound for sup |q|."""
        return float(np.sum(np.abs(self.cos_coeffs)) + np.sum(np.abs(self.sin_coeffs)))

    # -- algebra ------------------------------------------------------------

    def translate(self, s0: float) -> "Potential1D":
        """The translated potential q(· + s0)."""
        n = np.arange(1, self.cos_coeffs.size + 1)
        c, s = np.cos(2 * np.pi * n * s0), np.sin(2 * np.pi * n * s0)
        return Potential1D(self.cos_coeffs * c + self.sin_coeffs * s,
                           -self.cos_coeffs * s + self.sin_coeffs * c)

    def derivative(self) -> "Potential1D":
        w = 2 * np.pi * np.arange(1, self.cos_coeffs.size + 1)
        return Potential1D(w * self.sin_coeffs, -w * self.cos_coeffs)

    def __add__(self, other):
        if not isinstance(other, Potential1D):
            return NotImplemented
        n = max(self.cos_coeffs.size, other.cos_coeffs.size)

        def pad(a):
            return np.pad(a, (0, n - a.size))

        return Potential1D(pad(self.cos_coeffs) + pad(other.cos_coeffs),
                           pad(self.sin_coeffs) + pad(other.sin_coeffs))

    @classmethod
    def zero(cls) -> "Potential1D":
        return cls(np.zeros(1), np.zeros(1))

    @classmethod
    def from_samples(cls, values, n_max: int | None = None) -> "Potential1D":
        """Recover coefficients from equispaced samples on [0, 1).

        The sample mean is discarded (the representation is mean-zero).
        Frequencies at or above the Nyquist limit are dropped.
        """
        values = np.asarray(values, dtype=float)
        g = values.size
        c = np.fft.rfft(values) / g
        n_hi = (g - 1) // 2
        if n_max is not None:
            n_hi = min(n_hi, n_max)
        if n_hi < 1:
            return cls.zero()
        return cls(2.0 * c[1 : n_hi + 1].real, -2.0 * c[1 : n_hi + 1].imag)


# ---------------------------------------------------------------------------
# spectra container
# ---------------------------------------------------------------------------

@dataclass
class Spectrum1D:
    """Band/gap data of a Hill operator up to gap number m_max.

    ``gap_edges[m-1] = (λ_m^−, λ_m^+)``; closed gaps carry coincident edges
    (both equal to the critical point) and gamma exactly 0.  ``critical``
    holds λ̇_m, the interior zero of ∂Δ/∂λ, for every m.  ``dirichlet`` is
    None until the Dirichlet pass has run.
    """

    lambda0: float
    gap_edges: np.ndarray
    critical: np.ndarray
    closed: np.ndarray
    dirichlet: np.ndarray | None = None
    gap_tol: float = GAP_TOL

    @property
    def m_max(self) -> int:
        return self.gap_edges.shape[0]

    @property
    def gap_lengths(self) -> np.ndarray:
        g = self.gap_edges[:, 1] - self.gap_edges[:, 0]
        g[self.closed] = 0.0
        return g

    @property
    def open_set(self) -> list:
        """Gap numbers m (1-based) with γ_m > gap_tol."""
        return [int(m) for m in np.nonzero(self.gap_lengths > self.gap_tol)[0] + 1]

    def with_dirichlet(self, mu: np.ndarray) -> "Spectrum1D":
        return replace(self, dirichlet=np.asarray(mu, dtype=float))

    def to_csv(self, path, footer_comment: str = "") -> None:
        """Write rows m, lambda_minus, lambda_plus, mu, gamma, lambda_dot,
        open_flag.  Row m = 0 carries λ₀ in both edge columns.
        ``footer_comment`` becomes a trailing ``# ...`` line (used by the
        CLI to tag files with the config hash); plain readers skip it."""
        g = self.gap_lengths
        mu = self.dirichlet if self.dirichlet is not None else np.full(self.m_max, np.nan)
        rows = [(0, self.lambda0, self.lambda0, np.nan, 0.0, np.nan, 0)]
        for m in range(1, self.m_max + 1):
            rows.append((m, self.gap_edges[m - 1, 0], self.gap_edges[m - 1, 1],
                         mu[m - 1], g[m - 1], self.critical[m - 1],
                         int(g[m - 1] > self.gap_tol)))
        arr = np.array(rows, dtype=float)
        np.savetxt(path, arr, delimiter=",", comments="",
                   header="m,lambda_minus,lambda_plus,mu,gamma,lambda_dot,open_flag",
                   footer="# " + footer_comment if footer_comment else "",
                   fmt=["%d"] + ["%.17g"] * 6)


# ---------------------------------------------------------------------------
# monodromy engine
# ---------------------------------------------------------------------------

def monodromy_batch(q: Potential1D, lams, *, order: int = 0,
                    rtol: float = _RTOL, atol: float = _ATOL,
                    check_wronskian: bool = True):
    """Monodromy matrices (and λ-derivatives) for a batch of λ values.

    All λ are integrated jointly in a single adaptive solver call: the
    right-hand side is a handful of vectorized array operations, so the cost
    of a batch is close to the cost of a single λ.

    Parameters
    ----------
    order : 0 returns [M]; 1 returns [M, ∂M/∂λ]; 2 adds ∂²M/∂λ².
        Derivatives come from the variational equations, not differencing.

    Returns a list of arrays of shape (B, 2, 2) where
    ``M[i] = [[y₁(1), y₂(1)], [y₁′(1), y₂′(1)]]`` for λ = lams[i].
    """
    lams = np.ascontiguousarray(np.atleast_1d(lams), dtype=float)
    B = lams.size
    nblk = 4 * (order + 1)
    y0 = np.zeros((nblk, B))
    y0[0] = 1.0
    y0[3] = 1.0

    freqs = 2.0 * np.pi * np.arange(1, q.cos_coeffs.size + 1)
    a, b = q.cos_coeffs, q.sin_coeffs

    def rhs(s, y):
        ph = freqs * s
        qs = a @ np.cos(ph) + b @ np.sin(ph)
        Y = y.reshape(nblk, B)
        out = np.empty_like(Y)
        c = qs - lams
        out[0] = Y[1]
        out[1] = c * Y[0]
        out[2] = Y[3]
        out[3] = c * Y[2]
        if order >= 1:
            # w = ∂y/∂λ solves w″ = (q−λ)w − y
            out[4] = Y[5]
            out[5] = c * Y[4] - Y[0]
            out[6] = Y[7]
            out[7] = c * Y[6] - Y[2]
        if order >= 2:
            # p = ∂²y/∂λ² solves p″ = (q−λ)p − 2w
            out[8] = Y[9]
            out[9] = c * Y[8] - 2.0 * Y[4]
            out[10] = Y[11]
            out[11] = c * Y[10] - 2.0 * Y[6]
        return out.reshape(-1)

    sol = solve_ivp(rhs, (0.0, 1.0), y0.reshape(-1), method="DOP853",
                    rtol=rtol, atol=atol, t_eval=[1.0])
    if not sol.success:
        raise IntegrationFailure(f"monodromy integration failed: {sol.message}")
    yT = sol.y[:, -1].reshape(nblk, B)

    out = []
    for k in range(order + 1):
        blk = yT[4 * k : 4 * k + 4]
        M = np.empty((B, 2, 2))
        M[:, 0, 0] = blk[0]
        M[:, 1, 0] = blk[1]
        M[:, 0, 1] = blk[2]
        M[:, 1, 1] = blk[3]
        out.append(M)

    if check_wronskian:
        det = out[0][:, 0, 0] * out[0][:, 1, 1] - out[0][:, 0, 1] * out[0][:, 1, 0]
        worst = float(np.max(np.abs(det - 1.0)))
        if worst > WRONSKIAN_TOL:
            raise IntegrationFailure(
                f"Wronskian drift {worst:.2e} exceeds {WRONSKIAN_TOL:.0e}")
    return out


def monodromy(q: Potential1D, lam: float, **kw) -> np.ndarray:
    """The 2×2 unit-period fundamental matrix at a single λ."""
    return monodromy_batch(q, [lam], **kw)[0][0]


def discriminant_batch(q: Potential1D, lams, *, order: int = 0, **kw):
    """Δ(λ) = trace of the monodromy matrix (with optional λ-derivatives)."""
    Ms = monodromy_batch(q, lams, order=order, **kw)
    return [M[:, 0, 0] + M[:, 1, 1] for M in Ms]


def discriminant(q: Potential1D, lam: float, **kw) -> float:
    return float(discriminant_batch(q, [lam], **kw)[0][0])


# ---------------------------------------------------------------------------
# vectorized root refinement
# ---------------------------------------------------------------------------

def _refine_roots(eval_fp, lo, hi, sign_lo, *, tol=2e-12, maxit=100,
                  what="root"):
    """Safeguarded vectorized Newton on bracketed simple roots.

    ``eval_fp(x)`` returns (f(x), f′(x)) arrays for the whole batch;
    ``sign_lo`` is the sign of f at the left bracket end.  Newton steps are
    clipped to the bracket; when the bracket fails to halve between checks
    the midpoint is forced, so worst-case behaviour is bisection.
    """
    lo = np.asarray(lo, dtype=float).copy()
    hi = np.asarray(hi, dtype=float).copy()
    slo = np.asarray(sign_lo, dtype=float)
    x = 0.5 * (lo + hi)
    w_ref = hi - lo
    for it in range(maxit):
        f, fp = eval_fp(x)
        exact = f == 0.0
        low_side = (np.sign(f) == slo) & ~exact
        lo = np.where(exact | low_side, x, lo)
        hi = np.where(exact | ~low_side, x, hi)
        width = hi - lo
        scale = 1.0 + np.abs(x)
        if np.all(width <= tol * scale):
            return 0.5 * (lo + hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - f / fp
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        if it % 2 == 1:
            # force progress: any bracket that has not halved is bisected
            stalled = width > 0.5 * w_ref
            xn = np.where(stalled, 0.5 * (lo + hi), xn)
            w_ref = width.copy()
        x = xn
    raise RootBracketFailure(
        f"{what}: {int(np.sum(hi - lo > tol * (1 + np.abs(x))))} roots "
        f"unconverged after {maxit} iterations")


# ---------------------------------------------------------------------------
# the spectrum ladder
# ---------------------------------------------------------------------------

def _scan_grid(lam_min: float, m_max: int, level: int) -> np.ndarray:
    """λ nodes dense enough to separate consecutive zeros of Δ.

    Zeros of Δ are ~π apart in the variable x = √λ, so an x-grid with
    spacing π/8 (halved per retry level) cannot merge two sign changes.
    Below λ = 1 a linear grid covers the ground region.
    """
    step_lin = 0.25 / 2 ** level
    step_x = (np.pi / 8.0) / 2 ** level
    lin = np.arange(lam_min, 1.0 + step_lin, step_lin)
    xs = np.arange(1.0, (m_max + 1.25) * np.pi + step_x, step_x)
    return np.unique(np.concatenate([lin, xs * xs]))


def _disc_zeros(q: Potential1D, m_max: int, tol: float):
    """First m_max+1 zeros z_m of Δ (one per band) plus the scan floor."""
    lam_min = -q.coeff_bound() - 1.0
    for level in range(4):
        grid = _scan_grid(lam_min, m_max, level)
        d = discriminant_batch(q, grid)[0]
        s = np.where(np.sign(d) == 0, 1.0, np.sign(d))
        flips = np.nonzero(s[:-1] * s[1:] < 0)[0]
        if flips.size >= m_max + 1:
            flips = flips[: m_max + 1]
            break
    else:
        raise RootBracketFailure(
            f"found only {flips.size} discriminant zeros below "
            f"λ = {grid[-1]:.3g}; expected {m_max + 1}")

    def eval_disc(x):
        d, dp = discriminant_batch(q, x, order=1)
        return d, dp

    z = _refine_roots(eval_disc, grid[flips], grid[flips + 1], s[flips],
                      tol=tol, what="discriminant zero")
    return z, lam_min


def _ladder(q: Potential1D, m_max: int, tol: float, *,
            want_edges: bool = True, want_dirichlet: bool = True):
    """Single pass computing the full band/gap/Dirichlet data.

    Stages: (1) bracket and refine the zeros z_m of Δ, which separate the
    gaps; (2) refine the critical points λ̇_m as zeros of Δ′ in (z_m, z_{m+1})
    and classify each gap by the dip |Δ(λ̇)| − 2; (3) refine gap edges
    (Δ = ±2), the ground eigenvalue λ₀ (Δ = 2 below z_1), and the Dirichlet
    values μ_m (zeros of y₂(1, ·) in (z_m, z_{m+1})) in one joint batch.
    """
    if m_max < 1:
        raise ValueError("m_max must be >= 1")
    z, lam_min = _disc_zeros(q, m_max, tol)

    # -- critical points: Δ′ changes sign exactly once in (z_m, z_{m+1}) ----
    sgn = (-1.0) ** np.arange(1, m_max + 1)  # sign of Δ at λ̇_m and of Δ′ at z_m

    def eval_dprime(x):
        _, dp, dpp = discriminant_batch(q, x, order=2)
        return dp, dpp

    lamdot = _refine_roots(eval_dprime, z[:-1], z[1:], sgn,
                           tol=tol, what="critical point")
    d_at_dot = discriminant_batch(q, lamdot)[0]
    if np.any(np.sign(d_at_dot) != sgn):
        raise InterlacingViolation(
            "discriminant sign at an interior critical point is wrong")
    dip = np.abs(d_at_dot) - 2.0
    closed = dip <= DIP_FLOOR

    edges = np.column_stack([lamdot, lamdot]).astype(float)
    lambda0 = np.nan
    mu = None

    if want_edges or want_dirichlet:
        # -- joint refinement batch ----------------------------------------
        kinds, los, his, slos, sgns = [], [], [], [], []
        open_idx = np.nonzero(~closed)[0]
        if want_edges:
            for i in open_idx:  # left edges
                kinds.append(0), los.append(z[i]), his.append(lamdot[i])
                slos.append(-1.0), sgns.append(sgn[i])
            for i in open_idx:  # right edges
                kinds.append(0), los.append(lamdot[i]), his.append(z[i + 1])
                slos.append(1.0), sgns.append(sgn[i])
            # ground eigenvalue: Δ − 2 = 0 below z_1, positive at the floor
            kinds.append(1), los.append(lam_min), his.append(z[0])
            slos.append(1.0), sgns.append(1.0)
        if want_dirichlet:
            for i in range(m_max):
                kinds.append(2), los.append(z[i]), his.append(z[i + 1])
                slos.append((-1.0) ** i), sgns.append(1.0)
        kinds = np.array(kinds)
        sgns = np.array(sgns)

        def eval_joint(x):
            M, dM = monodromy_batch(q, x, order=1)
            tr, trp = M[:, 0, 0] + M[:, 1, 1], dM[:, 0, 0] + dM[:, 1, 1]
            f = np.where(kinds == 0, sgns * tr - 2.0,
                         np.where(kinds == 1, tr - 2.0, M[:, 0, 1]))
            fp = np.where(kinds <= 1, np.where(kinds == 0, sgns, 1.0) * trp,
                          dM[:, 0, 1])
            return f, fp

        roots = _refine_roots(eval_joint, np.array(los), np.array(his),
                              np.array(slos), tol=tol, what="edge/Dirichlet")
        pos = 0
        if want_edges:
            n_open = open_idx.size
            edges[open_idx, 0] = roots[pos : pos + n_open]
            edges[open_idx, 1] = roots[pos + n_open : pos + 2 * n_open]
            lambda0 = roots[pos + 2 * n_open]
            pos += 2 * n_open + 1
        if want_dirichlet:
            mu = roots[pos : pos + m_max]

    spec = Spectrum1D(lambda0=float(lambda0), gap_edges=edges,
                      critical=lamdot, closed=closed)
    if mu is not None:
        mu = _clamp_dirichlet(spec, mu) if want_edges else mu
        spec = spec.with_dirichlet(mu)
    if want_edges:
        _validate_interlacing(spec)
    return spec


def _clamp_dirichlet(spec: Spectrum1D, mu: np.ndarray) -> np.ndarray:
    """Clamp μ_m into [λ_m^−, λ_m^+] when within the resolution slack.

    Membership is a theorem, so only numerics can push μ outside.  For open
    gaps that is float rounding (~1e−12).  A gap classified closed may in
    truth be open with γ up to the dip resolution γ_res(λ) ≈ 4√(DIP_FLOOR·λ),
    and μ may sit anywhere inside it; the whole unresolvable cluster is
    collapsed onto the reported point.  Anything beyond these slacks is a
    genuine interlacing violation.
    """
    lo, hi = spec.gap_edges[:, 0], spec.gap_edges[:, 1]
    slack = 1e-8 * (1.0 + np.abs(hi))
    gamma_res = 4.0 * np.sqrt(DIP_FLOOR * np.maximum(1.0, np.abs(hi)))
    slack = np.where(spec.closed, slack + 0.5 * gamma_res, slack)
    out = np.clip(mu, lo, hi)
    if np.any((mu < lo - slack) | (mu > hi + slack)):
        m = int(np.argmax(np.maximum(lo - mu, mu - hi))) + 1
        raise InterlacingViolation(
            f"Dirichlet value μ_{m} = {mu[m-1]!r} lies outside gap "
            f"[{lo[m-1]!r}, {hi[m-1]!r}]")
    return out


def _validate_interlacing(spec: Spectrum1D) -> None:
    e = spec.gap_edges
    if not spec.lambda0 < e[0, 0]:
        raise InterlacingViolation("λ₀ is not below the first gap")
    if np.any(e[:, 1] < e[:, 0]):
        raise InterlacingViolation("a gap has negative length")
    if np.any(e[1:, 0] <= e[:-1, 1]):
        raise InterlacingViolation("consecutive gaps overlap (no band between)")
    lamdot = spec.critical
    if np.any((lamdot < e[:, 0] - 1e-9 * (1 + np.abs(lamdot))) |
              (lamdot > e[:, 1] + 1e-9 * (1 + np.abs(lamdot)))):
        raise InterlacingViolation("a critical point left its gap")


# ---------------------------------------------------------------------------
# public spectrum operations
# ---------------------------------------------------------------------------

def periodic_antiperiodic_spectrum(q: Potential1D, m_max: int,
                                   tol: float = 2e-12) -> Spectrum1D:
    """λ₀ and the gap edges (λ_m^−, λ_m^+) for m ≤ m_max.

    Edges are roots of Δ = (−1)^m 2, each bracketed between a zero of Δ and
    the interior critical point, then polished by safeguarded Newton using
    the variational derivative Δ′.  Gaps whose dip at the critical point is
    below ``DIP_FLOOR`` are reported closed with coincident edges.  The
    Dirichlet field is left unset.
    """
    return _ladder(q, m_max, tol, want_edges=True, want_dirichlet=False)


def dirichlet_spectrum(q: Potential1D, m_max: int, tol: float = 2e-12) -> np.ndarray:
    """Dirichlet eigenvalues μ_m, m ≤ m_max (roots of y₂(1, λ) = 0)."""
    spec = _ladder(q, m_max, tol, want_edges=False, want_dirichlet=True)
    return spec.dirichlet


def compute_spectrum(q: Potential1D, m_max: int, tol: float = 2e-12) -> Spectrum1D:
    """Full band/gap/Dirichlet data in a single ladder pass."""
    return _ladder(q, m_max, tol, want_edges=True, want_dirichlet=True)


def critical_points(q: Potential1D, spec: Spectrum1D) -> np.ndarray:
    """λ̇_m for every gap of ``spec``.

    Open gaps get the interior zero of Δ′ (already available from the ladder,
    recomputed here only if absent).  Closed gaps get the gap midpoint — for
    coincident edges that *is* the critical point — and are flagged with a
    ``NoCriticalPoint`` warning.
    """
    if spec.critical is not None:
        out = spec.critical.copy()
    else:  # pragma: no cover - ladder always fills critical
        out = np.full(spec.m_max, np.nan)
    g = spec.gap_lengths
    closed_m = [m for m in range(1, spec.m_max + 1) if g[m - 1] <= spec.gap_tol]
    for m in closed_m:
        out[m - 1] = 0.5 * (spec.gap_edges[m - 1, 0] + spec.gap_edges[m - 1, 1])
    if closed_m:
        warnings.warn(
            f"gaps {closed_m} are closed; midpoint substituted for λ̇",
            NoCriticalPoint, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# product-formula discriminant
# ---------------------------------------------------------------------------

def discriminant_product_ratio(spec: Spectrum1D, lam: float, n_tail: int) -> float:
    """Δ²(λ) − 4 via the gap-edge product, normalized by the free product.

    Evaluates ``(λ₀−λ)/(−λ) · ∏_{n≤n_tail} (λ_n^+−λ)(λ_n^−−λ)/(n²π²−λ)² ·
    (Δ₀²(λ)−4)`` with Δ₀(λ) = 2cos√λ.  Dividing each factor by its free
    counterpart makes the truncation error decay like the tail of the gap
    lengths instead of like 1/n.  If λ collides with a pole of the ratio
    (λ = 0 or λ = n²π²), the evaluation point is shifted by 1e−12·(1+|λ|)
    and a ``PoleAtLambda`` warning is emitted.
    """
    if n_tail < 1 or spec.m_max < n_tail:
        raise ValueError(f"need spectrum to m >= n_tail = {n_tail}")
    lam = float(lam)
    n2pi2 = (np.arange(1, n_tail + 1) * np.pi) ** 2
    poles = np.concatenate([[0.0], n2pi2])
    scale = 1.0 + abs(lam)
    if np.min(np.abs(lam - poles)) < 1e-12 * scale:
        lam = lam + 1e-12 * scale
        warnings.warn(f"λ shifted to {lam!r} off a product pole",
                      PoleAtLambda, stacklevel=2)

    # Δ₀²−4 in cancellation-free form (4cos²x − 4 = −4sin²x); the naive
    # d₀²−4 loses all digits near the poles λ = n²π².
    if lam >= 0.0:
        base = -4.0 * np.sin(np.sqrt(lam)) ** 2
    else:
        base = 4.0 * np.sinh(np.sqrt(-lam)) ** 2
    factor0 = (spec.lambda0 - lam) / (-lam)
    e = spec.gap_edges[:n_tail]
    ratios = (e[:, 1] - lam) * (e[:, 0] - lam) / (n2pi2 - lam) ** 2
    return float(factor0 * np.prod(ratios) * base)


# ---------------------------------------------------------------------------
# Galerkin oracle
# ---------------------------------------------------------------------------

def galerkin_oracle(q: Potential1D, K: int, sector: str) -> np.ndarray:
    """Eigenvalues of a truncated matrix representation, sorted ascending.

    Bases: exponentials e^{2πi(k+σ)s} with σ = 0 (periodic, k = −K..K) or
    σ = 1/2 (antiperiodic, k = −K..K−1); √2 sin(mπs), m = 1..K (Dirichlet,
    matrix elements by Gauss–Legendre quadrature).  This route shares no
    code with the shooting method, which is what makes it an oracle.
    """
    n_max = q.max_frequency
    if K < 2 * n_max:
        raise ValueError(f"K = {K} too small for max frequency {n_max}; "
                         f"need K >= {2 * n_max}")
    if sector in ("periodic", "antiperiodic"):
        ks = np.arange(-K, K + 1, dtype=float) if sector == "periodic" \
            else np.arange(-K, K, dtype=float) + 0.5
        qhat = np.zeros(2 * K + 2, dtype=complex)  # index by |offset|
        n = np.arange(1, q.cos_coeffs.size + 1)
        qhat[n] = 0.5 * (q.cos_coeffs - 1j * q.sin_coeffs)
        off = np.subtract.outer(np.arange(ks.size), np.arange(ks.size))
        H = np.where(off >= 0, qhat[np.abs(off)], np.conj(qhat[np.abs(off)]))
        H[np.diag_indices_from(H)] += (2.0 * np.pi * ks) ** 2
        return np.sort(eigh(H, eigvals_only=True))
    if sector == "dirichlet":
        npts = 4 * (K + 2 * n_max) + 40
        t, w = leggauss(npts)
        x = 0.5 * (t + 1.0)
        w = 0.5 * w
        S = np.sin(np.pi * np.outer(np.arange(1, K + 1), x))  # (K, npts)
        H = 2.0 * (S * (w * q(x))) @ S.T
        H[np.diag_indices_from(H)] += (np.pi * np.arange(1, K + 1)) ** 2
        return np.sort(eigh(H, eigvals_only=True))
    raise ValueError(f"unknown sector {sector!r}")
