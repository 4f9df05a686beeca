"""One-gap Hill potentials from Weierstrass elliptic functions.

For the rectangular lattice with periods (1, iτ), τ > 0, the restriction of
℘ to the line Im z = τ/2 is real, smooth, and 1-periodic, with an
exponentially convergent cosine series.  Twice that restriction, minus its
mean, is a one-gap potential: the Hill operator built on it has the single
open gap (−e₂, −e₃) after the mean shift, where e_k are the half-period
values of ℘.  The gap length e₂ − e₃ = π²θ₂⁴(e^{−πτ}) is a strictly
decreasing function of τ, which makes "pick a gap length" equivalent to
"pick τ"; ``tau_from_gap`` inverts that map.

Half-period values are computed from Jacobi theta constants (nome
e^{−πτ}), which converge much faster than lattice sums and cover the points
z = 1/2 and z = (1+iτ)/2 that the cosine series cannot reach.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import OutOfRange
from .hill1d import Potential1D

TAU_MIN = 0.3
TAU_MAX = 16.0

#: relative size of the last kept Fourier coefficient
_TAIL_REL = 1e-14


def _coeff_ratio(tau: float, n: int) -> float:
    """|a_n / a_1| from the closed form of the coefficients."""
    return (n * np.exp(-np.pi * (n - 1) * tau) * (1.0 - np.exp(-2 * np.pi * tau))
            / (1.0 - np.exp(-2 * np.pi * n * tau)))


@dataclass(frozen=True)
class WpParams:
    """τ and the series truncation for one ℘-based potential.

    ``n_max`` defaults to the smallest truncation whose last kept
    coefficient is below 1e−14 relative to a₁.
    """

    tau: float
    n_max: int = 0

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau!r}")
        if self.n_max == 0:
            n = 2
            while _coeff_ratio(self.tau, n) >= _TAIL_REL:
                n += 1
            object.__setattr__(self, "n_max", n)
        elif self.n_max < 1 or _coeff_ratio(self.tau, self.n_max) >= _TAIL_REL:
            raise ValueError(
                f"n_max = {self.n_max} leaves a relative tail "
                f">= {_TAIL_REL:g} at tau = {self.tau}")


# ---------------------------------------------------------------------------
# theta constants and half-period values
# ---------------------------------------------------------------------------

def _theta_constants(tau: float):
    """(θ₂, θ₃, θ₄) at argument 0 with nome e^{−πτ}."""
    qn = np.exp(-np.pi * tau)
    k = np.arange(1, 11)
    th2 = 2.0 * qn ** 0.25 * (1.0 + np.sum(qn ** (k * (k + 1))))
    th3 = 1.0 + 2.0 * np.sum(qn ** (k * k))
    th4 = 1.0 + 2.0 * np.sum((-1.0) ** k * qn ** (k * k))
    return th2, th3, th4


def halfperiod_values(tau: float):
    """(e₁, e₂, e₃) = ℘ at the half periods 1/2, (1+iτ)/2, iτ/2."""
    th2, th3, th4 = _theta_constants(tau)
    f = np.pi ** 2 / 3.0
    e1 = f * (th3 ** 4 + th4 ** 4)
    e2 = f * (th2 ** 4 - th4 ** 4)
    e3 = -f * (th2 ** 4 + th3 ** 4)
    return e1, e2, e3


def wp_mean(tau: float) -> float:
    """Mean of ℘(s + iτ/2) over one real period."""
    n = np.arange(1, int(np.ceil(25.0 / tau)) + 4)
    x = np.exp(-2 * np.pi * n * tau)
    return float(-np.pi ** 2 / 3.0 + 8 * np.pi ** 2 * np.sum(n * x / (1.0 - x)))


# ---------------------------------------------------------------------------
# Fourier series on the line Im z = τ/2
# ---------------------------------------------------------------------------

def wp_fourier_coeffs(p: WpParams) -> np.ndarray:
    """Cosine coefficients a_n of ℘(s + iτ/2), n = 1..n_max (mean omitted)."""
    n = np.arange(1, p.n_max + 1)
    return -8 * np.pi ** 2 * n * np.exp(-np.pi * n * p.tau) / (
        1.0 - np.exp(-2 * np.pi * n * p.tau))


def one_gap_potential(p: WpParams) -> Potential1D:
    """The mean-zero one-gap potential associated with τ.

    The cosine coefficients are **twice** the ℘ coefficients: the classical
    one-gap operator is −d²/ds² + 2℘, not −d²/ds² + ℘ (with a single ℘ the
    higher gaps open).  Equivalently this is 2℘(s + iτ/2) − 2⟨℘⟩.
    """
    return Potential1D(2.0 * wp_fourier_coeffs(p), np.zeros(p.n_max))


def band_edges(p: WpParams):
    """(λ₀, λ₁⁻, λ₁⁺) of ``one_gap_potential(p)``.

    These are (−e₁, −e₂, −e₃) shifted by the subtracted mean 2⟨℘⟩, i.e. the
    band edges of 2℘ − 2⟨℘⟩.
    """
    e1, e2, e3 = halfperiod_values(p.tau)
    shift = -2.0 * wp_mean(p.tau)
    return (-e1 + shift, -e2 + shift, -e3 + shift)


# ---------------------------------------------------------------------------
# the gap-length ↔ τ correspondence
# ---------------------------------------------------------------------------

def gap_from_tau(tau: float) -> float:
    """Gap length γ(τ) = e₂ − e₃ = π² θ₂⁴(e^{−πτ}) (≈ 16π² e^{−πτ})."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau!r}")
    th2, _, _ = _theta_constants(tau)
    return float(np.pi ** 2 * th2 ** 4)


_monotone_checked = False


def _check_monotone():
    """The inversion assumes γ(τ) is strictly decreasing; verify once."""
    global _monotone_checked
    if _monotone_checked:
        return
    taus = np.geomspace(TAU_MIN, TAU_MAX, 60)
    gaps = np.array([gap_from_tau(t) for t in taus])
    if not np.all(np.diff(gaps) < 0):
        raise AssertionError("gap(τ) failed the monotonicity check")
    _monotone_checked = True


def tau_from_gap(target_gap: float, *, tol: float = 1e-10) -> float:
    """Invert γ(τ) = target_gap on τ ∈ [TAU_MIN, TAU_MAX].

    Raises OutOfRange above γ(TAU_MIN) ≈ 110.  Targets below γ(TAU_MAX)
    (≈ 2e−21, the closed-gap limit) return TAU_MAX with a warning.
    """
    if not target_gap > 0:
        raise OutOfRange(f"gap length must be positive, got {target_gap!r}")
    _check_monotone()
    g_hi = gap_from_tau(TAU_MIN)
    g_lo = gap_from_tau(TAU_MAX)
    if target_gap > g_hi:
        raise OutOfRange(
            f"gap length {target_gap:g} exceeds γ(τ={TAU_MIN}) = {g_hi:.6g}")
    if target_gap < g_lo:
        warnings.warn(
            f"gap length {target_gap:g} below the resolvable minimum "
            f"{g_lo:.3g}; returning τ = {TAU_MAX} (closed-gap limit)",
            UserWarning, stacklevel=2)
        return TAU_MAX
    tau = brentq(lambda t: gap_from_tau(t) - target_gap, TAU_MIN, TAU_MAX,
                 xtol=1e-13, rtol=8.9e-16)
    resid = abs(gap_from_tau(tau) - target_gap)
    if resid > tol * max(1.0, target_gap):
        raise OutOfRange(f"inversion residual {resid:g} exceeds {tol:g}")
    return float(tau)


# ---------------------------------------------------------------------------
# export
# ---------------------------------------------------------------------------

def export_coeffs(p: WpParams, path) -> None:
    """Write (n, a_n) rows as CSV."""
    a = wp_fourier_coeffs(p)
    arr = np.column_stack([np.arange(1, p.n_max + 1), a])
    np.savetxt(path, arr, delimiter=",", comments="", header="n,a_n",
               fmt=["%d", "%.17g"])
