import numpy as np
import pytest
from numpy.testing import assert_allclose

from hillflow.errors import OutOfRange
from hillflow.hill1d import compute_spectrum
from hillflow.weierstrass import (
    TAU_MAX,
    WpParams,
    band_edges,
    export_coeffs,
    gap_from_tau,
    halfperiod_values,
    one_gap_potential,
    tau_from_gap,
    wp_fourier_coeffs,
    wp_mean,
)

# frozen against an independent theta-quotient evaluation of ℘ (30-digit
# arithmetic); the two routes agreed to < 4e-15 on e_k and the series values
A1_TAU1 = -3.418417922779374
GAP_TAU1 = 6.875185818020372
LAMBDA0_TAU1 = -0.5920005108407853


def test_params_validation():
    assert WpParams(1.0).n_max == 13
    assert WpParams(2.0).n_max == 7
    with pytest.raises(ValueError):
        WpParams(0.0)
    with pytest.raises(ValueError):
        WpParams(-1.3)
    with pytest.raises(ValueError):
        WpParams(1.0, n_max=3)  # tail far above 1e-14 relative
    WpParams(1.0, n_max=20)  # larger than needed is fine


def test_first_coefficient_closed_form():
    a = wp_fourier_coeffs(WpParams(1.0))
    assert_allclose(a[0], A1_TAU1, rtol=1e-13)
    direct = -8 * np.pi ** 2 * np.exp(-np.pi) / (1 - np.exp(-2 * np.pi))
    assert_allclose(a[0], direct, rtol=1e-15)


def test_coefficient_decay_rate():
    for tau in (0.8, 1.0, 2.0):
        a = wp_fourier_coeffs(WpParams(tau))
        ratio = abs(a[5] / a[4])
        base = np.exp(-np.pi * tau)
        assert base < ratio < base * (6 / 5) * 1.001


def test_large_tau_flattens():
    a = wp_fourier_coeffs(WpParams(12.0))
    assert np.max(np.abs(a)) < 1e-13


def test_halfperiod_values_sum_to_zero():
    for tau in (0.5, 0.7, 1.0, 2.3, 4.0):
        e1, e2, e3 = halfperiod_values(tau)
        scale = max(abs(e1), abs(e3))
        assert abs(e1 + e2 + e3) < 1e-13 * scale
        assert e1 > e2 > e3


def test_square_lattice_symmetry():
    # τ=1 is self-dual: e₂ = 0 and ⟨℘⟩ = −π exactly
    e1, e2, e3 = halfperiod_values(1.0)
    assert abs(e2) < 1e-12
    assert_allclose(e1, -e3, rtol=1e-14)
    assert_allclose(wp_mean(1.0), -np.pi, atol=1e-12)


def test_series_matches_theta_route_at_half_periods():
    # ℘(iτ/2) = e₃ and ℘(1/2 + iτ/2) = e₂ tie the cosine series to the
    # theta-constant route
    for tau in (0.8, 1.0, 1.6):
        p = WpParams(tau)
        a = wp_fourier_coeffs(p)
        e1, e2, e3 = halfperiod_values(tau)
        assert_allclose(wp_mean(tau) + np.sum(a), e3, rtol=1e-12)
        signs = (-1.0) ** np.arange(1, p.n_max + 1)
        assert_allclose(wp_mean(tau) + np.sum(a * signs), e2, atol=1e-12)


def test_one_gap_potential_shape():
    p = WpParams(1.0)
    q = one_gap_potential(p)
    assert_allclose(q.cos_coeffs, 2.0 * wp_fourier_coeffs(p), rtol=1e-15)
    assert np.all(q.sin_coeffs == 0.0)
    s = np.linspace(0, 1, 33, endpoint=False)
    assert_allclose(q(s), q(1.0 - s), atol=1e-12)  # even about 1/2
    assert abs(np.mean(q(np.arange(256) / 256.0))) < 1e-13


def test_band_edges_ordering_and_values():
    p = WpParams(1.0)
    lam0, lm, lp = band_edges(p)
    assert lam0 < lm < lp
    assert_allclose(lam0, LAMBDA0_TAU1, rtol=1e-12)
    assert_allclose(lm, 2 * np.pi, rtol=1e-13)  # −e₂ − 2⟨℘⟩ with e₂=0, ⟨℘⟩=−π
    assert_allclose(lp - lm, GAP_TAU1, rtol=1e-12)


def test_hill1d_certifies_one_gap():
    # the module's central consistency statement: shooting on the factor-2
    # potential reproduces the analytic band edges and closes gaps 2..6
    p = WpParams(1.0)
    spec = compute_spectrum(one_gap_potential(p), 6)
    lam0, lm, lp = band_edges(p)
    assert_allclose(spec.lambda0, lam0, atol=1e-8)
    assert_allclose(spec.gap_edges[0], [lm, lp], rtol=1e-8)
    assert spec.open_set == [1]
    assert np.all(spec.gap_lengths[1:] < 1e-6)
    assert_allclose(spec.gap_lengths[0], gap_from_tau(1.0), rtol=1e-8)


def test_gap_function_values_and_monotonicity():
    assert_allclose(gap_from_tau(1.0), GAP_TAU1, rtol=1e-13)
    taus = np.linspace(0.4, 5.0, 24)
    gaps = [gap_from_tau(t) for t in taus]
    assert np.all(np.diff(gaps) < 0)
    # asymptotic form 16π² e^{−πτ}
    assert_allclose(gap_from_tau(3.0), 16 * np.pi ** 2 * np.exp(-3 * np.pi),
                    rtol=1e-3)
    with pytest.raises(ValueError):
        gap_from_tau(-0.5)


def test_tau_gap_round_trip():
    for tau in (0.5, 1.0, 1.7, 3.0):
        assert_allclose(tau_from_gap(gap_from_tau(tau)), tau, atol=1e-8)


def test_tau_from_gap_range_handling():
    with pytest.raises(OutOfRange):
        tau_from_gap(200.0)
    with pytest.raises(OutOfRange):
        tau_from_gap(-1.0)
    with pytest.warns(UserWarning):
        tau = tau_from_gap(1e-24)
    assert tau == TAU_MAX


def test_halving_the_gap_raises_tau():
    tau = tau_from_gap(0.5 * gap_from_tau(1.0))
    assert tau > 1.0
    assert gap_from_tau(2.0) < gap_from_tau(1.0)


def test_export_coeffs(tmp_path):
    p = WpParams(2.0)
    path = tmp_path / "coeffs.csv"
    export_coeffs(p, path)
    arr = np.loadtxt(path, delimiter=",", skiprows=1)
    assert arr.shape == (p.n_max, 2)
    assert_allclose(arr[:, 1], wp_fourier_coeffs(p), rtol=1e-15)
