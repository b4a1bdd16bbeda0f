import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regnoise.gaussmodels import GaussianModel, SamplePath, sample
from regnoise.grids import FrequencyGrid
from regnoise.occupation import (
    cumulative_spectra, holder_exponent, interpolation_check, local_time, occupation_histogram,
    occupation_spectrum, sobolev_norm,
)

GRID = FrequencyGrid(32.0, 129)


def test_linear_path_spectrum_closed_form():
    # int_0^1 exp(i z r) dr = (exp(iz) - 1) / (iz)
    p = SamplePath.linear(1.0, 64)
    sp = occupation_spectrum(p, 0.0, 1.0, GRID, "linear")
    z = GRID.axis
    with np.errstate(invalid="ignore", divide="ignore"):
        ref = np.where(z == 0, 1.0, (np.exp(1j * z) - 1) / (1j * z))
    assert np.abs(sp.values - ref).max() < 1e-13


def test_left_rule_error_is_first_order():
    z = GRID.axis
    with np.errstate(invalid="ignore", divide="ignore"):
        ref = np.where(z == 0, 1.0, (np.exp(1j * z) - 1) / (1j * z))
    errs = [np.abs(occupation_spectrum(SamplePath.linear(1.0, n), 0, 1, GRID, "left").values - ref).max()
            for n in (256, 512, 1024)]
    assert 1.8 < errs[0] / errs[1] < 2.2 and 1.8 < errs[1] / errs[2] < 2.2


def test_zero_mode_is_window_length():
    p = sample(GaussianModel.fbm(0.4), 128, 0)
    sp = occupation_spectrum(p, 0.25, 0.75, GRID)
    assert sp.mass == 0.5


@given(st.integers(0, 1000), st.integers(1, 63))
def test_spectra_are_additive(seed, k):
    p = sample(GaussianModel.fbm(0.3), 64, seed)
    u = p.times[k]
    a = occupation_spectrum(p, 0, u, GRID, "linear")
    b = occupation_spectrum(p, u, 1, GRID, "linear")
    whole = occupation_spectrum(p, 0, 1, GRID, "linear")
    assert np.allclose((a + b).values, whole.values, atol=1e-12)


@given(st.floats(-2, 2))
def test_shift_multiplies_by_phase(c):
    p = sample(GaussianModel.fbm(0.5), 64, 1)
    q = SamplePath(p.times, p.values + c)
    a = occupation_spectrum(p, 0, 1, GRID, "trapezoid").values
    b = occupation_spectrum(q, 0, 1, GRID, "trapezoid").values
    assert np.allclose(b, np.exp(1j * GRID.axis * c) * a, atol=1e-12)


def test_cumulative_table_matches_direct():
    p = sample(GaussianModel.fbm(0.5), 64, 3)
    cs = cumulative_spectra(p, GRID, "left")
    sp = occupation_spectrum(p, p.times[10], p.times[40], GRID, "left")
    assert np.allclose(cs.spectrum(10, 40).values, sp.values, atol=1e-12)


def test_local_time_matches_histogram():
    p = sample(GaussianModel.fbm(0.5), 4096, 0)
    g = FrequencyGrid.default(1)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        L = local_time(occupation_spectrum(p, 0, 1, g, "linear"))
    assert L.mass == pytest.approx(1.0, abs=1e-12)
    x = L.x_axis
    dx = g.dx
    edges = np.concatenate([x - dx / 2, [x[-1] + dx / 2]])
    hist = occupation_histogram(p, 0, 1, edges)
    assert np.sum(np.abs(L.values - hist)) * dx < 0.1


def test_histogram_of_linear_path_is_indicator():
    p = SamplePath.linear(1.0, 10, b=2.0)
    edges = np.linspace(-1, 3, 17)
    h = occupation_histogram(p, 0, 1, edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    assert np.allclose(h, np.where((mid > 0) & (mid < 2), 0.5, 0.0))


def test_local_time_warns_on_negativity():
    with pytest.warns(RuntimeWarning, match="negativity"):
        local_time(occupation_spectrum(SamplePath.linear(1.0, 256), 0, 1, FrequencyGrid(128.0, 513), "linear"))


def test_local_time_warns_on_wraparound():
    p = SamplePath.linear(1.0, 64, b=20.0)
    with pytest.warns(RuntimeWarning, match="period"):
        local_time(occupation_spectrum(p, 0, 1, FrequencyGrid(8.0, 33), "linear"))


def test_sobolev_norm_monotone_in_lambda():
    sp = occupation_spectrum(sample(GaussianModel.fbm(0.5), 256, 0), 0, 1, GRID)
    vals = [sobolev_norm(sp, lam) for lam in (-1.0, 0.0, 0.5, 1.0)]
    assert np.all(np.diff(vals) > 0)


def test_sobolev_norm_parseval():
    # ||mu_hat||_{L^2(dz)} = sqrt(2 pi) ||L||_{L^2(dx)}
    p = sample(GaussianModel.fbm(0.5), 1024, 4)
    g = FrequencyGrid.default(1)
    sp = occupation_spectrum(p, 0, 1, g, "linear")
    L = local_time(sp)
    assert sobolev_norm(sp, 0.0) == pytest.approx(np.sqrt(2 * np.pi * np.sum(L.values**2) * g.dx), rel=1e-10)


def test_holder_exponent_input_checks():
    paths = [sample(GaussianModel.fbm(0.5), 256, s) for s in range(5)]
    with pytest.raises(ValueError, match="20 paths"):
        holder_exponent(paths, 0.0)
    with pytest.raises(ValueError, match="two"):
        holder_exponent(paths * 4, 0.0, js=[3])


def test_holder_exponent_decreases_with_lambda():
    paths = [sample(GaussianModel.fbm(0.5), 1024, s) for s in range(20)]
    reps = holder_exponent(paths, [0.0, 0.5], js=range(2, 6), grid=GRID)
    assert reps[0].gamma_hat > reps[1].gamma_hat
    assert reps[0].table().shape == (4, 2)


@given(st.floats(0.2, 2.0), st.floats(0.1, 0.9))
def test_interpolation_inequality(alpha, gamma):
    p = sample(GaussianModel.fbm(0.5), 256, 0)
    rep = interpolation_check(p, alpha, gamma, GRID, js=range(0, 4), n_starts=4)
    assert rep.ratio <= 1 + 1e-12


def test_spectrum_bounded_by_window_length():
    p = sample(GaussianModel.fbm(0.3), 256, 2)
    for q in ("left", "trapezoid", "linear"):
        sp = occupation_spectrum(p, 0.25, 0.5, GRID, q)
        assert np.abs(sp.values).max() <= 0.25 + 1e-12


def test_sobolev_norm_triangle_inequality():
    p = sample(GaussianModel.fbm(0.5), 256, 5)
    u = p.times[100]
    n = lambda a, b: sobolev_norm(occupation_spectrum(p, a, b, GRID), 0.5)
    assert n(0, 1) <= n(0, u) + n(u, 1) + 1e-12


def test_sobolev_norm_stable_under_cutoff_doubling():
    p = sample(GaussianModel.fbm(0.5), 4096, 0)
    a = sobolev_norm(occupation_spectrum(p, 0, 1, FrequencyGrid(64.0, 257)), 0.0)
    b = sobolev_norm(occupation_spectrum(p, 0, 1, FrequencyGrid(128.0, 513)), 0.0)
    assert abs(a / b - 1) < 0.02


def test_linear_path_exponent_matches_closed_form_slope():
    # |mu_hat_{s,s+h}(z)| = |2 sin(zh/2) / z| for a unit-speed path, independent of s
    g = FrequencyGrid.default(1)
    paths = [SamplePath.linear(1.0, 1024)] * 20
    rep = holder_exponent(paths, 0.0, grid=g, quadrature="linear")
    z = g.axis
    h = 2.0 ** -np.arange(2, 8)
    with np.errstate(invalid="ignore", divide="ignore"):
        mod = [np.where(z == 0, hh, np.abs(2 * np.sin(z * hh / 2) / z)) for hh in h]
    norms = [np.sqrt(np.sum(m**2) * g.dz) for m in mod]
    slope = np.polyfit(np.log(h), np.log(norms), 1)[0]
    assert rep.gamma_hat == pytest.approx(slope, abs=1e-8)
    # the L^2 norm sits between its h^{1/2} (wide band) and h (narrow band) regimes here
    assert rep.gamma_hat == pytest.approx(0.65184, abs=1e-4)


def test_interpolation_degenerate_limits():
    p = sample(GaussianModel.fbm(0.5), 256, 0)
    rep = interpolation_check(p, 0.2, 0.6, GRID, js=range(0, 4), n_starts=4)
    assert rep.ratio <= 1.05
    small = interpolation_check(p, 0.3, 1e-9, GRID, js=range(0, 4), n_starts=4)
    assert small.kappa == pytest.approx(0.3, abs=1e-8)
    assert small.ratio <= 1 + 1e-9
    with pytest.raises(ValueError):
        interpolation_check(p, 0.3, 1.0, GRID)
