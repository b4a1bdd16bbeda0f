import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from regnoise.averaging import (
    AveragedField, SpectralDrift, average, holder_in_time_norm, mollify_convergence, pointwise_jets,
)
from regnoise.gaussmodels import GaussianModel, SamplePath, sample
from regnoise.grids import FrequencyGrid
from regnoise.occupation import local_time, occupation_spectrum

G1 = FrequencyGrid.default(1)


@pytest.fixture(scope="module")
def bm():
    return sample(GaussianModel.fbm(0.5), 2048, 11)


def _gl_average(f, path, x):
    # Gauss-Legendre along each linear piece of the path
    xg, wg = np.polynomial.legendre.leggauss(12)
    w0, w1 = path.values[:-1, 0], path.values[1:, 0]
    nodes = w0[:, None] + 0.5 * (xg + 1)[None, :] * (w1 - w0)[:, None]
    return np.array([np.sum(f(xx + nodes) * wg[None, :]) * 0.5 * path.dt for xx in x])


def test_gaussian_matches_direct_quadrature(bm):
    b = SpectralDrift.gaussian(1.0, 0.5, 0.3)
    F = average(b, occupation_spectrum(bm, 0, 1, G1, "linear"))
    x = G1.x_axis
    sel = np.abs(x) < 3
    ref = _gl_average(lambda y: np.exp(-0.5 * (y - 0.3) ** 2 / 0.25), bm, x[sel])
    assert np.abs(F.jets[0][0][sel] - ref).max() < 1e-6 * np.abs(ref).max()


def test_dirac_gives_reflected_local_time(bm):
    sp = occupation_spectrum(bm, 0, 1, G1, "linear")
    F = average(SpectralDrift.dirac(), sp)
    L = local_time(sp).values
    assert np.allclose(F.jets[0][0], L[::-1], atol=1e-12)


def test_constant_drift():
    p = sample(GaussianModel.fbm(0.3), 256, 0)
    F = average(SpectralDrift.constant(1.0), occupation_spectrum(p, 0.25, 0.75, G1))
    assert np.allclose(F.jets[0][0], 0.5, atol=1e-13)
    rep = holder_in_time_norm(F, 1.0)
    assert rep.value == pytest.approx(1.0, abs=1e-12)


def test_sine_comb_on_linear_path():
    # int_0^1 sin(x + r) dr = cos(x) - cos(x + 1)
    p = SamplePath.linear(1.0, 64)
    F = average(SpectralDrift.sine(1.0), occupation_spectrum(p, 0, 1, G1, "linear"), k=1)
    x = G1.x_axis
    assert np.allclose(F.jets[0][0], np.cos(x) - np.cos(x + 1), atol=1e-12)
    assert np.allclose(F.jets[1][0][0], -np.sin(x) + np.sin(x + 1), atol=1e-12)


def test_zero_window_is_zero():
    p = sample(GaussianModel.fbm(0.5), 64, 0)
    sp = occupation_spectrum(p, 0, p.times[1], G1)
    sp.values[:] = 0  # degenerate window
    F = average(SpectralDrift.dirac(), sp, k=2)
    assert all(np.all(J == 0) for J in F.jets)


@given(st.integers(1, 2047))
def test_time_additivity(k):
    p = sample(GaussianModel.fbm(0.5), 2048, 3)
    u = p.times[k]
    b = SpectralDrift.gaussian(1.0, 0.4)
    F = average(b, [occupation_spectrum(p, 0, u, G1), occupation_spectrum(p, u, 1, G1),
                    occupation_spectrum(p, 0, 1, G1)], k=1)
    for J in F.jets:
        assert np.abs(J[0] + J[1] - J[2]).max() < 1e-10


def test_linearity(bm):
    sp = occupation_spectrum(bm, 0, 1, G1)
    g1, g2 = SpectralDrift.gaussian(1.0, 0.3), SpectralDrift.gaussian(2.0, 0.7, -0.5)
    F1, F2 = average(g1, sp).jets[0], average(g2, sp).jets[0]
    # the combined symbol as a gridded drift
    vals = 2.5 * g1.on_grid(G1) + g2.on_grid(G1)
    F = average(SpectralDrift.gridded(G1, vals, kappa=0.0), sp).jets[0]
    assert np.abs(F - (2.5 * F1 + F2)).max() < 1e-12


def test_jets_are_gradients(bm):
    # central differences of jet l against jet l+1, two step sizes -> order ~ 2
    b = SpectralDrift.gaussian(1.0, 0.5)
    sp = occupation_spectrum(bm, 0, 1, G1)
    F = average(b, sp, k=1)
    zp, coef = b.coefficients(G1)
    P = (coef * sp.values.ravel()[np.abs(b.on_grid(G1).ravel()) > 0])[None, :]
    x0 = np.array([[0.37]])
    errs = []
    for h in (0.02, 0.01):
        fd = (pointwise_jets(zp, P, x0 + h, 0) - pointwise_jets(zp, P, x0 - h, 0)) / (2 * h)
        errs.append(abs(fd[0] - pointwise_jets(zp, P, x0, 1)[0, 0]))
    assert np.log2(errs[0] / errs[1]) >= 1.9
    # pointwise evaluation agrees with the gridded jet at a grid node
    i = np.argmin(np.abs(G1.x_axis - 0.5))
    xi = np.array([[G1.x_axis[i]]])
    assert pointwise_jets(zp, P, xi, 1)[0, 0] == pytest.approx(F.jets[1][0][0][i], abs=1e-12)


def test_convolution_theorem_against_spatial_pairing(bm):
    # <b, L(. - x)> computed on the spatial grid from the local time
    b = SpectralDrift.gaussian(1.0, 0.6)
    sp = occupation_spectrum(bm, 0, 1, G1, "linear")
    F = average(b, sp).jets[0][0]
    L = local_time(sp).values
    x = G1.x_axis
    dx = G1.dx
    bx = lambda y: np.exp(-0.5 * y**2 / 0.36)
    sel = np.nonzero(np.abs(x) < 2)[0]
    pair = np.array([np.sum(bx(x + x[i]) * L) * dx for i in sel])
    assert np.abs(F[sel] - pair).max() < 1e-6 * np.abs(pair).max()


def test_truncation_warning(bm):
    sp = occupation_spectrum(bm, 0, 1, G1)
    with pytest.warns(RuntimeWarning, match="not resolved"):
        average(SpectralDrift.dirac_derivative(), sp)


def test_gridded_symbol_must_be_hermitian():
    vals = np.zeros(G1.shape, complex)
    vals[300] = 1.0
    with pytest.raises(ValueError, match="Hermitian"):
        SpectralDrift.gridded(G1, vals, kappa=0.0)
    vals[G1.m - 1 - 300] = 1.0
    with pytest.raises(ValueError, match="kappa"):
        SpectralDrift.gridded(G1, vals, kappa=None)


def _dyadic_windows(path, j0, j1):
    out = []
    for j in range(j0, j1):
        k = path.n >> j
        for a in range(0, path.n - k + 1, k):
            out.append(occupation_spectrum(path, path.times[a], path.times[a + k], G1))
    return out


def test_holder_in_time_bounded_by_sup_norm(bm):
    b = SpectralDrift.gaussian(0.7, 0.5)
    F = average(b, _dyadic_windows(bm, 1, 5))
    assert holder_in_time_norm(F, 0.999).value <= 0.7 * 1.01


@pytest.mark.parametrize("seed", range(5))
def test_holder_in_time_of_dirac_stable(seed):
    from regnoise.occupation import cumulative_spectra

    p = sample(GaussianModel.fbm(0.5), 2048, seed)
    cs = cumulative_spectra(p, G1)

    def norm(n_starts):
        sps = []
        for j in range(2, 5):
            k = p.n >> j
            sps += [cs.spectrum(a, a + k) for a in np.unique(np.round(np.linspace(0, p.n - k, n_starts)).astype(int))]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return holder_in_time_norm(average(SpectralDrift.dirac(), sps), 0.6).value

    a, b = norm(128), norm(256)
    assert np.isfinite(a) and abs(b / a - 1) < 0.1


def test_mollification_of_smooth_drift_is_tiny(bm):
    rep = mollify_convergence(SpectralDrift.gaussian(1.0, 1.0), [1e-3, 5e-4, 2.5e-4], _dyadic_windows(bm, 2, 4))
    assert max(rep.differences) < 1e-6


def test_mollification_of_dirac_decreases(bm):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = mollify_convergence(SpectralDrift.dirac(), [0.2, 0.1, 0.05], _dyadic_windows(bm, 2, 4))
    assert rep.monotone and np.all(np.diff(rep.differences) < 0)


def test_band_limited_comb_is_its_own_limit(bm):
    rep = mollify_convergence(SpectralDrift.sine(2.0), [1e-3, 1e-5, 1e-7], _dyadic_windows(bm, 2, 4))
    assert rep.differences[-1] < 1e-8


def test_mollify_requires_decreasing_scales(bm):
    with pytest.raises(ValueError):
        mollify_convergence(SpectralDrift.dirac(), [0.1, 0.2], [occupation_spectrum(bm, 0, 1, G1)])


def test_jet_cap():
    p = SamplePath.linear(1.0, 8)
    with pytest.raises(ValueError):
        average(SpectralDrift.sine(), occupation_spectrum(p, 0, 1, G1), k=5)


def test_averaged_field_order():
    F = AveragedField(G1, [(0, 1)], [np.zeros((1,) + G1.shape)] * 3)
    assert F.order == 2
