import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate
from scipy.special import gamma as G

from regnoise.gaussmodels import (
    CustomKernel, FactorizationError, FbmSeries, GaussianModel, PLogBm, conditional_law,
    covariance_matrix, fbm_cov, innovations, lnd_profile, sample, sample_batch, volterra_cov,
)
from regnoise.grids import time_grid


def test_bm_conditional_variance_exact():
    # Var(B_r | F_s) = r - s
    law = conditional_law(GaussianModel.fbm(0.5), time_grid(1.0, 16), 0.5, 0.8125)
    assert law.variance == pytest.approx(0.3125, abs=1e-10)
    # Markov: the conditional mean only looks at the last observation
    assert np.allclose(law.weights[:-1], 0.0, atol=1e-9)
    assert law.weights[-1] == pytest.approx(1.0, abs=1e-9)


def test_fbm_cov_formula():
    s, t, H = 0.3, 0.7, 0.35
    ref = 0.5 * (s ** (2 * H) + t ** (2 * H) - (t - s) ** (2 * H))
    assert fbm_cov(s, t, H) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("H", [0.2, 0.5, 0.8])
def test_fbm_increment_variance_monte_carlo(H):
    n, m = 64, 2000
    W = np.stack([sample(GaussianModel.fbm(H), n, s).values[:, 0] for s in range(m)])
    for lag in (1, 8, 32):
        v = np.var(W[:, lag] - W[:, 0])
        ref = (lag / n) ** (2 * H)
        # chi-square with m dof: sd ~ sqrt(2/m)
        assert abs(v / ref - 1) < 5 * np.sqrt(2 / m)


def test_seed_determinism():
    m = GaussianModel.plog(2.0, horizon=0.5)
    a, b, c = sample(m, 64, 5), sample(m, 64, 5), sample(m, 64, 6)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, c.values)
    batch = sample_batch(m, 64, 5, 2)
    assert np.array_equal(batch[0].values, a.values) and np.array_equal(batch[1].values, c.values)


def test_plog_variance_closed_form():
    p = 2.0
    k = PLogBm(p)
    for t in (0.05, 0.2, 0.45):
        exact = np.log(1 / t) ** (1 - 2 * p) / (2 * p - 1)
        assert k.variance(np.array([t]))[0] == pytest.approx(exact, rel=1e-12)
        # independent route: quadrature of the squared kernel after u = exp(-v)
        q, _ = integrate.quad(lambda v: k.kernel(np.exp(-v)) ** 2 * np.exp(-v), np.log(1 / t), np.inf, limit=200)
        assert q == pytest.approx(exact, rel=1e-6)


def test_volterra_cross_covariance_against_quad():
    k = PLogBm(2.0).kernel
    s, t = 0.1, 0.3
    q, _ = integrate.quad(lambda r: k(t - r) * k(s - r), 0, s, limit=400, points=[s])
    assert volterra_cov(k, np.array([s]), np.array([t]))[0] == pytest.approx(q, rel=1e-6)


def test_plog_horizon_must_be_below_one():
    with pytest.raises(ValueError):
        GaussianModel.plog(2.0, horizon=1.0)


@pytest.mark.parametrize("bad", [{"kind": "fbm", "H": 1.2}, {"kind": "plog", "p": 0.4},
                                 {"kind": "fbm_series", "lambdas": [1.0], "hursts": [0.3, 0.4]}])
def test_invalid_parameters(bad):
    with pytest.raises(ValueError):
        GaussianModel.from_dict(bad)


def test_dict_roundtrip():
    for m in (GaussianModel.fbm(0.3, 2, 2.0), GaussianModel.plog(1.5), GaussianModel.series([1, 0.5], [0.2, 0.6])):
        assert GaussianModel.from_dict(m.to_dict()) == m


def test_factorization_error_reports_eigenvalue():
    bad = GaussianModel(CustomKernel(lambda u: np.ones_like(u)), 1, 1.0)
    # override the covariance with an indefinite one
    class Neg(CustomKernel):
        def cov(self, s, t):
            return -np.minimum(s, t)
    with pytest.raises(FactorizationError) as e:
        sample(GaussianModel(Neg(lambda u: u), 1, 1.0), 8, 0)
    assert e.value.eigenvalue < 0
    assert sample(bad, 8, 0).values.shape == (9, 1)


@given(st.integers(1, 30), st.integers(1, 31))
def test_innovation_and_schur_routes_agree(i, dr):
    model = GaussianModel.fbm(0.3)
    times = time_grid(1.0, 32)
    r = min(i + dr, 32)
    if r <= i:
        return
    inv = innovations(model, times)
    law = conditional_law(model, times, times[i], times[r])
    assert inv.cond_var(i, r) == pytest.approx(law.variance, rel=1e-7, abs=1e-12)


@given(st.integers(0, 10**6))
def test_covariance_matrix_is_psd(seed):
    rng = np.random.default_rng(seed)
    H = rng.uniform(0.05, 0.95)
    t = np.sort(rng.uniform(0.01, 1, 12))
    K = covariance_matrix(GaussianModel.fbm(H), t)
    assert np.linalg.eigvalsh(K).min() > -1e-10


def test_conditional_variance_monotone_in_past():
    # more information can only shrink the conditional variance
    model = GaussianModel.plog(2.0, horizon=0.5)
    inv = innovations(model, time_grid(0.5, 64))
    r = 64
    v = [inv.cond_var(i, r) for i in range(r)]
    assert np.all(np.diff(v) <= 1e-14)


def _full_past_factor(H):
    CH = G(H + 0.5) ** 2 / (2 * H * np.sin(np.pi * H) * G(2 * H))
    return 1 / (2 * H) / CH


def test_full_past_factor_values():
    # Mandelbrot-van Ness constant, cross-checked against quadrature of the MvN kernel
    H = 0.3
    f = lambda u: ((1 + u) ** (H - 0.5) - u ** (H - 0.5)) ** 2
    CH = integrate.quad(f, 0, 1)[0] + integrate.quad(f, 1, np.inf)[0] + 1 / (2 * H)
    assert _full_past_factor(H) == pytest.approx(1 / (2 * H) / CH, rel=1e-6)
    assert _full_past_factor(0.5) == pytest.approx(1.0)
    assert _full_past_factor(0.3) == pytest.approx(0.8889, abs=1e-4)


def test_series_conditional_variance_brownian_terms():
    lam = (1.0, 0.5)
    model = GaussianModel(FbmSeries(lam, (0.5, 0.5)), 1, 1.0)
    law = conditional_law(model, time_grid(1.0, 32), 0.5, 0.75)
    assert law.variance == pytest.approx(sum(l**2 for l in lam) * 0.25, rel=1e-9)


@pytest.mark.parametrize("hs", [(0.3, 0.7), (0.2, 0.4)])
def test_series_conditional_variance_sandwich(hs):
    lam = (1.0, 0.5)
    model = GaussianModel(FbmSeries(lam, hs), 1, 1.0)
    times = time_grid(1.0, 64)
    inv = innovations(model, times)
    for i, r in [(32, 33), (32, 40), (16, 48)]:
        h = times[r] - times[i]
        full = sum(l**2 * _full_past_factor(H) * h ** (2 * H) for l, H in zip(lam, hs))
        upper = sum(l**2 * h ** (2 * H) for l, H in zip(lam, hs))
        v = inv.cond_var(i, r)
        assert full * (1 - 1e-6) <= v <= upper * (1 + 1e-9)


def test_lnd_profile_bm_is_half_lnd():
    prof = lnd_profile(GaussianModel.fbm(0.5), time_grid(1.0, 32), 0.5)
    assert prof.inf_strong == pytest.approx(1.0, rel=1e-6)
    assert prof.is_lnd
    with pytest.raises(ValueError):
        lnd_profile(GaussianModel.fbm(0.5), time_grid(1.0, 32), 1.5)


def test_batched_schur_matches_single_pairs():
    from regnoise.gaussmodels import conditional_variances

    model = GaussianModel.fbm(0.3)
    times = time_grid(1.0, 32)
    pairs = [(times[3], times[9]), (times[0], times[5]), (times[20], times[21])]
    batch = conditional_variances(model, times, pairs)
    single = [conditional_law(model, times, s, r).variance for s, r in pairs]
    assert np.allclose(batch, single, rtol=1e-12)
