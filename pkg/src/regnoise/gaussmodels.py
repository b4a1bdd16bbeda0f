"""Centered Gaussian process models: covariances, sampling, conditioning, LND."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .grids import time_grid

JITTER_REL = 1e-12


class FactorizationError(np.linalg.LinAlgError):
    """Covariance could not be factorised even after jitter."""

    def __init__(self, msg, eigenvalue=None):
        super().__init__(msg)
        self.eigenvalue = eigenvalue


# ---------------------------------------------------------------- kinds

@dataclass(frozen=True)
class FBm:
    H: float

    def __post_init__(self):
        if not 0.0 < self.H < 1.0:
            raise ValueError(f"Hurst exponent must lie in (0,1), got {self.H}")

    def cov(self, s, t):
        return fbm_cov(s, t, self.H)


@dataclass(frozen=True)
class PLogBm:
    p: float

    def __post_init__(self):
        if not self.p > 0.5:
            raise ValueError(f"p-log BM needs p > 1/2, got {self.p}")

    def kernel(self, u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return 1.0 / np.sqrt(u * np.log(1.0 / u) ** (2 * self.p))

    def variance(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            v = np.log(1.0 / t) ** (1 - 2 * self.p) / (2 * self.p - 1)
        return np.where(t > 0, v, 0.0)

    def cov(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        out = volterra_cov(self.kernel, s, t)
        diag = s == t
        out[diag] = self.variance(s[diag])
        return out


@dataclass(frozen=True)
class FbmSeries:
    lambdas: tuple
    hursts: tuple
    truncation: int | None = None

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        hs = tuple(float(v) for v in self.hursts)
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "hursts", hs)
        if self.truncation is None:
            object.__setattr__(self, "truncation", len(lam))
        if len(lam) != self.truncation or len(hs) != self.truncation:
            raise ValueError("lambdas and hursts must both have the declared truncation length")
        if len(lam) == 0:
            raise ValueError("fBm series needs at least one term")
        if any(v <= 0 for v in lam):
            raise ValueError("fBm series weights must be positive")
        if any(not 0 < h < 1 for h in hs):
            raise ValueError("fBm series Hurst exponents must lie in (0,1)")

    def cov(self, s, t):
        return sum(l**2 * fbm_cov(s, t, h) for l, h in zip(self.lambdas, self.hursts))

    def weight_sum(self) -> float:
        """sum lambda_n over the kept terms.

        Continuity of the infinite series needs sum lambda_n E[sup |B^{H_n}|] < oo,
        which has no finite-data analogue; only the truncation is ever sampled.
        """
        return float(sum(self.lambdas))


@dataclass(frozen=True)
class CustomKernel:
    """Volterra process w_t = int_0^t k(t-r) dB_r for a user kernel k."""

    k: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"

    def cov(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, float), np.asarray(t, float))
        return volterra_cov(self.k, s, t)


@dataclass(frozen=True)
class GaussianModel:
    kind: object
    dimension: int = 1
    horizon: float = 1.0

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if isinstance(self.kind, PLogBm) and not self.horizon < 1:
            raise ValueError("p-log BM needs horizon T < 1")
        if not isinstance(self.kind, (FBm, PLogBm, FbmSeries, CustomKernel)):
            raise TypeError(f"unknown model kind {self.kind!r}")

    # convenience constructors
    @classmethod
    def fbm(cls, H, dimension=1, horizon=1.0):
        return cls(FBm(H), dimension, horizon)

    @classmethod
    def plog(cls, p, dimension=1, horizon=0.5):
        return cls(PLogBm(p), dimension, horizon)

    @classmethod
    def series(cls, lambdas, hursts, dimension=1, horizon=1.0):
        return cls(FbmSeries(tuple(lambdas), tuple(hursts)), dimension, horizon)

    def to_dict(self) -> dict:
        k = self.kind
        base = {"dimension": self.dimension, "horizon": self.horizon}
        if isinstance(k, FBm):
            return {"kind": "fbm", "H": k.H, **base}
        if isinstance(k, PLogBm):
            return {"kind": "plog", "p": k.p, **base}
        if isinstance(k, FbmSeries):
            return {"kind": "fbm_series", "lambdas": list(k.lambdas), "hursts": list(k.hursts), **base}
        raise TypeError("custom kernels are not serialisable")

    @classmethod
    def from_dict(cls, cfg: dict) -> "GaussianModel":
        cfg = dict(cfg)
        kind = cfg.pop("kind")
        d = int(cfg.pop("dimension", 1))
        if kind == "fbm":
            return cls(FBm(float(cfg["H"])), d, float(cfg.get("horizon", 1.0)))
        if kind in ("bm", "brownian"):
            return cls(FBm(0.5), d, float(cfg.get("horizon", 1.0)))
        if kind == "plog":
            return cls(PLogBm(float(cfg["p"])), d, float(cfg.get("horizon", 0.5)))
        if kind == "fbm_series":
            return cls(FbmSeries(tuple(cfg["lambdas"]), tuple(cfg["hursts"])), d, float(cfg.get("horizon", 1.0)))
        raise ValueError(f"unknown model kind '{kind}'")


@dataclass
class SamplePath:
    times: np.ndarray
    values: np.ndarray  # shape (n+1, d)
    seed: int | None = None
    model: GaussianModel | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        self.values = v
        if len(self.times) != v.shape[0]:
            raise ValueError("times and values have different lengths")

    @property
    def n(self) -> int:
        return len(self.times) - 1

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def dt(self) -> float:
        return (self.times[-1] - self.times[0]) / self.n

    def index(self, t: float) -> int:
        """Grid index of time t; raises if t is not a grid time."""
        k = (t - self.times[0]) / self.dt
        kr = int(round(k))
        if abs(k - kr) > 1e-8 or not 0 <= kr <= self.n:
            raise ValueError(f"time {t} is not on the path grid")
        return kr

    @classmethod
    def linear(cls, T, n, a=0.0, b=1.0, d=1):
        t = time_grid(T, n)
        vals = np.outer(t, np.ones(d)) * np.asarray(b, float) + np.asarray(a, float)
        return cls(t, vals)

    @classmethod
    def zero(cls, T, n, d=1):
        return cls(time_grid(T, n), np.zeros((n + 1, d)))


@dataclass
class ConditionalLaw:
    """Law of w_r given the grid observations up to s (per coordinate, i.i.d.)."""

    weights: np.ndarray  # E[w_r | F_s] = weights @ w[1:s_idx+1]
    variance: float
    dimension: int
    jitter: float = 0.0

    @property
    def covariance(self) -> np.ndarray:
        return self.variance * np.eye(self.dimension)

    def mean(self, prefix: np.ndarray) -> np.ndarray:
        """Conditional mean given observed values w_{t_1..s}, shape (k, d) or (k,)."""
        prefix = np.asarray(prefix, dtype=float)
        if prefix.ndim == 1:
            prefix = prefix[:, None]
        if prefix.shape[0] != len(self.weights):
            # allow passing the full prefix including w_0 = 0
            if prefix.shape[0] == len(self.weights) + 1:
                prefix = prefix[1:]
            else:
                raise ValueError("prefix length does not match the conditioning set")
        return self.weights @ prefix


# ---------------------------------------------------------------- covariances

def fbm_cov(s, t, H):
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (np.abs(s) ** (2 * H) + np.abs(t) ** (2 * H) - np.abs(t - s) ** (2 * H))


_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def volterra_cov(kernel, s, t, ratio=0.15, cells=40):
    """int_0^{min(s,t)} k(h+u) k(u) du, h = |t-s|, on a geometrically graded mesh.

    The mesh refines towards u = 0 where the kernel may be singular; each cell
    carries a 16-point Gauss-Legendre rule.
    """
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    lo = np.minimum(s, t)
    h = np.abs(t - s)
    edges = ratio ** np.arange(cells, -1, -1)
    a = np.concatenate([[0.0], edges[:-1]])
    b = edges
    nodes = (((a + b) / 2)[:, None] + ((b - a) / 2)[:, None] * _GL_X).ravel()
    weights = (((b - a) / 2)[:, None] * _GL_W).ravel()
    out = np.zeros(lo.shape)
    flat_lo, flat_h = lo.ravel(), h.ravel()
    res = out.reshape(-1)
    chunk = max(1, 2_000_000 // len(nodes))
    for i in range(0, flat_lo.size, chunk):
        l = flat_lo[i:i + chunk, None]
        u = l * nodes
        with np.errstate(divide="ignore", invalid="ignore"):
            f = kernel(flat_h[i:i + chunk, None] + u) * kernel(u)
        f = np.where(np.isfinite(f), f, 0.0)
        res[i:i + chunk] = (f @ weights) * l[:, 0]
    return out


def covariance_matrix(model: GaussianModel, times) -> np.ndarray:
    """Cov(w_{t_i}, w_{t_j}) for one coordinate."""
    times = np.asarray(times, dtype=float)
    if np.any(times < 0) or np.any(times > model.horizon * (1 + 1e-12)):
        raise ValueError("grid leaves [0, T]")
    if isinstance(model.kind, PLogBm) and np.any(times >= 1):
        raise ValueError("p-log BM grid must stay below 1")
    S, Tt = np.meshgrid(times, times, indexing="ij")
    if isinstance(model.kind, (PLogBm, CustomKernel)):
        n = len(times)
        K = np.zeros((n, n))
        iu = np.triu_indices(n)
        K[iu] = model.kind.cov(S[iu], Tt[iu])
        K = K + np.triu(K, 1).T
        return K
    K = model.kind.cov(S, Tt)
    return 0.5 * (K + K.T)


@dataclass
class _Factor:
    times: np.ndarray  # positive grid times (t_0 = 0 removed)
    K: np.ndarray
    L: np.ndarray
    jitter: float


def _factor(model: GaussianModel, times) -> _Factor:
    times = np.asarray(times, dtype=float)
    if times[0] == 0.0:
        times = times[1:]
    K = covariance_matrix(model, times)
    n = len(times)
    jit = JITTER_REL * np.trace(K) / n
    try:
        L = linalg.cholesky(K + jit * np.eye(n), lower=True)
    except linalg.LinAlgError:
        ev = np.linalg.eigvalsh(K).min()
        raise FactorizationError(
            f"covariance not PSD after jitter {jit:.3e}; smallest eigenvalue {ev:.3e}", ev) from None
    return _Factor(times, K, L, jit)


# ---------------------------------------------------------------- sampling

def _fgn_davies_harte(n, H, rng):
    """n unit-step fractional Gaussian noise increments via circulant embedding."""
    k = np.arange(n + 1)
    gamma = 0.5 * ((k + 1.0) ** (2 * H) - 2.0 * k ** (2.0 * H) + np.abs(k - 1.0) ** (2 * H))
    row = np.concatenate([gamma, gamma[-2:0:-1]])
    lam = np.fft.fft(row).real
    if lam.min() < -1e-10 * lam.max():
        raise FactorizationError(f"circulant embedding has negative eigenvalue {lam.min():.3e}", lam.min())
    lam = np.clip(lam, 0.0, None)
    m = len(row)
    zr = rng.standard_normal(m)
    zi = rng.standard_normal(m)
    w = np.fft.fft(np.sqrt(lam / m) * (zr + 1j * zi))
    return w.real[:n]


def sample(model: GaussianModel, n: int, seed: int) -> SamplePath:
    """Exact-in-law sample of the model on the uniform grid with n steps."""
    if n < 2:
        raise ValueError("need n >= 2")
    rng = np.random.default_rng(seed)
    T = model.horizon
    times = time_grid(T, n)
    d = model.dimension
    vals = np.zeros((n + 1, d))
    kind = model.kind
    if isinstance(kind, (FBm, FbmSeries)):
        terms = [(1.0, kind.H)] if isinstance(kind, FBm) else list(zip(kind.lambdas, kind.hursts))
        for c in range(d):
            for lam, H in terms:
                inc = _fgn_davies_harte(n, H, rng) * (T / n) ** H
                vals[1:, c] += lam * np.cumsum(inc)
    else:
        f = _factor(model, times)
        eps = rng.standard_normal((n, d))
        vals[1:] = f.L @ eps
    return SamplePath(times, vals, seed, model)


def sample_batch(model: GaussianModel, n: int, base_seed: int, count: int):
    """Paths with seeds base_seed + i, i = 0..count-1."""
    return [sample(model, n, base_seed + i) for i in range(count)]


# ---------------------------------------------------------------- conditioning

def conditional_law(model: GaussianModel, times, s: float, r: float) -> ConditionalLaw:
    """Law of w_r given grid observations w_t, 0 < t <= s, via a Schur complement."""
    times = np.asarray(times, dtype=float)
    step = times[1] - times[0]

    def idx(v):
        k = int(round((v - times[0]) / step))
        if abs(times[k] - v) > 1e-9 * max(1.0, abs(v)):
            raise ValueError(f"time {v} not on the grid")
        return k

    i, j = idx(s), idx(r)
    if not i < j:
        raise ValueError("need s < r")
    past = times[1:i + 1]
    K_rr = float(model.kind.cov(np.array(r), np.array(r)))
    if len(past) == 0:
        return ConditionalLaw(np.zeros(0), K_rr, model.dimension, 0.0)
    K_pp = covariance_matrix(model, past)
    K_pr = np.asarray(model.kind.cov(past, np.full_like(past, r)), dtype=float)
    jit = JITTER_REL * np.trace(K_pp) / len(past)
    c = linalg.cho_factor(K_pp + jit * np.eye(len(past)), lower=True)
    wts = linalg.cho_solve(c, K_pr)
    var = K_rr - K_pr @ wts
    if var < -1e-10 * K_rr:
        warnings.warn(f"negative conditional variance {var:.3e} clipped", RuntimeWarning)
    return ConditionalLaw(wts, max(var, 0.0), model.dimension, jit)


def conditional_variances(model: GaussianModel, times, pairs) -> np.ndarray:
    """Var(w_r | w_t, 0 < t <= s) for many grid pairs (s, r) from one covariance matrix.

    Each pair is an independent Schur complement on a slice of the full grid
    covariance, so the matrix entries are only computed once.
    """
    times = np.asarray(times, dtype=float)
    pos = times[1:]
    K = covariance_matrix(model, pos)
    step = times[1] - times[0]
    out = []
    for s, r in pairs:
        i, j = int(round((s - times[0]) / step)), int(round((r - times[0]) / step))
        if not 0 <= i < j < len(times):
            raise ValueError(f"pair ({s}, {r}) is not an ordered pair of grid times")
        K_rr = K[j - 1, j - 1]
        if i == 0:
            out.append(K_rr)
            continue
        K_pp = K[:i, :i]
        K_pr = K[:i, j - 1]
        jit = JITTER_REL * np.trace(K_pp) / i
        c = linalg.cho_factor(K_pp + jit * np.eye(i), lower=True)
        out.append(max(K_rr - K_pr @ linalg.cho_solve(c, K_pr), 0.0))
    return np.array(out)


@dataclass
class InnovationTable:
    """Cholesky innovation sums for a whole grid.

    cum[r, k] = sum_{l <= k} L[r, l]^2 over positive grid points, so that
    Var(w_r | F_{t_i}) = total[r] - cum[r, i] (with cum[r, 0] = 0 for F_0).
    """

    times: np.ndarray
    L: np.ndarray
    cum: np.ndarray
    jitter: float

    @property
    def total(self):
        return self.cum[:, -1]

    def cond_var(self, i: int, r: int) -> float:
        """Var(w_{t_r} | F_{t_i}) in full-grid indices (t_0 = 0)."""
        return float(self.total[r] - self.cum[r, i])


def innovations(model: GaussianModel, times) -> InnovationTable:
    f = _factor(model, times)
    n = len(f.times)
    Lp = np.zeros((n + 1, n + 1))
    Lp[1:, 1:] = f.L
    cum = np.cumsum(Lp**2, axis=1)
    return InnovationTable(np.concatenate([[0.0], f.times]), Lp, cum, f.jitter)


@dataclass
class LndProfile:
    zeta: float
    times: np.ndarray
    strong: np.ndarray  # [i, j] = Var(w_tj | F_ti) / (tj-ti)^{2 zeta}, nan for j <= i
    weak: np.ndarray    # [i, j] = Var(w_tj - w_ti) / (tj-ti)^{2 zeta}
    tol: float
    jitter: float

    @property
    def inf_strong(self) -> float:
        return float(np.nanmin(self.strong))

    @property
    def inf_weak(self) -> float:
        return float(np.nanmin(self.weak))

    @property
    def near_diagonal(self) -> float:
        """Smallest one-step strong quotient."""
        return float(np.nanmin(np.diagonal(self.strong, offset=1)))

    @property
    def is_lnd(self) -> bool:
        return self.inf_strong > self.tol

    def to_dict(self):
        return {"zeta": self.zeta, "n": len(self.times) - 1, "inf_strong": self.inf_strong,
                "inf_weak": self.inf_weak, "near_diagonal": self.near_diagonal,
                "lnd_on_grid": self.is_lnd, "tol": self.tol, "jitter": self.jitter}


def lnd_profile(model: GaussianModel, times, zeta: float, tol: float = 1e-6) -> LndProfile:
    """Conditional-variance quotients over all grid pairs s < t."""
    if not 0 < zeta < 1:
        raise ValueError("zeta must lie in (0,1)")
    times = np.asarray(times, dtype=float)
    if len(times) < 3:
        raise ValueError("need at least 3 grid points")
    inv = innovations(model, times)
    n1 = len(inv.times)
    tt = inv.times
    h = tt[None, :] - tt[:, None]
    upper = h > 0
    cond = inv.total[None, :] - inv.cum.T  # [i, j] = total[j] - cum[j, i]
    K = covariance_matrix(model, tt)
    dv = np.diag(K)
    inc = dv[None, :] + dv[:, None] - 2 * K
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(upper, h, 1.0) ** (2 * zeta)
        strong = np.where(upper, cond / scale, np.nan)
        weak = np.where(upper, inc / scale, np.nan)
    return LndProfile(zeta, tt, strong, weak, tol, inv.jitter)
