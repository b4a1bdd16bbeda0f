"""Nonlinear Young ODEs y_t = x + int_0^t Y_{dr}(y_r) with Y = T^w b, and their flow jets."""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .averaging import SpectralDrift, pointwise_jets
from .gaussmodels import SamplePath
from .grids import FrequencyGrid
from .occupation import step_spectra
from .sewing import Germ, sew

_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class BoxError(ValueError):
    """Evaluation point outside the spatial box of a periodised spectral field."""


class ContractionError(RuntimeError):
    def __init__(self, msg, factor, jet=None):
        super().__init__(msg)
        self.factor = factor
        self.jet = jet


# ---------------------------------------------------------------- fields

class NonlinearField:
    """Y_{s,t}(x) = T^w_{s,t} b(x) on the time grid of a path, with spatial jets.

    Spectral drifts are evaluated off-grid by the band-limited sum
    Re sum_z b_hat(z) mu_hat(z) (iz)^l exp(i z.x), per step; classical drifts by
    Gauss-Legendre quadrature along the piecewise-linear path.
    """

    def __init__(self, drifts, path: SamplePath, grid: FrequencyGrid | None = None,
                 quadrature: str = "linear", gamma: float = 0.75, delta: float = 2.0,
                 max_order: int | None = None):
        if isinstance(drifts, SpectralDrift):
            drifts = [drifts]
        drifts = list(drifts)
        if len(drifts) != path.d:
            raise ValueError(f"need one drift component per dimension ({path.d}), got {len(drifts)}")
        if not 0.5 < gamma < 1:
            raise ValueError(f"time exponent gamma={gamma} must lie in (1/2, 1)")
        if not delta * gamma > 1:
            raise ValueError(f"need delta * gamma > 1, got delta={delta}, gamma={gamma}")
        self.drifts = drifts
        self.path = path
        self.d = path.d
        self.gamma = gamma
        self.delta = delta
        self.grid = grid or FrequencyGrid.default(path.d)
        self.classical = all(b.is_classical for b in drifts)
        if not self.classical and any(b.is_classical for b in drifts):
            raise ValueError("cannot mix classical and spectral drift components")
        if self.classical:
            self.max_order = min(len(b.params["funcs"]) for b in drifts) - 1
            w = path.values[:-1, 0]
            dw = np.diff(path.values[:, 0])
            self._nodes = w[:, None] + 0.5 * (_GL_X + 1.0)[None, :] * dw[:, None]
            self._wts = 0.5 * _GL_W * path.dt
        else:
            self.max_order = 10 if max_order is None else max_order
            self._zp, self._P, self._periodic = [], [], []
            for b in drifts:
                zp, coef = b.coefficients(self.grid)
                steps = step_spectra(path, self.grid, quadrature, zp=zp)
                self._zp.append(zp)
                self._P.append(steps * coef[None, :])
                self._periodic.append(not b.is_comb)
            self._cum = [np.concatenate([np.zeros((1, P.shape[1]), complex), np.cumsum(P, axis=0)])
                         for P in self._P]
            self._gbound = np.sqrt(sum((np.abs(P) @ np.linalg.norm(zp, axis=1)) ** 2
                                       for P, zp in zip(self._P, self._zp)))
        if max_order is not None:
            self.max_order = min(self.max_order, max_order)

    @property
    def n(self) -> int:
        return self.path.n

    @property
    def times(self) -> np.ndarray:
        return self.path.times

    def _check_box(self, X, comp):
        if self._periodic[comp]:
            half = self.grid.x_axis[-1]
            if np.any(np.abs(X) > half):
                raise BoxError(f"evaluation point outside the spatial box |x| <= {half:.4g}")

    def step_jet(self, order: int, X: np.ndarray, i0: int = 0, i1: int | None = None) -> np.ndarray:
        """grad^order Y_{t_i, t_{i+1}}(X[i - i0]) for i in [i0, i1): (steps, d) + (d,)*order."""
        if order > self.max_order:
            raise ValueError(f"field carries jets up to order {self.max_order}, asked for {order}")
        i1 = self.n if i1 is None else i1
        X = np.asarray(X, dtype=float).reshape(i1 - i0, self.d)
        if self.classical:
            f = self.drifts[0].params["funcs"][order]
            vals = f(X[:, :1] + self._nodes[i0:i1]) @ self._wts
            return vals.reshape((i1 - i0, 1) + (1,) * order)
        out = np.empty((i1 - i0, self.d) + (self.d,) * order)
        for c in range(self.d):
            self._check_box(X, c)
            out[:, c] = pointwise_jets(self._zp[c], self._P[c][i0:i1], X, order)
        return out

    def window(self, a: int, b: int, X, order: int = 0) -> np.ndarray:
        """grad^order Y_{t_a, t_b} at points X (k, d) -> (k, d) + (d,)*order."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if b <= a:
            return np.zeros((X.shape[0], self.d) + (self.d,) * order)
        if self.classical:
            f = self.drifts[0].params["funcs"][order]
            vals = np.array([np.sum(f(x[0] + self._nodes[a:b]) @ self._wts) for x in X])
            return vals.reshape((X.shape[0], 1) + (1,) * order)
        out = np.empty((X.shape[0], self.d) + (self.d,) * order)
        for c in range(self.d):
            self._check_box(X, c)
            P = np.broadcast_to(self._cum[c][b] - self._cum[c][a], (X.shape[0], self._zp[c].shape[0]))
            out[:, c] = pointwise_jets(self._zp[c], P, X, order)
        return out

    def grad_bound(self, i0: int, i1: int, center, radius: float, samples: int = 33) -> np.ndarray:
        """Per-step bound on sup_{|x - center| <= radius} |grad Y_{t_i, t_{i+1}}(x)|."""
        if not self.classical:
            return self._gbound[i0:i1]
        c = float(np.ravel(center)[0])
        xs = np.linspace(c - radius, c + radius, samples)
        f = self.drifts[0].params["funcs"][1]
        vals = np.abs(f(xs[None, :, None] + self._nodes[i0:i1, None, :]) @ self._wts)
        return vals.max(axis=1)

    def envelopes(self, box, levels=(1, 2, 3, 4), n_starts: int = 8):
        """Measured G = sup (|Y| + |grad Y|)/|t-s|^gamma and
        F = sup |grad Y(x) - grad Y(y)| / (|t-s|^gamma |x-y|^{delta-1}) over box points."""
        box = np.atleast_2d(np.asarray(box, dtype=float))
        if box.shape[0] == 1 and self.d == 1:
            box = box.T
        G = F = 0.0
        for j in levels:
            k = self.n >> j
            for a in np.unique(np.round(np.linspace(0, self.n - k, n_starts)).astype(int)):
                h = (self.times[a + k] - self.times[a]) ** self.gamma
                Y0 = self.window(a, a + k, box, 0).reshape(len(box), -1)
                Y1 = self.window(a, a + k, box, 1).reshape(len(box), -1)
                G = max(G, float(np.max(np.linalg.norm(Y0, axis=1) + np.linalg.norm(Y1, axis=1)) / h))
                dx = np.linalg.norm(box[:, None] - box[None], axis=-1)
                dg = np.linalg.norm(Y1[:, None] - Y1[None], axis=-1)
                off = dx > 0
                F = max(F, float(np.max(dg[off] / dx[off] ** (self.delta - 1)) / h))
        return G, F


def field_distance(f1: NonlinearField, f2: NonlinearField, center, radius: float,
                   levels=(1, 2, 3, 4, 5), n_starts: int = 8, samples: int = 17) -> float:
    """||Y - Y~||_{gamma,1,B}: sup of (|dY| + |grad dY|)/|t-s|^gamma over windows and ball points."""
    c = np.ravel(np.asarray(center, dtype=float))
    pts = c + np.linspace(-radius, radius, samples)[:, None] * np.ones(f1.d)
    out = 0.0
    for j in levels:
        k = f1.n >> j
        for a in np.unique(np.round(np.linspace(0, f1.n - k, n_starts)).astype(int)):
            h = (f1.times[a + k] - f1.times[a]) ** f1.gamma
            d0 = (f1.window(a, a + k, pts, 0) - f2.window(a, a + k, pts, 0)).reshape(samples, -1)
            d1 = (f1.window(a, a + k, pts, 1) - f2.window(a, a + k, pts, 1)).reshape(samples, -1)
            out = max(out, float(np.max(np.linalg.norm(d0, axis=1) + np.linalg.norm(d1, axis=1)) / h))
    return out


def holder_seminorm(times, y, beta: float) -> float:
    """sup_{s<t} |y_t - y_s| / |t-s|^beta over all grid pairs."""
    y = np.asarray(y, dtype=float).reshape(len(times), -1)
    best = 0.0
    for lag in range(1, len(times)):
        dy = np.linalg.norm(y[lag:] - y[:-lag], axis=1).max()
        best = max(best, dy / (times[lag] - times[0]) ** beta)
    return best


def fitted_holder_exponent(times, y) -> float:
    """log-log slope of the dyadic sup increments of y."""
    y = np.asarray(y, dtype=float).reshape(len(times), -1)
    n = len(times) - 1
    hs, sups = [], []
    lag = 1
    while lag <= n // 2:
        inc = np.linalg.norm(y[lag:] - y[:-lag], axis=1).max()
        if inc > 0:
            hs.append(times[lag] - times[0])
            sups.append(inc)
        lag *= 2
    if len(hs) < 2:
        return 1.0
    return float(np.polyfit(np.log(hs), np.log(sups), 1)[0])


# ---------------------------------------------------------------- Young integral

@dataclass
class YoungIntegral:
    value: np.ndarray
    sewn: object
    holder: float


def nonlinear_young_integral(field_: NonlinearField, y, s: float, t: float) -> YoungIntegral:
    """int_s^t Y_{dr}(y_r) by sewing the germ Y_{u,v}(y_u) over dyadic grid partitions."""
    y = np.asarray(y, dtype=float).reshape(field_.n + 1, field_.d)
    i, j = field_.path.index(s), field_.path.index(t)
    m = j - i
    K = int(round(math.log2(m))) if m > 0 else -1
    if m < 4 or 2**K != m:
        raise ValueError("the window must span a power-of-two number (>= 4) of grid steps")
    hold = fitted_holder_exponent(field_.times[i:j + 1], y[i:j + 1])
    if field_.gamma + min(hold, 1.0) <= 1:
        raise ValueError(f"path exponent {hold:.3f} too small: gamma + gamma' must exceed 1")
    t0, dt = field_.times[0], field_.path.dt

    def ev(u, v):
        a = np.rint((u - t0) / dt).astype(int)
        b = np.rint((v - t0) / dt).astype(int)
        out = np.empty(a.shape + (field_.d,))
        for q, (aa, bb) in enumerate(zip(a.ravel(), b.ravel())):
            out.reshape(-1, field_.d)[q] = field_.window(aa, bb, y[aa][None], 0)[0]
        return out

    sewn = sew(Germ(ev), field_.times[j], K, t0=field_.times[i])
    return YoungIntegral(sewn.values[-1], sewn, hold)


# ---------------------------------------------------------------- solver

@dataclass
class SolveConfig:
    gamma_prime: float = 0.6
    picard_tol: float = 1e-12
    max_picard_iters: int = 100
    step_factor: float = 0.5
    explosion_threshold: float = 1e6
    accept_ratio: float = 0.9
    single_step: str = "explicit"   # germ used when one grid step will not contract: explicit | error

    def __post_init__(self):
        if self.single_step not in ("explicit", "error"):
            raise ValueError("single_step must be 'explicit' or 'error'")
        if not 0 < self.gamma_prime < 1:
            raise ValueError("gamma_prime must lie in (0,1)")
        if not 0 < self.step_factor < 1:
            raise ValueError("step_factor must lie in (0,1)")
        if self.picard_tol <= 0 or self.max_picard_iters < 2:
            raise ValueError("invalid Picard settings")

    def check(self, field_: NonlinearField):
        g, dl, gp = field_.gamma, field_.delta, self.gamma_prime
        if not 1 - g < gp < g:
            raise ValueError(f"gamma_prime={gp} must lie in (1-gamma, gamma) = ({1 - g:.3f}, {g:.3f})")
        if not g + dl * (1 - gp) > 1:
            raise ValueError("need gamma + delta (1 - gamma_prime) > 1")

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class FlowJet:
    times: np.ndarray
    levels: list                  # levels[l]: (n+1, d) + (d,)*l
    status: str = "Complete"      # Complete | Exploded | MaxIterations
    T_star: float | None = None
    contraction_log: list = field(default_factory=list)
    tau_inverse: list = field(default_factory=list)
    asymmetry: list = field(default_factory=list)
    explicit_steps: np.ndarray | None = None   # steps advanced by the left-point germ

    @property
    def order(self) -> int:
        return len(self.levels) - 1

    @property
    def y(self) -> np.ndarray:
        return self.levels[0]

    def manifest(self) -> dict:
        return {"status": self.status, "T_star": self.T_star, "order": self.order,
                "contraction_log": self.contraction_log,
                "tau_inverse_profile": self.tau_inverse,
                "asymmetry": self.asymmetry,
                "explicit_steps": [] if self.explicit_steps is None
                else np.nonzero(self.explicit_steps)[0].tolist()}


def _picard(field_, a, b, ya, cfg, guess=None):
    Z = np.repeat(ya[None, :], b - a + 1, axis=0) if guess is None else np.array(guess, dtype=float)
    Z[0] = ya
    diffs = []
    try:
        with np.errstate(all="ignore"):
            left0 = field_.step_jet(0, Z[:1], a, a + 1)  # Z[0] = ya never changes
    except BoxError:
        return Z, diffs, False
    for it in range(cfg.max_picard_iters):
        with np.errstate(all="ignore"):
            try:
                left = left0 if b - a == 1 else np.concatenate([left0, field_.step_jet(0, Z[1:-1], a + 1, b)])
                right = field_.step_jet(0, Z[1:], a, b)
            except BoxError:
                return Z, diffs, False
            inc = 0.5 * (left + right)
            new = np.empty_like(Z)
            new[0] = ya
            np.cumsum(inc, axis=0, out=new[1:])
            new[1:] += ya
        if not np.all(np.isfinite(new)):
            return new, diffs, False
        diff = float(np.abs(new - Z).max())
        diffs.append(diff)
        Z = new
        if diff <= cfg.picard_tol * (1.0 + float(np.abs(Z).max())):
            return Z, diffs, True
        if len(diffs) >= 4 and diffs[-1] > diffs[-2] > diffs[-3] > diffs[-4]:
            return Z, diffs, False  # iterates moving apart: no contraction here
    return Z, diffs, False


def _ratio(diffs, scale):
    live = [d for d in diffs if d > 1e-9 * (1.0 + scale)]
    if len(live) < 2:
        return 0.0
    return float(max(b / a for a, b in zip(live[:-1], live[1:])))


def solve(field_: NonlinearField, x, config: SolveConfig | None = None, guess: Callable | None = None) -> FlowJet:
    """Picard continuation on subintervals sized from the gradient envelope."""
    cfg = config or SolveConfig()
    cfg.check(field_)
    n, d = field_.n, field_.d
    x = np.ravel(np.asarray(x, dtype=float))
    if x.shape != (d,):
        raise ValueError(f"initial condition must be a {d}-vector")
    Z = np.full((n + 1, d), np.nan)
    Z[0] = x
    log, tau = [], []
    explicit = np.zeros(n, dtype=bool)
    status, T_star = "Complete", None
    t = field_.times
    a = 0
    look = 64
    while a < n:
        ya = Z[a]
        radius = 2.0 * float(np.linalg.norm(ya)) + 1.0
        bnd = field_.grad_bound(a, min(n, a + look), ya, radius)
        csum = np.cumsum(bnd)
        steps = int(np.searchsorted(csum, cfg.step_factor, side="right"))
        if steps == len(csum) and a + steps < n:
            look = min(2 * look, n)
        steps = max(1, steps)
        b = a + steps
        while True:
            g = None if guess is None else guess(a, b, ya)
            sol, diffs, ok = _picard(field_, a, b, ya, cfg, g)
            ratio = _ratio(diffs, float(np.abs(sol).max()) if np.all(np.isfinite(sol)) else 0.0)
            if ok and ratio < cfg.accept_ratio:
                break
            if b - a == 1 and cfg.single_step == "explicit":
                # one grid step is the finest the field resolves: advance by the germ Y_{t_a, t_b}(y_a)
                with np.errstate(all="ignore"):
                    inc = field_.step_jet(0, ya[None, :], a, b)[0]
                sol = np.stack([ya, ya + inc])
                diffs, ratio = [], float("nan")
                explicit[a] = True
                break
            if b - a == 1:
                Z[a + 1:] = np.nan
                jet = FlowJet(t, [Z], "MaxIterations", None, log, tau)
                raise ContractionError(
                    f"no contraction on a single step at t={t[a]:.6g} (measured factor {ratio:.3g}, "
                    f"{len(diffs)} iterations)", ratio, jet)
            b = a + (b - a) // 2
        log.append({"t0": float(t[a]), "t1": float(t[b]), "iters": len(diffs), "ratio": ratio,
                    "bound": float(np.sum(bnd[:b - a])), "germ": "explicit" if explicit[a] else "trapezoid"})
        if not np.all(np.isfinite(sol[1:])):
            status, T_star = "Exploded", float(t[b])
            Z[a + 1:] = np.nan
            break
        tau.append((float(t[a]), 1.0 / float(t[b] - t[a])))
        Z[a + 1:b + 1] = sol[1:]
        big = np.nonzero(np.linalg.norm(sol[1:], axis=1) >= cfg.explosion_threshold)[0]
        if len(big):
            k = a + 1 + int(big[0])
            status, T_star = "Exploded", float(t[k])
            Z[k + 1:] = np.nan
            break
        a = b
    return FlowJet(t, [Z], status, T_star, log, tau, explicit_steps=explicit)


def _set_partitions(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        yield [[first]] + part
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]


_LETTERS = "ijklmnopqrstuvwxyz"


def _fdb_term(D, blocks, levels, l):
    """sum_b D[., a, b1..bm] prod_B z^{|B|}[., b_B, i_B] for one set partition.

    D: (steps, d) + (d,)*m ; levels[q]: (steps, d) + (d,)*q.
    Result (steps, d) + (d,)*l with derivative axes in position order.
    """
    m = len(blocks)
    inner = "ABCDEFGH"[:m]
    pos = _LETTERS[:l]
    ops = ["Za" + inner]
    args = [D]
    for bi, B in enumerate(blocks):
        ops.append("Z" + inner[bi] + "".join(pos[p] for p in B))
        args.append(levels[len(B)])
    spec = ",".join(ops) + "->Za" + pos
    return np.einsum(spec, *args)


def _symmetrize(z, l):
    if l < 2:
        return z, 0.0
    axes = list(range(2, 2 + l))
    acc = np.zeros_like(z)
    perms = list(itertools.permutations(axes))
    for p in perms:
        acc += np.transpose(z, [0, 1] + list(p))
    acc /= len(perms)
    return acc, float(np.abs(z - acc).max())


def solve_flow(field_: NonlinearField, x, k: int = 1, config: SolveConfig | None = None,
               initial: Sequence[np.ndarray] | None = None) -> FlowJet:
    """Solution and its spatial derivatives up to order k.

    Level l >= 1 of the lower-triangular system is affine in z^l with the same
    trapezoid germ as level 0, so its fixed point on each step is an explicit
    d x d solve; explosion is decided by level 0 alone.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    if k > field_.max_order:
        raise ValueError(f"field carries jets up to order {field_.max_order}; flow order {k} needs them")
    base = solve(field_, x, config)
    d, n = field_.d, field_.n
    if initial is None:
        initial = [np.eye(d)] + [np.zeros((d,) * (l + 1)) for l in range(2, k + 1)]
    initial = [np.asarray(v, dtype=float) for v in initial]
    if len(initial) < k:
        raise ValueError("initial data needed for every level 1..k")
    Z0 = base.levels[0]
    valid = np.nonzero(np.all(np.isfinite(Z0), axis=1))[0]
    last = int(valid[-1])  # index of last finite state
    steps = last
    levels = [Z0[: last + 1]]
    asym = []
    if steps > 0 and k > 0:
        DL = [None] + [field_.step_jet(j, Z0[:last], 0, last) for j in range(1, k + 1)]
        DR = [None] + [field_.step_jet(j, Z0[1:last + 1], 0, last) for j in range(1, k + 1)]
    eye = np.eye(d)
    for l in range(1, k + 1):
        zl = np.zeros((last + 1, d) + (d,) * l)
        zl[0] = initial[l - 1].reshape((d,) + (d,) * l)
        if steps > 0:
            RL = np.zeros((steps, d) + (d,) * l)
            RR = np.zeros_like(RL)
            lowL = [None] + [lv[:-1] for lv in levels[1:]]
            lowR = [None] + [lv[1:] for lv in levels[1:]]
            for part in _set_partitions(list(range(l))):
                if len(part) == 1:
                    continue
                blocks = [sorted(B) for B in part]
                RL += _fdb_term(DL[len(blocks)], blocks, lowL, l)
                RR += _fdb_term(DR[len(blocks)], blocks, lowR, l)
            AL, AR = DL[1], DR[1]
            flat = d**l
            for i in range(steps):
                if base.explicit_steps[i]:
                    # same left-point germ as level 0 on this step
                    zl[i + 1] = zl[i] + (AL[i] @ zl[i].reshape(d, flat)).reshape(zl[i].shape) + RL[i]
                    continue
                rhs = (zl[i] + 0.5 * (AL[i] @ zl[i].reshape(d, flat)).reshape(zl[i].shape)
                       + 0.5 * (RL[i] + RR[i]))
                M = eye - 0.5 * AR[i]
                zl[i + 1] = np.linalg.solve(M, rhs.reshape(d, flat)).reshape(zl[i].shape)
        zl, res = _symmetrize(zl, l)
        asym.append(res)
        levels.append(zl)
    full = []
    for l, lv in enumerate(levels):
        arr = np.full((n + 1,) + lv.shape[1:], np.nan)
        arr[: last + 1] = lv
        full.append(arr)
    full[0] = base.levels[0]
    return FlowJet(base.times, full, base.status, base.T_star, base.contraction_log, base.tau_inverse, asym,
                   base.explicit_steps)


def reconstruct_solution(jet: FlowJet, path: SamplePath) -> np.ndarray:
    """y~ = y + w on the shared grid."""
    if len(jet.times) != len(path.times) or np.abs(jet.times - path.times).max() > 1e-12:
        raise ValueError("jet and path live on different time grids")
    return jet.levels[0] + path.values


# ---------------------------------------------------------------- classical oracle

def classical_solution(b: Callable, path: SamplePath, x, rtol=1e-11, atol=1e-13) -> np.ndarray:
    """y_t = x + int_0^t b(y_r + w_r) dr by an adaptive Runge-Kutta method, one call per
    grid step so the piecewise-linear forcing is smooth inside each call."""
    from scipy.integrate import solve_ivp

    x = np.ravel(np.asarray(x, dtype=float))
    out = np.empty((path.n + 1, len(x)))
    out[0] = x
    t = path.times
    w = path.values
    y = x.copy()
    for i in range(path.n):
        w0, slope = w[i], (w[i + 1] - w[i]) / (t[i + 1] - t[i])
        ti = t[i]
        sol = solve_ivp(lambda s, v: b(v + w0 + slope * (s - ti)), (ti, t[i + 1]), y,
                        method="DOP853", rtol=rtol, atol=atol)
        y = sol.y[:, -1]
        out[i + 1] = y
    return out
