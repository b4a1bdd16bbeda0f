"""Occupation-measure spectra, local-time reconstruction and space-time regularity fits."""
from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .gaussmodels import SamplePath
from .grids import FrequencyGrid, to_space

QUADRATURES = ("left", "trapezoid", "linear")
_ALIASES = {"leftriemann": "left", "left_riemann": "left", "trapz": "trapezoid",
            "piecewise_linear": "linear", "piecewiselinear": "linear"}


def _quad_name(q: str) -> str:
    q = _ALIASES.get(q.lower(), q.lower())
    if q not in QUADRATURES:
        raise ValueError(f"unknown quadrature '{q}', expected one of {QUADRATURES}")
    return q


@dataclass
class OccupationSpectrum:
    grid: FrequencyGrid
    window: tuple  # (s, t)
    values: np.ndarray  # complex, grid.shape
    quadrature: str = "left"
    path_range: np.ndarray | None = None  # (2, d) min / max of the path over the window

    @property
    def mass(self) -> float:
        return float(self.window[1] - self.window[0])

    def __add__(self, other: "OccupationSpectrum") -> "OccupationSpectrum":
        if other.grid != self.grid:
            raise ValueError("grid mismatch")
        if not np.isclose(self.window[1], other.window[0]):
            raise ValueError("windows are not adjacent")
        rng = None
        if self.path_range is not None and other.path_range is not None:
            rng = np.stack([np.minimum(self.path_range[0], other.path_range[0]),
                            np.maximum(self.path_range[1], other.path_range[1])])
        return OccupationSpectrum(self.grid, (self.window[0], other.window[1]),
                                  self.values + other.values, self.quadrature, rng)


def _phase_block(w: np.ndarray, dw: np.ndarray, dt: float, zp: np.ndarray, quad: str) -> np.ndarray:
    """Per-step contributions, shape (steps, npts)."""
    theta0 = w @ zp.T
    e0 = np.exp(1j * theta0)
    if quad == "left":
        return e0 * dt
    dtheta = dw @ zp.T
    if quad == "trapezoid":
        return 0.5 * dt * (e0 + e0 * np.exp(1j * dtheta))
    # exact integral of exp(i z.w) along the linear interpolant
    return dt * e0 * np.exp(0.5j * dtheta) * np.sinc(dtheta / (2 * np.pi))


def step_spectra(path: SamplePath, grid: FrequencyGrid, quadrature: str = "left",
                 i0: int = 0, i1: int | None = None, zp: np.ndarray | None = None) -> np.ndarray:
    """mu_hat over each single step [t_i, t_{i+1}], i in [i0, i1), shape (steps, npts)."""
    quad = _quad_name(quadrature)
    i1 = path.n if i1 is None else i1
    zp = grid.points if zp is None else zp
    w = path.values[i0:i1]
    dw = path.values[i0 + 1:i1 + 1] - w
    return _phase_block(w, dw, path.dt, zp, quad)


def occupation_spectrum(path: SamplePath, s: float, t: float, grid: FrequencyGrid | None = None,
                        quadrature: str = "left") -> OccupationSpectrum:
    """mu_hat_{s,t}(z) = int_s^t exp(i z.w_r) dr on the frequency grid."""
    grid = grid or FrequencyGrid.default(path.d)
    if grid.d != path.d:
        raise ValueError("grid and path dimensions differ")
    i, j = path.index(s), path.index(t)
    if not i < j:
        raise ValueError("need s < t")
    quad = _quad_name(quadrature)
    npts = grid.points.shape[0]
    acc = np.zeros(npts, dtype=complex)
    chunk = max(1, 4_000_000 // npts)
    for a in range(i, j, chunk):
        b = min(j, a + chunk)
        acc += step_spectra(path, grid, quad, a, b).sum(axis=0)
    seg = path.values[i:j + 1]
    rng = np.stack([seg.min(axis=0), seg.max(axis=0)])
    # keep the zero mode exact: the phases there are exactly one
    zero = grid.index_of(np.zeros(grid.d))
    vals = acc.reshape(grid.shape)
    vals[zero] = (j - i) * path.dt
    return OccupationSpectrum(grid, (path.times[i], path.times[j]), vals, quad, rng)


@dataclass
class CumulativeSpectra:
    """C[k] = mu_hat_{t_0, t_k}; any window spectrum is C[j] - C[i] (exactly additive)."""

    path: SamplePath
    grid: FrequencyGrid
    table: np.ndarray  # (n+1, npts)
    quadrature: str

    def window(self, i: int, j: int) -> np.ndarray:
        return (self.table[j] - self.table[i]).reshape(self.grid.shape)

    def spectrum(self, i: int, j: int) -> OccupationSpectrum:
        seg = self.path.values[i:j + 1]
        return OccupationSpectrum(self.grid, (self.path.times[i], self.path.times[j]),
                                  self.window(i, j), self.quadrature,
                                  np.stack([seg.min(axis=0), seg.max(axis=0)]))


def cumulative_spectra(path: SamplePath, grid: FrequencyGrid | None = None,
                       quadrature: str = "left") -> CumulativeSpectra:
    grid = grid or FrequencyGrid.default(path.d)
    quad = _quad_name(quadrature)
    steps = step_spectra(path, grid, quad)
    table = np.zeros((path.n + 1, steps.shape[1]), dtype=complex)
    np.cumsum(steps, axis=0, out=table[1:])
    return CumulativeSpectra(path, grid, table, quad)


# ---------------------------------------------------------------- local time

@dataclass
class LocalTimeField:
    grid: FrequencyGrid
    window: tuple
    values: np.ndarray  # real, grid.shape, on the dual spatial grid

    @property
    def x_axis(self):
        return self.grid.x_axis

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.grid.dx**self.grid.d)


def local_time(spectrum: OccupationSpectrum) -> LocalTimeField:
    """Inverse transform of the occupation spectrum onto the dual spatial grid."""
    g = spectrum.grid
    if spectrum.mass == 0:
        return LocalTimeField(g, spectrum.window, np.zeros(g.shape))
    if spectrum.path_range is not None:
        extent = float(np.max(spectrum.path_range[1] - spectrum.path_range[0]))
        if extent >= 0.5 * g.period:
            warnings.warn(f"path range {extent:.3g} exceeds half the spatial period {g.period:.3g}; "
                          "reconstruction wraps around", RuntimeWarning)
    lhat = np.conj(spectrum.values)
    raw = to_space(g, lhat)
    vmax = np.abs(raw).max()
    imag = np.abs(raw.imag).max()
    if imag > 1e-8 * vmax:
        warnings.warn(f"imaginary residue {imag:.2e} in reconstructed local time", RuntimeWarning)
    L = raw.real
    if L.min() < -0.05 * L.max():
        warnings.warn(f"local time negativity {L.min():.3g} (max {L.max():.3g}): "
                      "frequency cutoff too aggressive", RuntimeWarning)
    return LocalTimeField(g, spectrum.window, L)


def occupation_histogram(path: SamplePath, s: float, t: float, edges: np.ndarray) -> np.ndarray:
    """Time-per-bin density of the piecewise-linear path (d=1)."""
    i, j = path.index(s), path.index(t)
    w = path.values[i:j + 1, 0]
    dt = path.dt
    out = np.zeros(len(edges) - 1)
    lo, hi = np.minimum(w[:-1], w[1:]), np.maximum(w[:-1], w[1:])
    for a, b in zip(lo, hi):
        if b - a < 1e-300:
            k = np.searchsorted(edges, a, side="right") - 1
            if 0 <= k < len(out):
                out[k] += dt
            continue
        overlap = np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0, None)
        out += dt * overlap / (b - a)
    return out / np.diff(edges)


# ---------------------------------------------------------------- norms and fits

def sobolev_norm(spectrum: OccupationSpectrum, lam: float) -> float:
    """(sum |mu_hat|^2 (1+|z|^2)^lam dz^d)^{1/2} on the grid."""
    g = spectrum.grid
    wt = (1.0 + g.norm2) ** lam
    return float(np.sqrt(np.sum(np.abs(spectrum.values) ** 2 * wt) * g.cell))


def dyadic_windows(n: int, js=range(2, 8), n_starts: int = 16):
    """(j, k, starts) with window length k = n >> j steps and evenly spread starts."""
    out = []
    for j in js:
        k = n >> j
        if k < 1:
            raise ValueError(f"level {j} is finer than the grid")
        starts = np.unique(np.round(np.linspace(0, n - k, n_starts)).astype(int))
        out.append((j, k, starts))
    return out


@dataclass
class ExponentReport:
    lam: float
    gamma_hat: float
    stderr: float
    n_paths: int
    windows: list
    per_path: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    sup_norms: np.ndarray = field(repr=False)  # (n_paths, scales)

    def to_dict(self):
        return {"lambda": self.lam, "gamma_hat": self.gamma_hat, "stderr": self.stderr,
                "n_paths": self.n_paths, "windows": self.windows}

    def table(self):
        """(h, mean sup-norm) rows."""
        return np.column_stack([self.h, self.sup_norms.mean(axis=0)])


def _path_sup_norms(path, lams, grid, wins, quadrature):
    cs = cumulative_spectra(path, grid, quadrature)
    weights = [(1.0 + grid.norm2.ravel()) ** l * grid.cell for l in lams]
    out = np.zeros((len(lams), len(wins)))
    for c, (_, k, starts) in enumerate(wins):
        spec = cs.table[starts + k] - cs.table[starts]
        p2 = np.abs(spec) ** 2
        for a, wt in enumerate(weights):
            out[a, c] = np.sqrt(p2 @ wt).max()
    return out


def holder_exponent(paths, lam, js=range(2, 8), n_starts: int = 16, grid=None,
                    quadrature: str = "left", workers: int = 1):
    """Batch fit of the time exponent of s -> mu_{s,s+h} in H^lam.

    Per path: slope of log sup_s ||mu_{s,s+h}||_{H^lam} against log h; the
    report carries the batch mean and its standard error. ``lam`` may be a
    list, in which case a list of reports (one per value) is returned.
    """
    lams = list(np.atleast_1d(lam).astype(float))
    paths = list(paths)
    if len(paths) < 20:
        raise ValueError(f"need at least 20 paths for an exponent fit, got {len(paths)}")
    js = list(js)
    if len(js) < 2:
        raise ValueError("need at least two dyadic scales")
    n = paths[0].n
    if any(p.n != n for p in paths):
        raise ValueError("paths must share a grid")
    grid = grid or FrequencyGrid.default(paths[0].d)
    wins = dyadic_windows(n, js, n_starts)
    T = paths[0].times[-1] - paths[0].times[0]
    h = np.array([T * k / n for _, k, _ in wins])

    def run(p):
        return _path_sup_norms(p, lams, grid, wins, quadrature)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            sups = list(ex.map(run, paths))
    else:
        sups = [run(p) for p in paths]
    sups = np.stack(sups)  # (paths, lams, scales)
    X = np.log(h)
    reports = []
    for a, l in enumerate(lams):
        Y = np.log(sups[:, a, :])
        slopes = np.polyfit(X, Y.T, 1)[0]
        reports.append(ExponentReport(l, float(slopes.mean()), float(slopes.std(ddof=1) / np.sqrt(len(slopes))),
                                      len(paths), [int(j) for j in js], slopes, h, sups[:, a, :]))
    return reports[0] if np.ndim(lam) == 0 else reports


@dataclass
class InterpolationReport:
    alpha: float
    gamma: float
    kappa: float
    lhs: float
    time_factor: float
    space_factor: float

    @property
    def rhs(self) -> float:
        return self.time_factor**self.gamma * self.space_factor ** (1 - self.gamma)

    @property
    def ratio(self) -> float:
        return self.lhs / self.rhs


def interpolation_check(path: SamplePath, alpha: float, gamma: float, grid=None, partition=None,
                        js=range(0, 6), n_starts: int = 8) -> InterpolationReport:
    """Compare ||L||_{C^gamma C^alpha} with the product of its time-Lipschitz C^{-d}
    norm and its spatial C^kappa norm, kappa = (alpha + gamma d)/(1 - gamma), on
    Littlewood-Paley block suprema over a dyadic window set."""
    from .funcspaces import build_partition, spectral_blocks

    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0,1); gamma -> 1 sends kappa to infinity")
    grid = grid or FrequencyGrid.default(path.d)
    part = partition or build_partition(grid)
    d = grid.d
    kappa = (alpha + gamma * d) / (1 - gamma)
    cs = cumulative_spectra(path, grid)
    lhs = tf = sf = 0.0
    levels = np.array(part.levels, dtype=float)
    for _, k, starts in dyadic_windows(path.n, js, n_starts):
        h = k * path.dt
        for a in starts:
            lhat = np.conj(cs.window(a, a + k))
            sup = np.array([np.abs(b).max() for b in spectral_blocks(lhat, part)])
            lhs = max(lhs, np.max(2.0 ** (levels * alpha) * sup) / h**gamma)
            tf = max(tf, np.max(2.0 ** (-levels * d) * sup) / h)
            sf = max(sf, np.max(2.0 ** (levels * kappa) * sup))
    return InterpolationReport(alpha, gamma, kappa, lhs, tf, sf)
