"""Spectral drifts and the averaging operator T^w_{s,t} b(x) = int_s^t b(x + w_r) dr."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .grids import FrequencyGrid, to_space
from .occupation import OccupationSpectrum

KINDS = ("comb", "gaussian", "dirac", "dirac_derivative", "gridded", "classical")


@dataclass(frozen=True)
class SpectralDrift:
    """Scalar tempered distribution b given through its Fourier symbol.

    ``params`` depend on ``kind``:
      comb:             atoms = ((z, c), ...) with b(x) = sum c exp(i z.x)
      gaussian:         amp, sigma, center
      dirac:            center
      dirac_derivative: axis (b = d/dx_axis delta)
      gridded:          grid, values (symbol on the grid)
      classical:        funcs = (b, b', b'', ...) pointwise callables, d = 1
    ``eps`` is a Gaussian mollification scale applied to the symbol.
    """

    kind: str
    params: dict
    d: int = 1
    kappa: float | None = 0.0
    besov: tuple | None = None
    eps: float = 0.0
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown drift kind '{self.kind}'")
        if self.kind == "gridded":
            g = self.params["grid"]
            vals = np.asarray(self.params["values"])
            if vals.shape != g.shape:
                raise ValueError("gridded symbol does not match its grid")
            flipped = np.conj(vals[(slice(None, None, -1),) * g.d])
            if np.abs(flipped - vals).max() > 1e-10 * max(1.0, np.abs(vals).max()):
                raise ValueError("gridded symbol is not Hermitian; the drift would not be real")
            if self.kappa is None:
                raise ValueError("gridded symbols must declare their weight exponent kappa")
        if self.kind == "classical" and self.d != 1:
            raise ValueError("classical drifts are scalar functions of one variable")

    # ------------------------------------------------------------ constructors
    @classmethod
    def comb(cls, atoms, d=1, name="comb"):
        atoms = tuple((tuple(np.atleast_1d(np.asarray(z, float))), complex(c)) for z, c in atoms)
        return cls("comb", {"atoms": atoms}, d, 0.0, name=name)

    @classmethod
    def sine(cls, freq=1.0, amp=1.0, d=1, axis=0):
        z = np.zeros(d)
        z[axis] = freq
        return cls.comb([(z, amp / 2j), (-z, -amp / 2j)], d, name="sin")

    @classmethod
    def cosine(cls, freq=1.0, amp=1.0, d=1, axis=0):
        z = np.zeros(d)
        z[axis] = freq
        return cls.comb([(z, amp / 2), (-z, amp / 2)], d, name="cos")

    @classmethod
    def constant(cls, value=1.0, d=1):
        return cls.comb([(np.zeros(d), value)], d, name="constant")

    @classmethod
    def gaussian(cls, amp=1.0, sigma=1.0, center=0.0, d=1):
        c = tuple(np.broadcast_to(np.asarray(center, float), (d,)))
        return cls("gaussian", {"amp": float(amp), "sigma": float(sigma), "center": c}, d, 0.0, name="gaussian")

    @classmethod
    def dirac(cls, center=0.0, d=1):
        c = tuple(np.broadcast_to(np.asarray(center, float), (d,)))
        return cls("dirac", {"center": c}, d, 0.0, name="dirac")

    @classmethod
    def dirac_derivative(cls, axis=0, d=1):
        return cls("dirac_derivative", {"axis": int(axis)}, d, 0.0, name="dirac_derivative")

    @classmethod
    def gridded(cls, grid: FrequencyGrid, values, kappa: float, besov=None):
        return cls("gridded", {"grid": grid, "values": np.asarray(values, complex)}, grid.d, kappa, besov, name="gridded")

    @classmethod
    def classical(cls, funcs: Sequence[Callable], kappa=0.0, name="classical"):
        return cls("classical", {"funcs": tuple(funcs)}, 1, kappa, name=name)

    # ------------------------------------------------------------ symbol access
    @property
    def is_classical(self) -> bool:
        return self.kind == "classical"

    @property
    def is_comb(self) -> bool:
        return self.kind == "comb"

    def mollify(self, eps: float) -> "SpectralDrift":
        """Convolution with a centred Gaussian of standard deviation eps."""
        if self.is_classical:
            raise ValueError("classical drifts are not mollified spectrally")
        if eps < 0:
            raise ValueError("eps must be nonnegative")
        return replace(self, eps=float(np.hypot(self.eps, eps)))

    def _damp(self, zp):
        if self.eps == 0:
            return 1.0
        return np.exp(-0.5 * self.eps**2 * np.sum(zp**2, axis=-1))

    def symbol(self, zp: np.ndarray) -> np.ndarray:
        """b_hat at points zp of shape (npts, d); comb drifts have no pointwise symbol."""
        zp = np.atleast_2d(zp)
        k = self.kind
        if k == "gaussian":
            a, s = self.params["amp"], self.params["sigma"]
            c = np.asarray(self.params["center"])
            out = a * (2 * np.pi * s * s) ** (self.d / 2) * np.exp(-0.5 * s * s * np.sum(zp**2, axis=-1)) \
                * np.exp(-1j * zp @ c)
        elif k == "dirac":
            out = np.exp(-1j * zp @ np.asarray(self.params["center"]))
        elif k == "dirac_derivative":
            out = 1j * zp[:, self.params["axis"]]
        else:
            raise ValueError(f"no pointwise symbol for '{k}' drifts")
        return out * self._damp(zp)

    def atoms(self):
        """(zp, c) arrays for comb drifts, mollifier applied."""
        if not self.is_comb:
            raise ValueError("not a comb drift")
        zp = np.array([z for z, _ in self.params["atoms"]], dtype=float).reshape(-1, self.d)
        c = np.array([c for _, c in self.params["atoms"]], dtype=complex)
        return zp, c * self._damp(zp)

    def on_grid(self, grid: FrequencyGrid) -> np.ndarray:
        """Symbol sampled on the grid (comb atoms become discrete deltas of weight (2 pi/dz)^d c)."""
        if grid.d != self.d:
            raise ValueError("drift and grid dimensions differ")
        if self.is_classical:
            raise ValueError("classical drifts have no grid symbol")
        if self.kind == "gridded":
            if self.params["grid"] != grid:
                raise ValueError("gridded symbol lives on a different grid")
            return np.asarray(self.params["values"]) * self._damp(grid.points).reshape(grid.shape) \
                if self.eps else np.asarray(self.params["values"])
        if self.is_comb:
            out = np.zeros(grid.shape, dtype=complex)
            zp, c = self.atoms()
            for z, ck in zip(zp, c):
                out[grid.index_of(z)] += ck * (2 * np.pi / grid.dz) ** self.d
            return out
        return self.symbol(grid.points).reshape(grid.shape)

    def coefficients(self, grid: FrequencyGrid):
        """(zp, coef) with T b(x) = Re sum coef * mu_hat(z) exp(i z.x) over the active points."""
        if self.is_comb:
            zp, c = self.atoms()
            for z in zp:
                grid.index_of(z)
            return zp, c
        sym = self.on_grid(grid).ravel()
        keep = np.abs(sym) > 0
        return grid.points[keep], sym[keep] * grid.cell / (2 * np.pi) ** self.d

    def evaluate(self, x, order: int = 0):
        """Pointwise value (or derivative) for drifts that are functions."""
        x = np.asarray(x, dtype=float)
        if self.is_classical:
            f = self.params["funcs"]
            if order >= len(f):
                raise ValueError(f"classical drift has derivatives up to order {len(f) - 1}")
            return f[order](x)
        if self.is_comb:
            zp, c = self.atoms()
            xs = x.reshape(-1, self.d)
            ph = np.exp(1j * xs @ zp.T) * c
            fac = (1j * zp[:, 0]) ** order if self.d == 1 else 1.0
            return (ph * fac).sum(axis=1).real.reshape(x.shape[:-1] if self.d > 1 else x.shape)
        if self.kind == "gaussian" and order == 0 and self.eps == 0:
            a, s = self.params["amp"], self.params["sigma"]
            c = np.asarray(self.params["center"])
            xs = x.reshape(-1, self.d)
            return (a * np.exp(-0.5 * np.sum((xs - c) ** 2, axis=1) / s**2)).reshape(
                x.shape[:-1] if self.d > 1 else x.shape)
        raise ValueError(f"pointwise evaluation unavailable for '{self.kind}'")


# ---------------------------------------------------------------- averaged fields

def _jet_factor(zp: np.ndarray, order: int) -> np.ndarray:
    """(i z)^{(x) order} for each point: shape (npts,) + (d,)*order."""
    out = np.ones(zp.shape[0], dtype=complex)
    for _ in range(order):
        out = out[..., None] * (1j * zp).reshape((zp.shape[0],) + (1,) * (out.ndim - 1) + (zp.shape[1],))
    return out


@dataclass
class AveragedField:
    grid: FrequencyGrid
    windows: list                   # [(s, t), ...]
    jets: list                      # jets[l]: (n_windows,) + (d,)*l + grid.shape
    kappa: float | None = 0.0
    tail_fraction: float = 0.0

    @property
    def order(self) -> int:
        return len(self.jets) - 1

    def jet(self, l: int, w: int = 0) -> np.ndarray:
        return self.jets[l][w]


def tail_fraction(drift: SpectralDrift, spectrum: OccupationSpectrum) -> float:
    """Share of |b_hat mu_hat| carried by the outer quarter shell of the grid."""
    g = spectrum.grid
    prod = np.abs(drift.on_grid(g) * spectrum.values)
    tot = prod.sum()
    if tot == 0:
        return 0.0
    outer = np.max(np.abs(g.points), axis=1).reshape(g.shape) > 0.75 * g.z_max
    return float(prod[outer].sum() / tot)


def average(drift: SpectralDrift, spectra, k: int = 0, max_order: int = 4) -> AveragedField:
    """Jets 0..k of T^w_{s,t} b on the dual spatial grid, one per spectrum."""
    if isinstance(spectra, OccupationSpectrum):
        spectra = [spectra]
    if not spectra:
        raise ValueError("need at least one spectrum")
    if k > max_order:
        raise ValueError(f"jet order {k} exceeds the cap {max_order}")
    if drift.is_classical:
        raise ValueError("classical drifts are averaged along a path, not through a spectrum")
    g = spectra[0].grid
    if any(s.grid != g for s in spectra):
        raise ValueError("spectra must share a grid")
    bhat = drift.on_grid(g)
    jets = [[] for _ in range(k + 1)]
    worst = 0.0
    for sp in spectra:
        if sp.mass == 0:
            for l in range(k + 1):
                jets[l].append(np.zeros((g.d,) * l + g.shape))
            continue
        if not drift.is_comb:
            worst = max(worst, tail_fraction(drift, sp))
        prod = (bhat * sp.values).ravel()
        for l in range(k + 1):
            fac = _jet_factor(g.points, l)  # (npts,) + (d,)*l
            vals = prod.reshape((-1,) + (1,) * l) * fac
            vals = np.moveaxis(vals, 0, -1).reshape((g.d,) * l + g.shape)
            axes = tuple(range(l, l + g.d))
            out = np.fft.fftshift(np.fft.ifftn(np.fft.ifftshift(vals, axes=axes), axes=axes), axes=axes)
            jets[l].append((out * (g.m * g.dz / (2 * np.pi)) ** g.d).real)
    if worst > 0.1:
        warnings.warn(f"drift not resolved by the frequency grid: {worst:.1%} of |b_hat mu_hat| "
                      "sits in the outer shell", RuntimeWarning)
    return AveragedField(g, [tuple(s.window) for s in spectra], [np.stack(j) for j in jets],
                         drift.kappa, worst)


@dataclass
class HolderTimeReport:
    gamma: float
    kappa: float
    value: float
    per_order: list        # [(order, value, window)]
    argmax_window: tuple


def holder_in_time_norm(field_: AveragedField, gamma: float, alpha: float = 0.0,
                        kappa: float = 0.0) -> HolderTimeReport:
    """sup over windows and box of |grad^l T_{s,t} b| <x>^-kappa / |t-s|^gamma, l <= max(alpha, 0)."""
    g = field_.grid
    wt = (1.0 + np.sum(g.x_points**2, axis=1).reshape(g.shape)) ** (-kappa / 2)
    orders = [l for l in range(field_.order + 1) if l <= max(alpha, 0.0)] or [0]
    per = []
    for l in orders:
        best, arg = 0.0, None
        for wi, (s, t) in enumerate(field_.windows):
            if t <= s:
                continue
            J = field_.jets[l][wi]
            mag = np.sqrt(np.sum(J**2, axis=tuple(range(l)))) if l else np.abs(J)
            v = float((mag * wt).max() / (t - s) ** gamma)
            if v > best:
                best, arg = v, (s, t)
        per.append((l, best, arg))
    top = max(per, key=lambda r: r[1])
    return HolderTimeReport(gamma, kappa, top[1], per, top[2])


@dataclass
class MollificationReport:
    eps: list
    differences: list
    monotone: bool
    flagged: list
    floor: float


def mollify_convergence(drift: SpectralDrift, eps_seq, spectra, gamma: float = 0.6, alpha: float = 0.0,
                        kappa: float = 0.0, floor: float = 1e-12) -> MollificationReport:
    """||T b - T b_eps|| in the weighted time-Holder norm for decreasing eps."""
    eps_seq = [float(e) for e in eps_seq]
    if any(b >= a for a, b in zip(eps_seq, eps_seq[1:])):
        raise ValueError("mollifier scales must decrease")
    k = int(max(alpha, 0.0))
    base = average(drift, spectra, k)
    diffs = []
    for e in eps_seq:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            other = average(drift.mollify(e), spectra, k)
        delta = AveragedField(base.grid, base.windows, [a - b for a, b in zip(base.jets, other.jets)], kappa)
        diffs.append(holder_in_time_norm(delta, gamma, alpha, kappa).value)
    flagged = [i for i in range(1, len(diffs)) if diffs[i] > diffs[i - 1] and diffs[i] > floor]
    return MollificationReport(eps_seq, diffs, not flagged, flagged, floor)


# ---------------------------------------------------------------- pointwise evaluation

def pointwise_jets(zp: np.ndarray, P: np.ndarray, X: np.ndarray, order: int, chunk: int = 1 << 21):
    """Re sum_z P[i, z] (i z)^{(x) order} exp(i z.X[i]) for each row i.

    P: (rows, npts) complex; X: (rows, d). Returns (rows,) + (d,)*order.
    """
    rows, npts = P.shape
    d = zp.shape[1]
    fac = _jet_factor(zp, order).reshape(npts, -1)  # (npts, d**order)
    out = np.empty((rows, fac.shape[1]))
    step = max(1, chunk // max(npts, 1))
    for a in range(0, rows, step):
        b = min(rows, a + step)
        E = P[a:b] * np.exp(1j * (X[a:b] @ zp.T))
        out[a:b] = (E @ fac).real
    return out.reshape((rows,) + (d,) * order)
