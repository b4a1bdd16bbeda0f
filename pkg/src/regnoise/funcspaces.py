"""Discrete Littlewood-Paley analysis and weighted Besov norms on gridded fields."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import FrequencyGrid, to_frequency, to_space


def _psi(x):
    out = np.zeros_like(x, dtype=float)
    pos = x > 0
    out[pos] = np.exp(-1.0 / x[pos])
    return out


def smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    a, b = _psi(u), _psi(1.0 - u)
    return a / (a + b)


def bump(r, a, c):
    """Radial cutoff: 1 for r <= a, 0 for r >= c."""
    return 1.0 - smooth_step((np.asarray(r, dtype=float) - a) / (c - a))


class PartitionError(ValueError):
    pass


@dataclass
class DyadicPartition:
    grid: FrequencyGrid
    a: float
    b: float
    c: float
    j_max: int
    chi: np.ndarray           # grid-shaped
    rho: list                 # rho_j for j = 0..j_max, grid-shaped
    tail: np.ndarray          # 1 - chi - sum rho_j: the part of the grid beyond the kept levels
    version: str = "exp-glue-1"

    @property
    def levels(self) -> list:
        return list(range(-1, self.j_max + 1))

    def weight(self, j) -> np.ndarray:
        if j == -1:
            return self.chi
        if j == "tail":
            return self.tail
        if not 0 <= j <= self.j_max:
            raise IndexError(f"level {j} outside -1..{self.j_max}")
        return self.rho[j]

    def residual(self) -> float:
        """max |1 - chi - sum_j rho_j - tail| (partition of unity on the whole grid)."""
        s = self.chi + sum(self.rho) + self.tail
        return float(np.abs(1.0 - s).max())

    def residual_resolved(self) -> float:
        """max |1 - chi - sum_j rho_j| over grid points below the top-level cutoff."""
        r = np.sqrt(self.grid.norm2)
        inside = r <= 2.0 ** (self.j_max + 1) * self.a
        s = self.chi + sum(self.rho)
        return float(np.abs(1.0 - s)[inside].max())

    def tail_support(self) -> float:
        """Fraction of grid points touched by the dropped tail."""
        return float(np.mean(self.tail > 0))

    def check_invariants(self) -> dict:
        overlaps_chi = [float(np.abs(self.chi * self.rho[j]).max()) for j in range(1, self.j_max + 1)]
        far = [float(np.abs(self.rho[i] * self.rho[j]).max())
               for i in range(self.j_max + 1) for j in range(i + 2, self.j_max + 1)]
        return {"residual": self.residual_resolved(),
                "chi_rho_overlap": max(overlaps_chi, default=0.0),
                "far_block_overlap": max(far, default=0.0)}

    def to_csv_rows(self):
        """|z|, chi, rho_0..rho_J, tail sampled along the first axis (z >= 0)."""
        g = self.grid
        c = (g.m - 1) // 2
        idx = (slice(c, None),) + (c,) * (g.d - 1)
        cols = [g.axis[c:], self.chi[idx]] + [r[idx] for r in self.rho] + [self.tail[idx]]
        header = ["z", "chi"] + [f"rho_{j}" for j in range(self.j_max + 1)] + ["tail"]
        return header, np.column_stack(cols)


def build_partition(grid: FrequencyGrid, a: float = 0.75, b: float = 2.0, c: float = 1.0) -> DyadicPartition:
    """chi = bump(a, c), rho = chi(./2) - chi, so rho lives on a <= |z| <= 2c = b."""
    if not 0 < a < c:
        raise PartitionError(f"need 0 < a < c for the low-pass transition, got a={a}, c={c}")
    if not np.isclose(b, 2 * c):
        raise PartitionError(f"annulus outer radius must be b = 2c = {2 * c} so that the blocks "
                             f"telescope to one, got b={b}")
    if not c < 2 * a:
        raise PartitionError(f"need c < 2a so that chi and rho_j (j >= 1) have disjoint support "
                             f"and non-neighbouring annuli do not meet, got a={a}, c={c}")
    j_max = int(np.floor(np.log2(grid.z_max / b)))
    if j_max < 0:
        raise PartitionError(f"z_max={grid.z_max} is below the first annulus radius b={b}")
    r = np.sqrt(grid.norm2)
    chi = bump(r, a, c)
    levels = [bump(r / 2.0 ** (j + 1), a, c) for j in range(j_max + 2)]
    rho = []
    prev = chi
    for j in range(j_max + 1):
        rho.append(levels[j] - prev)
        prev = levels[j]
    tail = 1.0 - prev
    return DyadicPartition(grid, a, b, c, j_max, chi, rho, tail)


def _check_field(field_, part):
    f = np.asarray(field_)
    if f.shape != part.grid.shape:
        raise ValueError(f"field shape {f.shape} does not match the partition grid {part.grid.shape}")
    return f


def spectral_blocks(fhat: np.ndarray, part: DyadicPartition, include_tail: bool = False):
    """Real-space blocks from a transform already on the partition grid."""
    out = [to_space(part.grid, part.weight(j) * fhat).real for j in part.levels]
    if include_tail:
        out.append(to_space(part.grid, part.tail * fhat).real)
    return out


def lp_block(field_, part: DyadicPartition, j) -> np.ndarray:
    """Delta_j f on the dual spatial grid; j = -1 is the low-pass block, 'tail' the
    part of the grid spectrum beyond the last kept level."""
    f = _check_field(field_, part)
    fhat = to_frequency(part.grid, f)
    out = to_space(part.grid, part.weight(j) * fhat)
    return out.real if np.isrealobj(f) else out


def reconstruct(field_, part: DyadicPartition) -> np.ndarray:
    f = _check_field(field_, part)
    fhat = to_frequency(part.grid, f)
    total = sum(spectral_blocks(fhat, part, include_tail=True))
    return total


def bracket(points: np.ndarray) -> np.ndarray:
    """<x> = (1 + |x|^2)^{1/2}."""
    return np.sqrt(1.0 + np.sum(points**2, axis=-1))


def lp_norm(values: np.ndarray, p: float, cell: float) -> float:
    v = np.abs(values)
    if np.isinf(p):
        return float(v.max())
    return float((np.sum(v**p) * cell) ** (1.0 / p))


@dataclass
class BesovReport:
    alpha: float
    p: float
    q: float
    kappa: float
    levels: list
    block_norms: np.ndarray
    total: float
    tail_norm: float = 0.0
    dropped_levels: str = ""

    def to_dict(self):
        def num(x):
            return "inf" if np.isinf(x) else float(x)
        return {"alpha": self.alpha, "p": num(self.p), "q": num(self.q), "kappa": self.kappa,
                "levels": self.levels, "block_norms": [float(v) for v in self.block_norms],
                "total": self.total, "tail_norm": self.tail_norm, "dropped": self.dropped_levels}


def aggregate(levels, block_norms, alpha, q) -> float:
    w = 2.0 ** (np.asarray(levels, dtype=float) * alpha) * np.asarray(block_norms)
    if np.isinf(q):
        return float(w.max())
    return float(np.sum(w**q) ** (1.0 / q))


def besov_norm(field_, part: DyadicPartition, alpha: float, p: float = np.inf, q: float = np.inf,
               kappa: float = 0.0) -> BesovReport:
    """(sum_j (2^{j alpha} ||<x>^kappa Delta_j f||_{L^p})^q)^{1/q} over j = -1..J."""
    if not (p >= 1 and q >= 1):
        raise ValueError("p and q must lie in [1, inf]")
    f = _check_field(field_, part)
    g = part.grid
    fhat = to_frequency(g, f)
    wt = bracket(g.x_points).reshape(g.shape) ** kappa
    blocks = spectral_blocks(fhat, part, include_tail=True)
    norms = np.array([lp_norm(wt * b, p, g.dx**g.d) for b in blocks])
    total = aggregate(part.levels, norms[:-1], alpha, q)
    return BesovReport(alpha, p, q, kappa, part.levels, norms[:-1], total,
                       tail_norm=float(norms[-1]),
                       dropped_levels=f"> {part.j_max} (grid cutoff {g.z_max})")


def holder_norm(field_, part, alpha, kappa=0.0) -> float:
    """C^alpha = B^alpha_{inf,inf} norm."""
    return besov_norm(field_, part, alpha, np.inf, np.inf, kappa).total
