"""Frequency domain, lattice, dispersion, cutoffs and coarse cells.

Everything here works in Hamiltonian Fourier variables on the half domain
``D+ = (a, b) x (-c, c)``; the mirror half ``D-`` is reached through
``k -> -k`` and never stored.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np


@dataclass(frozen=True)
class DomainSpec:
    """Rectangle ``(a, b) x (-c, c)`` with smoothstep ramps of width ``w``."""

    a: float = 0.5
    b: float = 2.0
    c: float = 1.5
    w: float = 0.15

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise ValueError(f"domain requires 0 < a < b, got a={self.a}, b={self.b}")
        if not self.c > 0:
            raise ValueError(f"domain requires c > 0, got c={self.c}")
        if not (0 < self.w < min(self.b - self.a, 2 * self.c) / 2):
            raise ValueError(
                f"ramp width must satisfy 0 < w < min(b-a, 2c)/2, got w={self.w}")
        if self.b <= 2 * self.a:
            # sum triads n = k + l need b > 2a; the grid itself is still well defined
            warnings.warn(f"b={self.b} <= 2a={2 * self.a}: no quadratic interaction "
                          "survives inside D+", RuntimeWarning, stacklevel=3)

    @property
    def has_triads(self) -> bool:
        return self.b > 2 * self.a

    @property
    def area(self) -> float:
        return (self.b - self.a) * 2 * self.c


@dataclass(frozen=True)
class DispersionParams:
    eta: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")


def _as_xy(k):
    k = np.asarray(k, dtype=float)
    return k[..., 0], k[..., 1]


def omega(k, eta=1.0):
    """KP frequency ``k_x^3 + eta k_y^2 / k_x`` (vectorised over the last axis)."""
    kx, ky = _as_xy(k)
    if np.any(kx == 0):
        raise ValueError("dispersion has a pole at k_x = 0")
    return kx ** 3 + eta * ky ** 2 / kx


def omega_and_grad(k, params=DispersionParams()):
    """Return ``(omega, d omega/d k_x, d omega/d k_y)``."""
    eta = params.eta if isinstance(params, DispersionParams) else float(params)
    kx, ky = _as_xy(k)
    if np.any(kx == 0):
        raise ValueError("dispersion has a pole at k_x = 0")
    w = kx ** 3 + eta * ky ** 2 / kx
    dwx = 3 * kx ** 2 - eta * ky ** 2 / kx ** 2
    dwy = 2 * eta * ky / kx
    return w, dwx, dwy


def gamma(k):
    """Rayleigh-Jeans profile ``1/|k_x|``."""
    kx, _ = _as_xy(k)
    if np.any(kx == 0):
        raise ValueError("gamma is undefined at k_x = 0")
    return 1.0 / np.abs(kx)


def smoothstep(x):
    x = np.clip(x, 0.0, 1.0)
    return x * x * (3.0 - 2.0 * x)


def psi_plus(k, spec: DomainSpec):
    kx, ky = _as_xy(k)
    w = spec.w
    return (smoothstep((kx - spec.a) / w) * smoothstep((spec.b - kx) / w)
            * smoothstep((ky + spec.c) / w) * smoothstep((spec.c - ky) / w))


def psi_cutoff(k, spec: DomainSpec):
    """Full cutoff ``psi = psi+ + psi-`` with ``psi-(kx, ky) = psi+(-kx, ky)``."""
    kx, ky = _as_xy(k)
    return psi_plus(np.stack([kx, ky], -1), spec) + psi_plus(np.stack([-kx, ky], -1), spec)


def phi_weight(k, spec: DomainSpec):
    """``sqrt(|k_x|) psi(k)``: the single-leg factor of the coupling."""
    kx, _ = _as_xy(k)
    return np.sqrt(np.abs(kx)) * psi_cutoff(k, spec)


def phi_plus_weight(k, spec: DomainSpec):
    kx, _ = _as_xy(k)
    return np.sqrt(np.abs(kx)) * psi_plus(k, spec)


def coupling_psi(n, k, l, spec: DomainSpec):
    """Return ``(Psi, Psi+)`` for the triple; zero off the cutoff support."""
    full = phi_weight(n, spec) * phi_weight(k, spec) * phi_weight(l, spec)
    plus = phi_plus_weight(n, spec) * phi_plus_weight(k, spec) * phi_plus_weight(l, spec)
    return full, plus


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Lattice modes ``(i/N, j/N)`` strictly inside ``D+``, lexicographic in ``(i, j)``."""

    spec: DomainSpec
    N: int
    params: DispersionParams
    index: np.ndarray              # (M, 2) integer pairs
    k: np.ndarray                  # (M, 2) frequencies
    omega: np.ndarray
    gamma: np.ndarray
    psi: np.ndarray
    phi: np.ndarray
    slot: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.index)

    @property
    def full_size(self) -> int:
        return 2 * self.size

    @property
    def eta(self) -> float:
        return self.params.eta

    def __len__(self):
        return self.size

    def lookup(self, i: int, j: int) -> int:
        """Storage slot of the mode with integer index ``(i, j)``; -1 if absent."""
        return self.slot.get((int(i), int(j)), -1)

    def require_nonempty(self):
        if self.size == 0:
            raise ValueError(f"frequency grid is empty for N={self.N} and {self.spec}")


def _open_range(lo: float, hi: float, N: int) -> range:
    # integers i with lo < i/N < hi, compared exactly through Fractions
    flo, fhi = Fraction(lo) * N, Fraction(hi) * N
    start = math.floor(flo) + 1
    stop = math.ceil(fhi)
    return range(start, stop)


def build_grid(spec: DomainSpec = DomainSpec(), N: int = 8,
               params: DispersionParams = DispersionParams()) -> FrequencyGrid:
    if int(N) != N or N < 1:
        raise ValueError(f"N must be a positive integer, got {N}")
    N = int(N)
    ii = _open_range(spec.a, spec.b, N)
    jj = _open_range(-spec.c, spec.c, N)
    index = np.array([(i, j) for i in ii for j in jj], dtype=np.int64).reshape(-1, 2)
    k = index / N
    if len(index):
        w, _, _ = omega_and_grad(k, params)
        g = gamma(k)
    else:
        w = g = np.zeros(0)
    psi = psi_cutoff(k, spec) if len(index) else np.zeros(0)
    phi = np.sqrt(np.abs(k[:, 0])) * psi if len(index) else np.zeros(0)
    slot = {(int(i), int(j)): s for s, (i, j) in enumerate(index)}
    for arr in (index, k, w, g, psi, phi):
        arr.setflags(write=False)
    return FrequencyGrid(spec=spec, N=N, params=params, index=index, k=k, omega=w,
                         gamma=g, psi=psi, phi=phi, slot=slot)


@dataclass(frozen=True, eq=False)
class CoarsePartition:
    """Coarse nodes ``K = h * alpha`` and the fine modes of each cell ``[K, K+h)^2``.

    Only cells that contain at least one mode of ``D_N+`` are kept. Averages
    always divide by ``h^2 N^2`` (absent modes count as zero).
    """

    h: float
    alpha: np.ndarray           # (C, 2) integer coarse indices
    nodes: np.ndarray           # (C, 2) K = h * alpha
    cell_of_mode: np.ndarray    # (M,) cell id of every fine mode
    counts: np.ndarray          # (C,) fine modes per cell
    norm: float                 # h^2 N^2

    @property
    def size(self) -> int:
        return len(self.nodes)

    def average(self, values):
        """Cell averages of per-mode values; leading axes are kept."""
        values = np.asarray(values, dtype=float)
        M = len(self.cell_of_mode)
        if values.shape[-1] != M:
            raise ValueError(f"expected {M} per-mode values, got shape {values.shape}")
        flat = values.reshape(-1, M)
        out = np.zeros((flat.shape[0], self.size))
        for r in range(flat.shape[0]):
            out[r] = np.bincount(self.cell_of_mode, weights=flat[r], minlength=self.size)
        return (out / self.norm).reshape(values.shape[:-1] + (self.size,))

    def interior(self, full: int | None = None) -> np.ndarray:
        """Mask of cells holding exactly ``h^2 N^2`` modes."""
        target = round(self.norm) if full is None else full
        return self.counts == target

    def find(self, K) -> int:
        d = np.abs(self.nodes - np.asarray(K, dtype=float)).sum(axis=1)
        hit = np.flatnonzero(d < 1e-12)
        if not len(hit):
            raise KeyError(f"no coarse cell at K={tuple(K)}")
        return int(hit[0])


def coarse_partition(grid: FrequencyGrid, h: float) -> CoarsePartition:
    N = grid.N
    if h < 1.0 / N - 1e-15:
        raise ValueError(f"coarse mesh h={h} is finer than the lattice spacing 1/N={1.0 / N}")
    hq = Fraction(h).limit_denominator(10 ** 9)
    # alpha = floor(i / (N h)), exact
    scale = hq * N
    ax = [math.floor(Fraction(int(i)) / scale) for i in grid.index[:, 0]]
    ay = [math.floor(Fraction(int(j)) / scale) for j in grid.index[:, 1]]
    keys = sorted(set(zip(ax, ay)))
    cell_id = {key: c for c, key in enumerate(keys)}
    cell_of_mode = np.array([cell_id[key] for key in zip(ax, ay)], dtype=np.int64)
    alpha = np.array(keys, dtype=np.int64).reshape(-1, 2)
    counts = np.bincount(cell_of_mode, minlength=len(keys)) if len(keys) else np.zeros(0, int)
    return CoarsePartition(h=float(h), alpha=alpha, nodes=alpha * float(h),
                           cell_of_mode=cell_of_mode, counts=counts,
                           norm=float(h) ** 2 * N ** 2)


def coarse_partition_and_average(grid: FrequencyGrid, h: float, values):
    part = coarse_partition(grid, h)
    return part, part.average(values)
