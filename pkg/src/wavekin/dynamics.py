"""Integration of the truncated stochastic three-wave system on ``D_N+``.

One macro step is a Strang splitting: exact phase/noise flow over ``dt/2``,
an RK4 step of the quadratic interaction over ``dt``, exact phase/noise flow
over ``dt/2``. Public functions take fields shaped ``(M,)`` or ``(B, M)``;
internally the batch axis is last.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from . import _kernels
from .grid import FrequencyGrid


class IntegrationError(RuntimeError):
    """Raised when a member violates the conservation monitor."""

    def __init__(self, message, member=None, step=None, time=None):
        super().__init__(message)
        self.member = member
        self.step = step
        self.time = time


class ConsistencyFault(AssertionError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 0.05
    eps: float = 0.1
    substeps: int = 1
    backend: str = "direct"
    conservation_tol: float = 1e-6

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.eps < 0:
            raise ValueError(f"eps must be non-negative, got {self.eps}")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.backend not in ("direct", "fft"):
            raise ValueError(f"unknown convolution backend {self.backend!r}")


@dataclass
class NoiseStream:
    """Brownian increments for a batch of members, one generator per member.

    Members sharing a generator object are driven by the same path; that is how
    coupled pairs share their noise.
    """

    delta: float = 0.0
    rngs: list = field(default_factory=list)

    def __post_init__(self):
        if self.delta < 0:
            raise ValueError("noise amplitude delta must be non-negative")

    @property
    def active(self) -> bool:
        return self.delta > 0

    def increments(self, M, dt_sub):
        # (M, B); a generator listed twice is drawn once and reused
        cache = {}
        cols = []
        for g in self.rngs:
            key = id(g)
            if key not in cache:
                cache[key] = g.standard_normal(M) * math.sqrt(dt_sub)
            cols.append(cache[key])
        return np.stack(cols, axis=1)


@dataclass(frozen=True, eq=False)
class TriadTable:
    """Unique sum triads ``l = a + b`` (``a <= b``) of ``D_N+`` with ``Psi+ > 0``."""

    l: np.ndarray
    a: np.ndarray
    b: np.ndarray
    psi: np.ndarray

    def __len__(self):
        return len(self.l)


_TRIAD_CACHE: dict = {}


def triad_table(grid: FrequencyGrid) -> TriadTable:
    key = id(grid)
    hit = _TRIAD_CACHE.get(key)
    if hit is not None and hit[0] is grid:
        return hit[1]
    idx = grid.index
    M = grid.size
    if M == 0:
        table = TriadTable(*(np.zeros(0, np.int64) for _ in range(3)), np.zeros(0))
    else:
        i0, j0 = idx[:, 0].min(), idx[:, 1].min()
        ni = 2 * idx[:, 0].max() - 2 * i0 + 2
        nj = 2 * idx[:, 1].max() - 2 * j0 + 2
        lut = -np.ones((ni, nj), dtype=np.int64)
        lut[idx[:, 0] - i0, idx[:, 1] - j0] = np.arange(M)
        a, b = np.triu_indices(M)
        si = idx[a, 0] + idx[b, 0] - i0
        sj = idx[a, 1] + idx[b, 1] - j0
        ok = (si >= 0) & (si < ni) & (sj >= 0) & (sj < nj)
        l = np.full(a.shape, -1)
        l[ok] = lut[si[ok], sj[ok]]
        keep = l >= 0
        a, b, l = a[keep], b[keep], l[keep]
        psi = grid.phi[l] * grid.phi[a] * grid.phi[b]
        nz = psi > 0
        table = TriadTable(np.ascontiguousarray(l[nz]), np.ascontiguousarray(a[nz]),
                           np.ascontiguousarray(b[nz]), np.ascontiguousarray(psi[nz]))
    _TRIAD_CACHE.clear()
    _TRIAD_CACHE[key] = (grid, table)
    return table


def _batch(field):
    V = np.asarray(field, dtype=complex)
    single = V.ndim == 1
    # always a fresh array: callers' fields must never be advanced in place
    return np.array(np.atleast_2d(V).T, order="C"), single


def _unbatch(V, single):
    out = V.T
    return out[0].copy() if single else np.ascontiguousarray(out)


class FFTConvolver:
    """Quadratic term via zero-padded FFTs on a power-of-two integer box.

    Mode ``(i, j)`` sits at box position ``(i mod X, j mod Y)``; the box is
    large enough that neither sums nor differences of two indices alias onto
    a mode position.
    """

    def __init__(self, grid: FrequencyGrid):
        grid.require_nonempty()
        idx = grid.index
        imax = int(idx[:, 0].max())
        jext = int(np.abs(idx[:, 1]).max())
        self.shape = (_pow2(2 * imax + 1), _pow2(4 * jext + 1))
        self.ix = idx[:, 0] % self.shape[0]
        self.iy = idx[:, 1] % self.shape[1]
        self.phi = np.asarray(grid.phi)

    def bracket(self, V):
        """``V`` shaped ``(M, B)``; returns the bracket of the quadratic term."""
        B = V.shape[1]
        g = np.zeros((B,) + self.shape, dtype=complex)
        g[:, self.ix, self.iy] = (self.phi[:, None] * V).T
        G = sfft.fft2(g, axes=(1, 2))
        # g*g + 2 conj(g) star g in one inverse transform
        H = G * G + 2.0 * (G.real ** 2 + G.imag ** 2)
        conv = sfft.ifft2(H, axes=(1, 2), overwrite_x=True)
        return (conv[:, self.ix, self.iy].T) * self.phi[:, None]


def _pow2(n):
    return 1 << max(0, int(n - 1).bit_length())


def nonlinear_rhs(field, grid: FrequencyGrid, eps: float, backend: str = "direct"):
    """Time derivative contributed by the quadratic interaction."""
    grid.require_nonempty()
    V, single = _batch(field)
    if backend == "direct":
        t = triad_table(grid)
        out = np.empty_like(V)
        _kernels.triad_sum(V, out, t.l, t.a, t.b, t.psi)
    elif backend == "fft":
        out = FFTConvolver(grid).bracket(V)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    out *= 1j * eps / grid.N
    return _unbatch(out, single)


def check_backends(field, grid, eps, rtol=1e-12):
    """Direct vs FFT quadratic term; raises ``ConsistencyFault`` beyond ``rtol``."""
    d = nonlinear_rhs(field, grid, eps, "direct")
    f = nonlinear_rhs(field, grid, eps, "fft")
    scale = np.max(np.abs(d))
    err = np.max(np.abs(d - f))
    if err > rtol * max(scale, np.finfo(float).tiny):
        raise ConsistencyFault(f"backend mismatch: max error {err:.3e} vs scale {scale:.3e}")
    return err / scale if scale > 0 else 0.0


def phase_step(field, dt_sub, noise, delta, grid: FrequencyGrid):
    """Exact linear-plus-noise flow ``V <- exp(i omega dt + i sqrt(2 delta) dW) V``.

    ``noise`` holds per-mode increments with the shape of ``field`` (or None).
    """
    V = np.asarray(field, dtype=complex)
    arg = grid.omega * dt_sub
    if noise is not None and delta > 0:
        arg = arg + math.sqrt(2 * delta) * np.asarray(noise)
    return V * np.exp(1j * arg)


@dataclass
class Diagnostics:
    mass: float
    quadratic: float
    cubic: float
    hamiltonian: float


def diagnostics(field, grid: FrequencyGrid, eps: float):
    """Mass ``sum k_x |V|^2``, ``Omega_N``, ``K_N`` and ``H = Omega_N + eps K_N``.

    Returns a ``Diagnostics`` for a single field and a dict of arrays for a batch.
    """
    V, single = _batch(field)
    A = (V.real ** 2 + V.imag ** 2)
    mass = (grid.k[:, 0][:, None] * A).sum(axis=0)
    quad = 0.5 * (grid.omega[:, None] * A).sum(axis=0)
    t = triad_table(grid)
    cubic = _kernels.cubic_energy(V, t.l, t.a, t.b, t.psi) / (2 * grid.N)
    ham = quad + eps * cubic
    if single:
        return Diagnostics(float(mass[0]), float(quad[0]), float(cubic[0]), float(ham[0]))
    return {"mass": mass, "quadratic": quad, "cubic": cubic, "hamiltonian": ham}


class _Stepper:
    def __init__(self, grid, cfg: IntegratorConfig, B):
        self.grid = grid
        self.cfg = cfg
        self.scale = cfg.eps / grid.N
        M = grid.size
        self.work = [np.empty((M, B), dtype=complex) for _ in range(5)]
        self.table = triad_table(grid)
        self.fft = FFTConvolver(grid) if cfg.backend == "fft" else None
        self.half = np.exp(1j * grid.omega * (cfg.dt / 2))[:, None]

    def nonlinear(self, V):
        if self.cfg.eps == 0:
            return
        h = self.cfg.dt / self.cfg.substeps
        for _ in range(self.cfg.substeps):
            if self.fft is None:
                t = self.table
                _kernels.rk4_nonlinear(V, h, self.scale, t.l, t.a, t.b, t.psi, *self.work)
            else:
                self._rk4_fft(V, h)

    def _rk4_fft(self, V, h):
        f = lambda X: 1j * self.scale * self.fft.bracket(X)
        k1 = f(V)
        k2 = f(V + 0.5 * h * k1)
        k3 = f(V + 0.5 * h * k2)
        k4 = f(V + h * k3)
        V += h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    def phase(self, V, noise: NoiseStream | None):
        if noise is None or not noise.active:
            V *= self.half
            return
        dW = noise.increments(self.grid.size, self.cfg.dt / 2)
        V *= np.exp(1j * (self.grid.omega[:, None] * (self.cfg.dt / 2)
                          + math.sqrt(2 * noise.delta) * dW))


@dataclass
class Trajectory:
    times: np.ndarray          # (S,)
    actions: np.ndarray        # (S, B, M) values |V_k|^2
    fields: np.ndarray | None  # (S, B, M) when requested
    failed: dict               # member position -> (step, time, drift)
    final: np.ndarray          # (B, M)


def integrate_member(field0, grid: FrequencyGrid, config: IntegratorConfig,
                     noise: NoiseStream | None = None, save_steps=(0,),
                     keep_fields=False, raise_on_failure=True):
    """Advance one member (``(M,)``) or a batch (``(B, M)``) and record snapshots.

    ``save_steps`` are macro-step counts; snapshot ``s`` is taken after
    ``save_steps[s]`` steps, i.e. at time ``save_steps[s] * dt``.
    """
    grid.require_nonempty()
    V, single = _batch(field0)
    B = V.shape[1]
    if noise is not None and noise.active and len(noise.rngs) != B:
        raise ValueError(f"noise stream has {len(noise.rngs)} generators for {B} members")
    save_steps = sorted(int(s) for s in save_steps)
    stepper = _Stepper(grid, config, B)
    kx = grid.k[:, 0][:, None]
    mass0 = (kx * (V.real ** 2 + V.imag ** 2)).sum(axis=0)
    tol = config.conservation_tol
    S = len(save_steps)
    actions = np.empty((S, B, grid.size))
    fields = np.empty((S, B, grid.size), dtype=complex) if keep_fields else None
    failed = {}
    step = 0
    for s, target in enumerate(save_steps):
        while step < target:
            stepper.phase(V, noise)
            stepper.nonlinear(V)
            stepper.phase(V, noise)
            step += 1
        A = V.real ** 2 + V.imag ** 2
        actions[s] = A.T
        if keep_fields:
            fields[s] = V.T
        mass = (kx * A).sum(axis=0)
        drift = np.abs(mass - mass0) / np.where(mass0 > 0, mass0, 1.0)
        bad = np.flatnonzero(~(drift <= tol))
        for r in bad:
            if int(r) not in failed:
                failed[int(r)] = (step, step * config.dt, float(drift[r]))
    if failed and raise_on_failure:
        r, (st, tm, dr) = next(iter(failed.items()))
        raise IntegrationError(f"mass drift {dr:.3e} exceeds tolerance {tol:.1e} for member "
                               f"{r} at step {st} (t={tm:g})", member=r, step=st, time=tm)
    times = np.array(save_steps, dtype=float) * config.dt
    final = _unbatch(V, single)
    if single:
        actions = actions[:, 0]
        fields = fields[:, 0] if keep_fields else None
    return Trajectory(times=times, actions=actions, fields=fields, failed=failed, final=final)
