"""Linearized three-wave kinetic equation on a uniform mesh over ``D+``.

The operator acting on the fluctuation density ``f`` is assembled once per
form (exact-resonant or Lorentzian) as a dense matrix from the active nodes
to all mesh nodes, then advanced in the rescaled time ``tau`` with RK4.
Values at ``D-`` points come from the even extension ``f(-m) = f(m)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .grid import DispersionParams, DomainSpec, phi_weight, psi_plus

log = logging.getLogger(__name__)

CONVENTIONS = {"stationary": 0, "as_printed": 1}


class KineticInstability(RuntimeError):
    pass


@dataclass(frozen=True)
class KernelConvention:
    """Sign pairing of the full-domain kernels.

    ``"stationary"`` pairs ``sign(m_x p_x)`` with the ``1/r(p)`` term, which is the
    pairing under which ``gamma = 1/|k_x|`` is a pointwise stationary state;
    ``"as_printed"`` is the literal alternative, kept for comparison only.
    """

    name: str = "stationary"

    def __post_init__(self):
        if self.name not in CONVENTIONS:
            raise ValueError(f"unknown kernel convention {self.name!r}")

    @property
    def code(self) -> int:
        return CONVENTIONS[self.name]


@dataclass(frozen=True)
class QuadratureSettings:
    n_sigma: int = 400          # midpoint nodes per piece of the curve parameter set
    dpx: float = 0.01           # Lorentzian: p_x spacing
    du: float = 0.01            # Lorentzian: p_y spacing away from the resonant curve
    n_window: int = 32          # Lorentzian: nodes per tan-substituted window
    window: float = 5.0         # Lorentzian: minimal window half-width in units of the width


@dataclass(frozen=True, eq=False)
class KineticMesh:
    """Uniform nodes ``(a + i dx, -c + j dx)`` covering the closed bounding box of ``D+``."""

    spec: DomainSpec
    dx: float
    x: np.ndarray
    y: np.ndarray
    nodes: np.ndarray       # (n, 2), index i * ny + j
    active: np.ndarray      # (n,) bool, psi+ > 0

    @property
    def shape(self):
        return (len(self.x), len(self.y))

    @property
    def size(self):
        return len(self.nodes)

    @property
    def active_index(self):
        return np.flatnonzero(self.active)

    def packed(self):
        return np.array([self.x[0], self.y[0], self.dx, len(self.x), len(self.y)], dtype=float)

    def sample(self, fn):
        """Nodal values of ``fn(points)``, zeroed off the active set."""
        vals = np.asarray(fn(self.nodes), dtype=float)
        return np.where(self.active, vals, 0.0)

    def interpolate(self, values, points):
        """Bilinear interpolation with even extension; zero outside the box."""
        values = np.asarray(values, dtype=float)
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        flip = pts[:, 0] < 0
        pts = np.where(flip[:, None], -pts, pts)
        nx, ny = self.shape
        fx = (pts[:, 0] - self.x[0]) / self.dx
        fy = (pts[:, 1] - self.y[0]) / self.dx
        inside = (fx >= 0) & (fy >= 0) & (fx <= nx - 1) & (fy <= ny - 1)
        i = np.clip(np.floor(fx).astype(int), 0, nx - 2)
        j = np.clip(np.floor(fy).astype(int), 0, ny - 2)
        tx, ty = fx - i, fy - j
        F = values.reshape(nx, ny)
        out = ((1 - tx) * (1 - ty) * F[i, j] + tx * (1 - ty) * F[i + 1, j]
               + (1 - tx) * ty * F[i, j + 1] + tx * ty * F[i + 1, j + 1])
        out = np.where(inside, out, 0.0)
        return out.reshape(np.shape(points)[:-1])


def build_mesh(spec: DomainSpec = DomainSpec(), dx: float = 0.05) -> KineticMesh:
    if not dx > 0:
        raise ValueError(f"mesh spacing must be positive, got {dx}")
    nx = int(np.ceil((spec.b - spec.a) / dx - 1e-9)) + 1
    ny = int(np.ceil(2 * spec.c / dx - 1e-9)) + 1
    x = spec.a + dx * np.arange(nx)
    y = -spec.c + dx * np.arange(ny)
    X, Y = np.meshgrid(x, y, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)
    active = psi_plus(nodes, spec) > 0
    return KineticMesh(spec=spec, dx=float(dx), x=x, y=y, nodes=nodes, active=active)


def _dom(spec):
    return np.array([spec.a, spec.b, spec.c, spec.w], dtype=float)


def _eta(params):
    return params.eta if isinstance(params, DispersionParams) else float(params)


def linearized_kernels(m, j, p, spec: DomainSpec = DomainSpec(), convention="stationary",
                       psi_sq=None):
    """Coefficients ``(L, S_p, S_j)`` of ``f(m), f(p), f(j)``; vectorised.

    ``psi_sq`` overrides ``Psi_{mjp}^2`` (e.g. ``1.0`` for normalised checks).
    """
    m = np.asarray(m, dtype=float)
    j = np.asarray(j, dtype=float)
    p = np.asarray(p, dtype=float)
    if not np.allclose(j, m - p, rtol=0, atol=1e-12):
        raise ValueError("triad constraint j = m - p violated")
    conv = KernelConvention(convention) if isinstance(convention, str) else convention
    if psi_sq is None:
        psi_sq = (phi_weight(m, spec) * phi_weight(j, spec) * phi_weight(p, spec)) ** 2
    psi_sq = np.asarray(psi_sq, dtype=float)
    mx, jx, px = m[..., 0], j[..., 0], p[..., 0]
    gm, gj, gp = 1 / np.abs(mx), 1 / np.abs(jx), 1 / np.abs(px)
    sp = np.sign(mx * px)
    sj = np.sign(mx * jx)
    two = 2.0 * psi_sq
    if conv.code == 0:
        return -two * (sp * gj + sj * gp), two * (gj - sj * gm), two * (gp - sp * gm)
    return -two * (sj * gj + sp * gp), two * (gj - sp * gm), two * (gp - sj * gm)


def nonlinear_integrand(r, m, j, p, spec: DomainSpec = DomainSpec(), convention="stationary",
                        psi_sq=None):
    """Collision integrand of the three-wave kinetic equation for the triad ``m = j + p``.

    ``r`` is a callable on points (evaluated on the even extension by the caller's
    choice); on all-``D+`` triads this is ``2 Psi^2 [r_j r_p - r_m r_j - r_m r_p]``.
    """
    m = np.asarray(m, dtype=float)
    j = np.asarray(j, dtype=float)
    p = np.asarray(p, dtype=float)
    rm, rj, rp = (np.asarray(r(x), dtype=float) for x in (m, j, p))
    if np.any(rm <= 0) or np.any(rj <= 0) or np.any(rp <= 0):
        raise ValueError("profile must be positive on the triad")
    if psi_sq is None:
        psi_sq = (phi_weight(m, spec) * phi_weight(j, spec) * phi_weight(p, spec)) ** 2
    conv = KernelConvention(convention) if isinstance(convention, str) else convention
    sp = np.sign(m[..., 0] * p[..., 0])
    sj = np.sign(m[..., 0] * j[..., 0])
    if conv.code == 1:
        sp, sj = sj, sp
    return 2.0 * psi_sq * (rj * rp - sp * rm * rj - sj * rm * rp)


@dataclass(eq=False)
class KineticOperator:
    """Dense rows (active nodes) by columns (all nodes)."""

    mesh: KineticMesh
    form: str
    lam: float | None
    matrix: np.ndarray
    rows: np.ndarray
    convention: str = "stationary"
    settings: QuadratureSettings = field(default_factory=QuadratureSettings)

    def apply(self, values):
        values = np.asarray(values, dtype=float)
        out = np.zeros(values.shape)
        out[..., self.rows] = values @ self.matrix.T
        return out

    def norm(self):
        """Max absolute row sum."""
        return float(np.abs(self.matrix).sum(axis=1).max()) if self.matrix.size else 0.0


def assemble(mesh: KineticMesh, form="resonant", lam=None, params=DispersionParams(),
             convention="stationary", settings=QuadratureSettings(), rows=None,
             chunk=256) -> KineticOperator:
    """Assemble the discrete operator for ``form`` in ``{"resonant", "lorentzian"}``."""
    if form not in ("resonant", "lorentzian"):
        raise ValueError(f"unknown kinetic form {form!r}")
    if form == "lorentzian":
        if lam is None or not lam > 0:
            raise ValueError(f"Lorentzian width must be positive, got {lam}")
    conv = KernelConvention(convention) if isinstance(convention, str) else convention
    rows = mesh.active_index if rows is None else np.asarray(rows, dtype=np.int64)
    mat = np.zeros((len(rows), mesh.size))
    for s in range(0, len(rows), chunk):
        part = np.ascontiguousarray(rows[s:s + chunk])
        _kernels.assemble_rows(part, mesh.nodes, 0 if form == "resonant" else 1,
                               float(lam or 0.0), _eta(params), _dom(mesh.spec), mesh.packed(),
                               conv.code, int(settings.n_sigma), float(settings.dpx),
                               float(settings.du), int(settings.n_window), float(settings.window),
                               mat[s:s + chunk])
    return KineticOperator(mesh=mesh, form=form, lam=lam, matrix=mat, rows=rows,
                           convention=conv.name, settings=settings)


def _pointwise_rhs(fn, mesh, form, lam, params, convention, settings, rows):
    conv = KernelConvention(convention) if isinstance(convention, str) else convention
    eta = _eta(params)
    dom = _dom(mesh.spec)
    rows = mesh.active_index if rows is None else np.asarray(rows)
    out = np.zeros(mesh.size)
    for node in rows:
        mx, my = mesh.nodes[node]
        if form == "resonant":
            cap = 6 * settings.n_sigma
        else:
            cap = _kernels.lorentz_capacity(mx, lam, eta, dom, settings.dpx, settings.du,
                                            settings.n_window, settings.window)
        P = np.empty((cap, 2))
        W = np.empty(cap)
        if form == "resonant":
            n = _kernels.curve_nodes(mx, my, eta, dom, settings.n_sigma, P, W)
        else:
            n = _kernels.lorentz_nodes(mx, my, lam, eta, dom, settings.dpx, settings.du,
                                       settings.n_window, settings.window, P, W)
        P, W = P[:n], W[:n]
        m = np.broadcast_to(mesh.nodes[node], P.shape)
        J = m - P
        L, Sp, Sj = linearized_kernels(m, J, P, mesh.spec, conv)
        out[node] = np.sum(W * (L * fn(m) + Sp * fn(P) + Sj * fn(J)))
    return out


def rhs_resonant(f, mesh: KineticMesh, params=DispersionParams(), convention="stationary",
                 settings=QuadratureSettings(), rows=None, operator=None):
    """``df/dtau`` at the mesh nodes for the exact-resonant form.

    ``f`` is either nodal values (interpolated bilinearly) or a callable on
    points, in which case it is evaluated exactly at the quadrature nodes.
    """
    if callable(f):
        return _pointwise_rhs(f, mesh, "resonant", None, params, convention, settings, rows)
    op = operator or assemble(mesh, "resonant", None, params, convention, settings, rows)
    return op.apply(f)


def rhs_lorentzian(f, mesh: KineticMesh, lam: float, params=DispersionParams(),
                   convention="stationary", settings=QuadratureSettings(), rows=None,
                   operator=None):
    """``df/dtau`` for the quasi-resonant form of width ``lam``."""
    if not lam > 0:
        raise ValueError(f"Lorentzian width must be positive, got {lam}")
    if callable(f):
        return _pointwise_rhs(f, mesh, "lorentzian", lam, params, convention, settings, rows)
    op = operator or assemble(mesh, "lorentzian", lam, params, convention, settings, rows)
    return op.apply(f)


@dataclass
class KineticTrajectory:
    tau: np.ndarray          # (S,)
    values: np.ndarray       # (S, n) nodal values
    dtau: float
    operator_norm: float


def solve(f0, operator: KineticOperator, T: float, dtau: float = 0.01, save_every: int | None = None,
          save_times=None, max_halvings: int = 6) -> KineticTrajectory:
    """RK4 in ``tau`` for ``df/dtau = A f`` from nodal ``f0``; inactive nodes are frozen.

    The step is halved until ``dtau * ||A||_inf < 1``. Nodal values above
    ``1e6 ||f0||`` abort the solve.
    """
    f = np.array(f0, dtype=float)
    if f.shape[-1] != operator.mesh.size:
        raise ValueError(f"expected {operator.mesh.size} nodal values, got {f.shape}")
    nrm = operator.norm()
    halvings = 0
    while dtau * nrm >= 1.0:
        if halvings >= max_halvings:
            raise KineticInstability(f"stability guard failed: dtau={dtau:g}, ||A||={nrm:.3g}")
        dtau /= 2
        halvings += 1
    if halvings:
        log.info("kinetic step halved %d times to dtau=%g (||A||=%.3g)", halvings, dtau, nrm)
    nsteps = int(np.ceil(T / dtau - 1e-9))
    if nsteps:
        dtau = T / nsteps
    if save_times is not None:
        marks = sorted({int(round(t / dtau)) for t in save_times})
    else:
        every = save_every or nsteps or 1
        marks = sorted(set(range(0, nsteps + 1, every)) | {nsteps})
    scale = np.max(np.abs(f)) if f.size else 0.0
    limit = 1e6 * max(scale, 1e-300)
    A = operator.apply
    out, taus = [], []
    step = 0
    for target in marks:
        while step < target:
            k1 = A(f)
            k2 = A(f + 0.5 * dtau * k1)
            k3 = A(f + 0.5 * dtau * k2)
            k4 = A(f + dtau * k3)
            f = f + dtau / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            step += 1
            if not np.all(np.isfinite(f)) or np.max(np.abs(f)) > limit:
                raise KineticInstability(f"kinetic solution blew up at tau={step * dtau:g} "
                                         f"(max |f| = {np.max(np.abs(f)):.3g}, limit {limit:.3g})")
        out.append(f.copy())
        taus.append(step * dtau)
    return KineticTrajectory(tau=np.array(taus), values=np.array(out), dtau=dtau,
                             operator_norm=nrm)
