"""Quasi-resonant sets ``Gamma(z, m) = {p : Omega(m, p) = z}`` of the KP dispersion.

At fixed ``p_x = sigma`` the mismatch is a downward (or upward) parabola in
``u = p_y - sigma m_y / m_x``::

    Omega = 3 m_x q - eta m_x u^2 / q,        q = sigma (m_x - sigma)

so each level set is a pair of explicit branches ``u = +-sqrt(3/eta) q sqrt(S)``
with ``S = 1 - z / (3 m_x q)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import DispersionParams, DomainSpec, omega_and_grad

CONVENTIONS = ("coarea", "gradient")


def _eta(params):
    return params.eta if isinstance(params, DispersionParams) else float(params)


def z0(spec: DomainSpec) -> float:
    """Admissible level range ``|z| < 3 a^4 / 16``."""
    return 3.0 * spec.a ** 4 / 16.0


def big_omega(m, p, params=DispersionParams()):
    """``omega_m - omega_{m-p} - omega_p`` (vectorised)."""
    m = np.asarray(m, dtype=float)
    p = np.asarray(p, dtype=float)
    wm, _, _ = omega_and_grad(m, params)
    wj, _, _ = omega_and_grad(m - p, params)
    wp, _, _ = omega_and_grad(p, params)
    return wm - wj - wp


def grad_p_omega(m, p, params=DispersionParams()):
    """``nabla_p Omega(m, p) = nabla omega(m - p) - nabla omega(p)``."""
    m = np.asarray(m, dtype=float)
    p = np.asarray(p, dtype=float)
    _, jx, jy = omega_and_grad(m - p, params)
    _, px, py = omega_and_grad(p, params)
    return np.stack([jx - px, jy - py], axis=-1)


def sigma_interval(m, spec: DomainSpec):
    """Pieces of the parameter set, clipped to ``p_x in (-b, b)``; empty pieces dropped."""
    mx = float(m[0])
    if not spec.a < mx < spec.b:
        raise ValueError(f"base point needs a < m_x < b, got m_x={mx} for a={spec.a}, b={spec.b}")
    a, b = spec.a, spec.b
    raw = [(-b, -a / 2), (a / 2, mx - a / 2), (mx + a / 2, b)]
    return [(lo, hi) for lo, hi in raw if lo < hi]


def kappa_y(sigma, z, m, eta, branch=1):
    """Return ``(kappa_y, d kappa_y / d sigma)`` on the given branch (+1 / -1)."""
    mx, my = float(m[0]), float(m[1])
    sigma = np.asarray(sigma, dtype=float)
    q = (mx - sigma) * sigma
    S = 1.0 - z / (3.0 * mx * q)
    if np.any(~(S > 0)):
        bad = np.asarray(sigma).reshape(-1)[np.flatnonzero(~(np.asarray(S).reshape(-1) > 0))[0]]
        raise ValueError(f"square-root argument is not positive at sigma={bad:g}, z={z:g}, m={tuple(m)}")
    rS = np.sqrt(S)
    c = branch * math.sqrt(3.0 / eta)
    ky = sigma * my / mx + c * q * rS
    dq = mx - 2.0 * sigma
    dky = my / mx + c * dq * (rS + z / (6.0 * mx * q * rS))
    return ky, dky


def curve_point_and_weight(sigma, z, m, params=DispersionParams(), spec=None,
                           branch=1, convention="coarea"):
    """Point ``p`` on ``Gamma(z, m)``, partner ``j = m - p`` and density weight.

    ``convention="coarea"`` gives ``1 / |d Omega / d p_y|`` (the arclength density
    of the delta measure per unit ``sigma``); ``"gradient"`` gives
    ``|d kappa_y / d sigma| / |nabla_p Omega|``.
    """
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown weight convention {convention!r}")
    eta = _eta(params)
    m = np.asarray(m, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    ky, dky = kappa_y(sigma, z, m, eta, branch)
    p = np.stack([sigma, ky], axis=-1)
    j = m - p
    grad = grad_p_omega(m, p, eta)
    if convention == "coarea":
        den = np.abs(grad[..., 1])
        num = np.ones_like(den)
    else:
        den = np.hypot(grad[..., 0], grad[..., 1])
        num = np.abs(dky)
    if np.any(den == 0):
        s = np.asarray(sigma).reshape(-1)[np.flatnonzero(np.asarray(den).reshape(-1) == 0)[0]]
        raise ValueError(f"degenerate curve point (vanishing gradient) at sigma={s:g}, m={tuple(m)}")
    return p, j, num / den


@dataclass(frozen=True, eq=False)
class CurveQuadrature:
    m: np.ndarray
    z: float
    sigma: np.ndarray       # (n,)
    branch: np.ndarray      # (n,) +-1
    p: np.ndarray           # (n, 2)
    j: np.ndarray           # (n, 2)
    weight: np.ndarray      # (n,) density times d sigma

    def __len__(self):
        return len(self.sigma)


def curve_quadrature(m, z, params=DispersionParams(), spec=DomainSpec(), n_sigma=400,
                     convention="coarea") -> CurveQuadrature:
    """Composite midpoint nodes on both branches and every piece of the parameter set.

    Base points in ``D-`` go through ``p -> -p``, ``z -> -z``.
    """
    m = np.asarray(m, dtype=float)
    if m[0] < 0:
        q = curve_quadrature(-m, -z, params, spec, n_sigma, convention)
        return CurveQuadrature(m=m, z=z, sigma=-q.sigma, branch=q.branch, p=-q.p,
                               j=-q.j, weight=q.weight)
    if abs(z) >= z0(spec):
        raise ValueError(f"level |z|={abs(z):g} outside the admissible range {z0(spec):g}")
    sig, dsig = [], []
    for lo, hi in sigma_interval(m, spec):
        h = (hi - lo) / n_sigma
        sig.append(lo + h * (np.arange(n_sigma) + 0.5))
        dsig.append(np.full(n_sigma, h))
    sig = np.concatenate(sig) if sig else np.zeros(0)
    dsig = np.concatenate(dsig) if dsig else np.zeros(0)
    out = []
    for br in (1, -1):
        p, j, w = curve_point_and_weight(sig, z, m, params, spec, br, convention)
        out.append((np.full(len(sig), br), p, j, w * dsig))
    return CurveQuadrature(m=m, z=float(z), sigma=np.concatenate([sig, sig]),
                           branch=np.concatenate([o[0] for o in out]),
                           p=np.concatenate([o[1] for o in out]).reshape(-1, 2),
                           j=np.concatenate([o[2] for o in out]).reshape(-1, 2),
                           weight=np.concatenate([o[3] for o in out]))


def integrate_curve(test_fn, m, z, params=DispersionParams(), spec=DomainSpec(),
                    n_sigma=400, convention="coarea") -> float:
    """``Phi(z, m) = sum over branches of int phi(m, m - p, p) w d sigma``.

    ``test_fn(m, j, p)`` receives ``m`` broadcast to the node arrays.
    """
    q = curve_quadrature(m, z, params, spec, n_sigma, convention)
    if len(q) == 0:
        return 0.0
    mm = np.broadcast_to(q.m, q.p.shape)
    vals = np.asarray(test_fn(mm, q.j, q.p), dtype=float)
    return float(np.sum(vals * q.weight))
