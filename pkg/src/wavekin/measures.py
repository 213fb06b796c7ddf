"""Initial laws: the invariant Gaussian measure and its two perturbations.

Per mode, ``V_k = P_k + i Q_k`` with ``P_k, Q_k ~ N(0, var_k / 2)`` so that
``E|V_k|^2 = var_k``. Under the invariant law ``var_k = gamma_k``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import FrequencyGrid, psi_plus


@dataclass(frozen=True)
class PerturbationProfile:
    """Smooth perturbation ``g0`` on ``D+``, extended evenly (``g0(-k) = g0(k)``).

    ``kind="gaussian_bump"``: ``A exp(-|k - center|^2 / (2 width^2)) psi+(k)``.
    ``kind="zero"``: identically zero.
    """

    kind: str = "gaussian_bump"
    amplitude: float = 1.0
    center: tuple = (1.25, 0.0)
    width: float = 0.3

    def __post_init__(self):
        if self.kind not in ("gaussian_bump", "zero"):
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "gaussian_bump" and not self.width > 0:
            raise ValueError("bump width must be positive")

    @property
    def is_zero(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0

    def __call__(self, k, spec):
        k = np.asarray(k, dtype=float)
        if self.is_zero:
            return np.zeros(k.shape[:-1])
        # even extension: points of D- are folded through k -> -k
        flip = k[..., :1] < 0
        kk = np.where(flip, -k, k)
        x0, y0 = self.center
        r2 = (kk[..., 0] - x0) ** 2 + (kk[..., 1] - y0) ** 2
        return self.amplitude * np.exp(-r2 / (2 * self.width ** 2)) * psi_plus(kk, spec)

    def on_grid(self, grid: FrequencyGrid):
        return self(grid.k, grid.spec)

    def sup_norm(self, spec, n=201):
        x = np.linspace(spec.a, spec.b, n)
        y = np.linspace(-spec.c, spec.c, n)
        X, Y = np.meshgrid(x, y, indexing="ij")
        return float(np.abs(self(np.stack([X, Y], -1), spec)).max())


@dataclass(frozen=True)
class InitLaw:
    """``variant`` is one of ``invariant``, ``product``, ``mixture``."""

    variant: str = "invariant"
    profile: PerturbationProfile = PerturbationProfile(kind="zero")
    alpha: float = 1.0

    def __post_init__(self):
        if self.variant not in ("invariant", "product", "mixture"):
            raise ValueError(f"unknown initial law {self.variant!r}")
        if self.variant == "product" and not 1 <= self.alpha <= 2:
            raise ValueError(f"perturbation exponent must satisfy 1 <= alpha <= 2, got {self.alpha}")

    @property
    def effective_alpha(self) -> float:
        return 2.0 if self.variant == "mixture" else self.alpha

    def target_variance(self, grid: FrequencyGrid):
        """``E(P_k^2 + Q_k^2) = gamma_k + g0(k) N^-alpha`` (mixture: alpha = 2)."""
        if self.variant == "invariant":
            return np.array(grid.gamma)
        return grid.gamma + self.profile.on_grid(grid) * float(grid.N) ** (-self.effective_alpha)

    def sample(self, grid, rng, coupled=False):
        """One draw; with ``coupled`` returns ``(field, baseline)`` sharing the normals."""
        if self.variant == "invariant":
            v = sample_invariant(grid, rng)
            return (v, v.copy()) if coupled else v
        if self.variant == "product":
            v, base = sample_perturbed_product(grid, self.profile, self.alpha, rng, coupled=coupled)
            return (v, base) if coupled else v
        v, base = sample_perturbed_mixture(grid, self.profile, rng, return_baseline=True)
        return (v, base) if coupled else v


def _normals(grid, rng):
    grid.require_nonempty()
    z = rng.standard_normal((2, grid.size))
    return z[0] + 1j * z[1]


def sample_invariant(grid: FrequencyGrid, rng) -> np.ndarray:
    """One draw from the invariant measure: ``E|V_k|^2 = gamma_k``."""
    return np.sqrt(grid.gamma / 2) * _normals(grid, rng)


def product_variances(grid, profile, alpha):
    beta = grid.gamma + profile.on_grid(grid) * float(grid.N) ** (-alpha)
    bad = np.flatnonzero(beta <= 0)
    if len(bad):
        s = bad[0]
        raise ValueError(f"non-positive perturbed variance {beta[s]:.3g} at mode "
                         f"index {tuple(grid.index[s])}, k={tuple(grid.k[s])}")
    return beta


def sample_perturbed_product(grid, profile, alpha, rng, coupled=True):
    """Independent modes with variances ``gamma_k + g0(k) N^-alpha``.

    With ``coupled`` the baseline field reuses the same standard normals with
    invariant variances; returns ``(field, baseline or None)``.
    """
    if not 1 <= alpha <= 2:
        raise ValueError(f"alpha must lie in [1, 2], got {alpha}")
    beta = product_variances(grid, profile, alpha)
    z = _normals(grid, rng)
    v = np.sqrt(beta / 2) * z
    if not coupled:
        return v, None
    return v, np.sqrt(grid.gamma / 2) * z


def mixture_variance(grid, profile):
    g = profile.on_grid(grid)
    beta = grid.gamma + (grid.size / grid.N ** 2) * g
    bad = np.flatnonzero(beta <= 0)
    if len(bad):
        s = bad[0]
        raise ValueError(f"non-positive mixture variance {beta[s]:.3g} at mode "
                         f"index {tuple(grid.index[s])}")
    return beta


def sample_perturbed_mixture(grid, profile, rng, return_baseline=False, return_index=False):
    """Pick one mode ``j`` uniformly; only that mode gets the perturbed variance."""
    grid.require_nonempty()
    beta = mixture_variance(grid, profile)
    j = int(rng.integers(grid.size))
    z = _normals(grid, rng)
    base = np.sqrt(grid.gamma / 2) * z
    v = base.copy()
    v[j] = math.sqrt(beta[j] / 2) * z[j]
    out = [v]
    if return_baseline:
        out.append(base)
    if return_index:
        out.append(j)
    return out[0] if len(out) == 1 else tuple(out)


def chi_square_product(grid, profile, alpha) -> float:
    """``int (rho - mu)^2 / mu`` for the product law, computed in log space."""
    g = profile.on_grid(grid) * float(grid.N) ** (-alpha)
    return chi_square_from_factors(grid.gamma, g)


def chi_square_from_factors(gamma, shift) -> float:
    gamma = np.asarray(gamma, dtype=float)
    shift = np.asarray(shift, dtype=float)
    ratio = np.abs(shift) / gamma
    if np.any(ratio >= 1):
        s = int(np.argmax(ratio))
        raise ValueError(f"chi-square diverges: |g0| N^-alpha = {abs(shift[s]):.3g} "
                         f">= gamma = {gamma[s]:.3g} at mode {s}")
    # prod gamma^2 / (gamma^2 - g^2) - 1 = expm1(-sum log1p(-(g/gamma)^2))
    return float(np.expm1(-np.sum(np.log1p(-ratio ** 2))))
