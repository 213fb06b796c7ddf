import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavekin.grid import DomainSpec, build_grid
from wavekin.measures import (InitLaw, PerturbationProfile, chi_square_from_factors,
                              chi_square_product, sample_invariant, sample_perturbed_mixture,
                              sample_perturbed_product)
from wavekin.rng import INIT, NOISE, member_stream

SPEC = DomainSpec()
BUMP = PerturbationProfile()
ZERO = PerturbationProfile(kind="zero")


def _draws(fn, R, seed=11):
    rng = np.random.default_rng(seed)
    return np.array([fn(rng) for _ in range(R)])


def test_invariant_moments():
    g = build_grid(SPEC, 4)
    R = 40000
    V = _draws(lambda r: sample_invariant(g, r), R)
    A = np.abs(V) ** 2
    se = A.std(axis=0) / math.sqrt(R)
    assert np.all(np.abs(A.mean(axis=0) - g.gamma) < 4 * se)
    # one angle and cross moments are centred
    m1 = V[:, 7]
    assert abs(m1.real.mean()) < 4 * m1.real.std() / math.sqrt(R)
    cross = V[:, 3] * np.conj(V[:, 9])
    assert abs(cross.real.mean()) < 4 * cross.real.std() / math.sqrt(R)
    assert abs(cross.imag.mean()) < 4 * cross.imag.std() / math.sqrt(R)


def test_product_zero_profile_matches_invariant_bitwise():
    g = build_grid(SPEC, 4)
    v, b = sample_perturbed_product(g, ZERO, 1.0, np.random.default_rng(5))
    assert np.array_equal(v, b)
    w = sample_invariant(g, np.random.default_rng(5))
    assert np.array_equal(v, w)


def test_product_example_mode_moment():
    # k = (1.2, 0): gamma = 5/6, a unit-amplitude bump centred there gives g0 = 1
    g = build_grid(SPEC, 10)
    prof = PerturbationProfile(center=(1.2, 0.0))
    s = g.lookup(12, 0)
    assert prof.on_grid(g)[s] == pytest.approx(1.0)
    R = 100000
    rng = np.random.default_rng(2)
    A = np.array([abs(sample_perturbed_product(g, prof, 1.0, rng, coupled=False)[0][s]) ** 2
                  for _ in range(R)])
    assert abs(A.mean() - (5 / 6 + 0.1)) < 3 * A.std() / math.sqrt(R)


def test_coupling_identity():
    g = build_grid(SPEC, 8)
    beta = g.gamma + BUMP.on_grid(g) / 8
    for seed in range(10):
        v, b = sample_perturbed_product(g, BUMP, 1.0, np.random.default_rng(seed))
        np.testing.assert_allclose(np.abs(v) ** 2 / np.abs(b) ** 2, beta / g.gamma, rtol=1e-13)
        np.testing.assert_allclose(np.abs(v) ** 2 - np.abs(b) ** 2,
                                   (beta / g.gamma - 1) * np.abs(b) ** 2, rtol=1e-9, atol=1e-14)


def test_product_rejects_negative_variance():
    g = build_grid(SPEC, 4)
    with pytest.raises(ValueError, match="non-positive"):
        sample_perturbed_product(g, PerturbationProfile(amplitude=-50.0), 1.0,
                                 np.random.default_rng(0))
    with pytest.raises(ValueError):
        InitLaw("product", BUMP, alpha=2.5)


def test_mixture_one_mode_differs_and_marginal_moment():
    g = build_grid(SPEC, 4)
    v, b, j = sample_perturbed_mixture(g, BUMP, np.random.default_rng(1), True, True)
    diff = np.flatnonzero(v != b)
    assert set(diff) <= {j}
    R = 100000
    rng = np.random.default_rng(9)
    s = g.lookup(5, 0)
    A = np.empty(R)
    for r in range(R):
        A[r] = abs(sample_perturbed_mixture(g, BUMP, rng)[s]) ** 2
    target = g.gamma[s] + BUMP.on_grid(g)[s] / 16
    assert abs(A.mean() - target) < 3 * A.std() / math.sqrt(R)


def test_mixture_zero_profile_is_invariant():
    g = build_grid(SPEC, 4)
    v, b = sample_perturbed_mixture(g, ZERO, np.random.default_rng(4), return_baseline=True)
    assert np.array_equal(v, b)


def test_chi_square_examples():
    assert chi_square_from_factors([1.0], [0.1]) == pytest.approx(1 / 0.99 - 1, rel=1e-14)
    assert chi_square_from_factors([1.0], [0.1]) == pytest.approx(0.0101010, abs=1e-7)
    two = chi_square_from_factors([1.0, 1.0], [0.1, 0.1])
    assert two == pytest.approx((1 / 0.99) ** 2 - 1, rel=1e-14)
    assert two == pytest.approx(0.02030405, abs=1e-8)
    g = build_grid(SPEC, 4)
    assert chi_square_product(g, ZERO, 1.0) == 0.0
    with pytest.raises(ValueError, match="diverges"):
        chi_square_from_factors([1.0], [1.0])


def test_chi_square_bounded_in_n():
    vals = [chi_square_product(build_grid(SPEC, N), BUMP, 1.0) for N in (8, 16, 32, 64)]
    # alpha = 1: the sum of (g0/gamma)^2 N^-2 over ~N^2 modes tends to a finite integral
    steps = np.abs(np.diff(vals))
    assert np.all(steps[1:] < steps[:-1] / 2)
    assert max(vals) < 1.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0.1, 5), st.floats(-0.9, 0.9)), min_size=1, max_size=30))
def test_chi_square_matches_direct_product(pairs):
    gam = np.array([p[0] for p in pairs])
    shift = np.array([p[0] * p[1] for p in pairs])
    direct = math.prod(g * g / (g * g - s * s) for g, s in zip(gam, shift)) - 1
    assert chi_square_from_factors(gam, shift) == pytest.approx(direct, rel=1e-10, abs=1e-15)


def test_member_streams_reproducible_and_distinct():
    a = member_stream(7, 3, INIT).standard_normal(5)
    b = member_stream(7, 3, INIT).standard_normal(5)
    c = member_stream(7, 3, NOISE).standard_normal(5)
    d = member_stream(7, 4, INIT).standard_normal(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert not np.array_equal(a, d)


def test_init_law_sample_shapes():
    g = build_grid(SPEC, 4)
    for variant in ("invariant", "product", "mixture"):
        law = InitLaw(variant, BUMP)
        v = law.sample(g, np.random.default_rng(0))
        assert v.shape == (g.size,)
        v2, b = law.sample(g, np.random.default_rng(0), coupled=True)
        assert np.array_equal(v, v2)
        assert b.shape == (g.size,)
    np.testing.assert_allclose(InitLaw("mixture", BUMP).target_variance(g),
                               g.gamma + BUMP.on_grid(g) / 16)
