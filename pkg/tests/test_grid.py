import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wavekin.grid import (DispersionParams, DomainSpec, build_grid, coarse_partition,
                          coarse_partition_and_average, coupling_psi, gamma, omega,
                          omega_and_grad, phi_weight, psi_cutoff, psi_plus, smoothstep)

SPEC = DomainSpec()
points = st.tuples(st.floats(0.55, 1.95), st.floats(-1.45, 1.45))


def test_cardinality_n4():
    g = build_grid(SPEC, 4)
    assert g.size == 55
    assert g.full_size == 110
    assert set(g.index[:, 0]) == {3, 4, 5, 6, 7}
    assert set(g.index[:, 1]) == set(range(-5, 6))


def test_empty_grid_is_not_an_error():
    with pytest.warns(RuntimeWarning):
        g = build_grid(DomainSpec(a=1, b=2, c=1, w=0.1), 1)
    assert g.size == 0
    with pytest.raises(ValueError):
        g.require_nonempty()


def test_grid_ordering_and_strict_membership():
    g = build_grid(SPEC, 8)
    idx = [tuple(r) for r in g.index]
    assert idx == sorted(idx)
    assert np.all((g.k[:, 0] > SPEC.a) & (g.k[:, 0] < SPEC.b) & (np.abs(g.k[:, 1]) < SPEC.c))
    for n, (i, j) in enumerate(idx):
        assert g.lookup(i, j) == n
    assert g.lookup(0, 0) == -1


def test_cardinality_tracks_area():
    for N in (16, 32):
        g = build_grid(SPEC, N)
        assert abs(g.size / N ** 2 - SPEC.area) / SPEC.area < 0.1


def test_domain_validation():
    with pytest.raises(ValueError):
        DomainSpec(a=2, b=1)
    with pytest.raises(ValueError):
        DomainSpec(w=1.0)
    with pytest.warns(RuntimeWarning):
        DomainSpec(a=1.0, b=1.8, c=1.0, w=0.1)
    with pytest.raises(ValueError):
        DispersionParams(0.0)


def test_omega_examples():
    assert omega([1.0, 0.0], eta=3.7) == 1.0
    assert omega([2.0, 1.0]) == 8.5
    k = np.array([0.75, 0.5])
    assert omega(-k, math.sqrt(2)) == -omega(k, math.sqrt(2))
    with pytest.raises(ValueError):
        omega([0.0, 1.0])


@settings(max_examples=100, deadline=None)
@given(points, st.sampled_from([1.0, math.sqrt(2), 2.7]))
def test_gradient_matches_finite_differences(k, eta):
    k = np.array(k)
    _, gx, gy = omega_and_grad(k, DispersionParams(eta))
    h = 1e-5
    fx = (omega(k + [h, 0], eta) - omega(k - [h, 0], eta)) / (2 * h)
    fy = (omega(k + [0, h], eta) - omega(k - [0, h], eta)) / (2 * h)
    scale = max(1.0, abs(gx), abs(gy))
    assert abs(fx - gx) <= 1e-6 * scale
    assert abs(fy - gy) <= 1e-6 * scale


def test_gamma_examples():
    assert gamma([0.75, 0.5]) == pytest.approx(4 / 3, rel=1e-15)
    assert gamma([2.0, -1.0]) == 0.5
    assert gamma([-0.75, 0.5]) == gamma([0.75, 0.5])
    with pytest.raises(ValueError):
        gamma([0.0, 0.0])


def test_cutoff_examples():
    assert psi_cutoff([1.2, 0.0], SPEC) == 1.0
    assert psi_cutoff([0.5, 0.0], SPEC) == 0.0
    assert psi_cutoff([0.575, 0.0], SPEC) == pytest.approx(0.5, abs=1e-15)
    assert smoothstep(0.5) == 0.5


@settings(max_examples=200, deadline=None)
@given(st.floats(-2.5, 2.5), st.floats(-2, 2))
def test_cutoff_halves_are_disjoint(kx, ky):
    k = np.array([kx, ky])
    assert psi_plus(k, SPEC) * psi_plus(np.array([-kx, ky]), SPEC) == 0
    assert 0 <= psi_cutoff(k, SPEC) <= 1


def test_coupling_example():
    _, plus = coupling_psi([1.5, 0], [0.75, 0], [0.75, 0], SPEC)
    assert plus == pytest.approx(math.sqrt(1.5 * 0.75 * 0.75), rel=1e-14)
    assert plus == pytest.approx(0.918559, abs=5e-7)
    assert coupling_psi([0.45, 0], [1.0, 0], [1.2, 0.3], SPEC) == (0.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(points, points, points, st.integers(0, 7))
def test_coupling_symmetry_and_factorisation(n, k, l, flips):
    n, k, l = map(np.array, (n, k, l))
    signs = [(-1) ** ((flips >> b) & 1) for b in range(3)]
    full, _ = coupling_psi(n, k, l, SPEC)
    assert coupling_psi(l, n, k, SPEC)[0] == pytest.approx(full, rel=1e-14, abs=0)
    flipped, _ = coupling_psi(signs[0] * n, signs[1] * k, signs[2] * l, SPEC)
    assert flipped == pytest.approx(full, rel=1e-14, abs=0)
    assert full == phi_weight(n, SPEC) * phi_weight(k, SPEC) * phi_weight(l, SPEC)


def test_coarse_constant_interior_and_boundary():
    g = build_grid(SPEC, 8)
    part, avg = coarse_partition_and_average(g, 0.25, np.full(g.size, 3.0))
    inner = part.interior()
    assert inner.any()
    np.testing.assert_allclose(avg[inner], 3.0, rtol=0, atol=1e-15)
    # K = (0.5, 0) holds i = 4, 5 but only i = 5 lies strictly inside (a = 0.5)
    c = part.find([0.5, 0.0])
    assert part.counts[c] == 2
    assert avg[c] == pytest.approx(3.0 * 2 / 4, rel=1e-15)
    assert avg[c] < 3.0


def test_coarse_zero_and_h_guard():
    g = build_grid(SPEC, 8)
    _, avg = coarse_partition_and_average(g, 0.25, np.zeros(g.size))
    assert not avg.any()
    with pytest.raises(ValueError):
        coarse_partition(g, 0.1)


def test_coarse_refinement_reaggregates():
    g = build_grid(SPEC, 16)
    rng = np.random.default_rng(3)
    v = rng.normal(size=g.size)
    parent = coarse_partition(g, 0.25)
    child = coarse_partition(g, 0.125)
    pa = parent.average(v)
    ca = child.average(v)
    for c in np.flatnonzero(parent.interior()):
        K = parent.nodes[c]
        kids = [child.find(K + d) for d in ([0, 0], [0.125, 0], [0, 0.125], [0.125, 0.125])]
        assert pa[c] == pytest.approx(ca[kids].sum() / 4, rel=1e-12, abs=1e-15)

