import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gibbs_lattice.lattice import (AffineProfile, Box, DiscretizedField, Domain, LatticeRegion, Profile,
                                   QuadratureError, discrete_sobolev_seminorm, discretize, gradient,
                                   half_lattice_directions, interpolate, reachable_sites)


def test_reachable_sites_closed_square():
    region = LatticeRegion(0.5, Domain.unit_cube(2, closed=True))
    got = {tuple(s) for s in reachable_sites(region, (1, 0))}
    assert got == {(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)}


def test_reachable_sites_rejects_zero_direction():
    region = LatticeRegion(0.5, Domain.unit_cube(2))
    with pytest.raises(ValueError):
        reachable_sites(region, (0, 0))


def test_open_interval_excludes_endpoints():
    region = LatticeRegion(0.25, Domain.interval(0.0, 1.0))
    assert region.sites[:, 0].tolist() == [1, 2, 3]
    closed = LatticeRegion(0.25, Domain.interval(0.0, 1.0, closed=True))
    assert closed.sites[:, 0].tolist() == [0, 1, 2, 3, 4]


def test_union_volume_and_containment():
    dom = Domain.interval(0.0, 0.6).union(Domain.interval(0.4, 1.0))
    assert dom.volume == pytest.approx(1.0, abs=1e-15)
    assert dom.contains(np.array([[0.5], [1.2]])).tolist() == [True, False]


def test_cell_average_of_square():
    # (1/eps) * mean of x^2 over [eps(i - 1/2), eps(i + 1/2)] = eps i^2 + eps / 12
    eps = 0.1
    region = LatticeRegion(eps, Domain.interval(0.0, 1.0))
    field = discretize(Profile(lambda x: x[:, 0] ** 2), region)
    i = 5
    val = field.values[field.index_of(np.array([[i]]))][0, 0]
    assert val == pytest.approx(eps * i * i + eps / 12, rel=1e-12)


def test_point_rule_and_affine_exactness():
    region = LatticeRegion(0.125, Domain.interval(0.0, 1.0))
    f = discretize(AffineProfile([[0.75]], offset=[2.0]), region)
    expected = 0.75 * region.sites[:, 0] + 2.0 / 0.125
    assert np.array_equal(f.values[:, 0], expected)
    g = discretize(Profile(lambda x: np.sin(x[:, 0])), region, rule="point")
    assert np.allclose(g.values[:, 0], np.sin(region.positions[:, 0]) / 0.125)


def test_gradient_is_scaled_difference():
    region = LatticeRegion(0.25, Domain.unit_cube(2, closed=True))
    f = discretize(AffineProfile([[1.0, 2.0]]), region)
    g = gradient(f, (1, 1), (0, 0))
    assert g[0] == pytest.approx(3.0 / math.sqrt(2))


def test_half_lattice_directions_ordering():
    dirs = half_lattice_directions(2, 1.5)
    assert [tuple(x) for x in dirs] == [(0, 1), (1, 0), (1, -1), (1, 1)]
    for x in half_lattice_directions(3, 3.0):
        nz = x[np.nonzero(x)[0]]
        assert nz[0] > 0


def test_interpolation_reproduces_nodes_and_is_piecewise_linear():
    region = LatticeRegion(0.5, Domain.interval(0.0, 2.0, closed=True))
    f = discretize(Profile(lambda x: x[:, 0] ** 2), region, rule="point")
    v = interpolate(f)
    assert v(np.array([[0.5]]))[0] == pytest.approx(0.25)
    # midpoint of 0 and 0.5 lies on the chord: (0 + 0.25) / 2
    assert v(np.array([[0.25]]))[0] == pytest.approx(0.125)


def test_sobolev_seminorm_converges_at_first_order():
    errs = []
    for k in range(4, 10):
        eps = 2.0 ** -k
        region = LatticeRegion(eps, Domain.interval(0.0, 1.0))
        f = discretize(Profile(lambda x: np.sin(2 * np.pi * x[:, 0])), region)
        errs.append(abs(discrete_sobolev_seminorm(f, 2.0) - 2 * math.pi ** 2))
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    assert all(0.3 <= r <= 0.8 for r in ratios), ratios


def test_boundary_strip():
    region = LatticeRegion(0.25, Domain.unit_cube(2))
    strip = region.boundary_strip(1.0)
    assert int(np.sum(strip)) == 8 and len(region) == 9
    centre = region.index_of(np.array([[2, 2]]))[0]
    assert not strip[centre]


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(2, 6))
def test_translation_of_affine_data_is_symbolic(slope, z, k):
    eps = 2.0 ** -k
    region = LatticeRegion(eps, Domain.interval(0.0, 1.0))
    u = AffineProfile([[slope]])
    a = discretize(u, region)
    b = discretize(u.shifted([z]), region)
    # differences are unchanged and the shift enters only through the offset
    assert np.allclose(np.diff(a.values[:, 0]), slope, atol=1e-12 * (1 + abs(slope) / eps))
    assert np.allclose(b.values - a.values, z / eps)
