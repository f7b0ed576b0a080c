import math

import numpy as np
import pytest

from gibbs_lattice.hamiltonian import (ConfigurationError, HamiltonianSpec, energy, energy_delta,
                                       interior_vs_full_gap, sbv_zigzag_constant, zigzag_constant, zigzag_sides)
from gibbs_lattice.lattice import AffineProfile, Domain, LatticeRegion, discretize
from gibbs_lattice.potentials import DecayWeights, SobolevPotential


def _chain(eps=0.1, cutoff=None, support="nearest", mode="interior"):
    w = DecayWeights(1, support=support) if support == "nearest" else DecayWeights(1, s=4.0)
    pot = SobolevPotential(2.0, w)
    region = LatticeRegion(eps, Domain.interval(0.0, 1.0))
    return HamiltonianSpec(pot, region, mode, cutoff), region


def test_full_mode_band_and_bond_count():
    spec, region = _chain(0.1, cutoff=3, support="power", mode="full")
    assert sorted(spec.band_sites[:, 0].tolist()) == [-2, -1, 0, 10, 11, 12]
    # bonds with at least one endpoint among the 9 free sites, for |xi| in {1, 2, 3}
    free = set(range(1, 10))
    expect = sum(1 for xi in (1, 2, 3) for a in range(-5, 15) if a in free or a + xi in free)
    assert len(spec.bonds) == expect


def test_affine_energy_nearest_neighbour():
    spec, region = _chain(0.1)
    f = discretize(AffineProfile([[2.0]]), region)
    # H is the bare bond sum: 8 interior bonds of gradient 2
    assert energy(spec, f) == pytest.approx(8 * 4.0)


def test_energy_delta_matches_recomputation(rng):
    spec, region = _chain(0.1, cutoff=3, support="power", mode="full")
    f = discretize(AffineProfile([[0.7]]), region, band_sites=spec.band_sites)
    f = f.with_values(f.values + rng.standard_normal(f.values.shape))
    site = (4,)
    new = np.array([3.3])
    d = energy_delta(spec, f, site, new)
    g = f.copy()
    g.values[g.index_of(np.array([site]))[0]] = new
    assert d == pytest.approx(energy(spec, g) - energy(spec, f), rel=1e-12, abs=1e-12)


def test_full_mode_requires_band():
    spec, region = _chain(0.1, mode="full")
    f = discretize(AffineProfile([[1.0]]), region)
    with pytest.raises(ConfigurationError):
        energy(spec, f)


def test_interior_vs_full_gap_is_boundary_bonds():
    spec, region = _chain(0.1, mode="full")
    f = discretize(AffineProfile([[1.0]]), region, band_sites=spec.band_sites)
    # two boundary bonds of gradient 1
    assert interior_vs_full_gap(spec, f) == pytest.approx(2.0)


def test_zigzag_constants():
    assert zigzag_constant(2, 2.0) == 64.0
    assert sbv_zigzag_constant(2, (3, 4)) == pytest.approx(16 * 5.0)


def test_zigzag_sides_bound_random_field(rng):
    region = LatticeRegion(1 / 12, Domain.unit_cube(2))
    f = discretize(AffineProfile([[0.0, 0.0]]), region)
    f = f.with_values(rng.standard_normal(f.values.shape))
    for xi in ((1, 0), (2, 1), (3, -3)):
        lhs, rhs = zigzag_sides(f, xi)
        assert lhs <= zigzag_constant(2, 2.0) * rhs
