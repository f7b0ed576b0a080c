import math

import numpy as np
import pytest

from gibbs_lattice.hamiltonian import HamiltonianSpec
from gibbs_lattice.lattice import AffineProfile, DiscretizedField, Domain, LatticeRegion, discretize
from gibbs_lattice.potentials import DecayWeights, SobolevPotential
from gibbs_lattice.sampler import ChainConfig, ConstraintSpec, autotune, batch_means, inside_constraint, sample

NN = SobolevPotential(2.0, DecayWeights(1, support="nearest"))


def test_inside_constraint_hand_example():
    # two sites at x = 0 and x = 1/2 in a domain of length 1; u = 0, phi = (1, 1)
    region = LatticeRegion(0.5, Domain.interval(-0.25, 0.75))
    assert region.sites[:, 0].tolist() == [0, 1]
    field = DiscretizedField(region, np.ones((2, 1)))
    c = ConstraintSpec(0.0, region, 0.5)
    # (eps / |A|) * (0.25 + 0.25) = 0.25
    assert c.lhs(field) == pytest.approx(0.25)
    assert inside_constraint(c, field)
    assert not inside_constraint(c.with_kappa(0.2), field)
    assert inside_constraint(c.with_kappa(math.inf), field)


def test_discretised_linear_profile_is_inside_any_ball():
    region = LatticeRegion(0.125, Domain.interval(0.0, 1.0))
    c = ConstraintSpec(AffineProfile([[1.5]]), region, 1e-9)
    assert c.lhs(discretize(c.u, region)) == 0.0
    assert inside_constraint(c, discretize(c.u, region))


def test_single_site_gaussian_moments():
    region = LatticeRegion(1.0, Domain.interval(0.5, 1.5))
    h = HamiltonianSpec(NN, region, onsite=(1.0, 2.0))
    c = ConstraintSpec(0.0, region)
    res = sample(h, c, ChainConfig(steps=20000, burn_in=1000, seed=4, chains=4), record_states=True)
    x = res.states()[:, 0, 0]
    assert 0.2 <= res.acceptance <= 0.6
    # exp(-phi^2): mean 0, variance 1/2
    _, se = batch_means([x[i::4] for i in range(4)])
    assert abs(x.mean()) < 4 * max(se, 0.005)
    assert np.var(x) == pytest.approx(0.5, rel=0.03)
    assert res.mean_energy == pytest.approx(0.5, rel=0.03)


def test_states_respect_constraint():
    region = LatticeRegion(0.125, Domain.interval(0.0, 1.0))
    c = ConstraintSpec(AffineProfile([[1.0]]), region, 0.05, mode="pinned")
    h = HamiltonianSpec(NN, region, "full")
    res = sample(h, c, ChainConfig(steps=400, burn_in=50, seed=1, chains=2, thin=10), record_states=True)
    fields = res.fields()
    assert fields and all(inside_constraint(c, f) for f in fields)


def test_reproducible_and_thread_independent():
    region = LatticeRegion(0.0625, Domain.interval(0.0, 1.0))
    c = ConstraintSpec(AffineProfile([[0.5]]), region, 0.3, mode="pinned")
    h = HamiltonianSpec(NN, region, "full")
    cfg = ChainConfig(steps=300, burn_in=50, seed=9, chains=4)
    a = sample(h, c, cfg, threads=1, record_states=True)
    b = sample(h, c, cfg, threads=4, record_states=True)
    assert a.proposal_scale == b.proposal_scale
    assert np.array_equal(a.states(), b.states())


def test_autotune_lands_in_band():
    region = LatticeRegion(0.0625, Domain.interval(0.0, 1.0))
    c = ConstraintSpec(AffineProfile([[0.5]]), region, mode="pinned")
    h = HamiltonianSpec(NN, region, "full")
    s = autotune(h, c, seed=2)
    assert s == autotune(h, c, seed=2)
    res = sample(h, c, ChainConfig(steps=500, burn_in=100, seed=2, proposal_scale=s, chains=2))
    assert 0.15 <= res.acceptance <= 0.55
