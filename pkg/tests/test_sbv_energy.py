import math

import numpy as np
import pytest

from gibbs_lattice.lattice import Domain, LatticeRegion, Profile, discretize
from gibbs_lattice.potentials import DecayWeights, SBVPotential
from gibbs_lattice.sampler import ChainConfig
from gibbs_lattice.sbv_energy import (JumpDatum, continuum_sbv_energy, discrete_sbv_norm, split_energy,
                                      surface_density_probe)

POT = SBVPotential(DecayWeights(1, support="nearest", mode="sbv"))


def test_step_splits_into_surface_only():
    jd = JumpDatum(1.0, 0.0, 1.0, 0.5)
    region = LatticeRegion(1e-3, Domain.interval(0.0, 1.0))
    rep = split_energy(discretize(jd.profile(), region, rule="point"), POT)
    assert len(rep.jump_bonds) == 1
    assert rep.bulk_energy <= 1e-3
    assert 1.9 <= rep.surface_energy <= 2.1


def test_affine_plus_step_total():
    M = 0.7
    u = Profile(lambda x: M * x[:, 0] + (x[:, 0] > 0.5))
    got = discrete_sbv_norm(u, 1e-3, POT)
    want = continuum_sbv_energy(M * M, [1.0], POT)
    assert abs(got - want) <= 0.05 * want


def test_smooth_profile_has_no_jumps():
    u = Profile(lambda x: np.sin(2 * np.pi * x[:, 0]))
    region = LatticeRegion(2.0 ** -8, Domain.interval(0.0, 1.0))
    rep = split_energy(discretize(u, region, rule="point"), POT)
    assert rep.surface_energy == 0.0 and not rep.jump_bonds
    assert rep.bulk_energy == pytest.approx(2 * math.pi ** 2, rel=0.03)


def test_jump_datum_swap_symmetry():
    jd = JumpDatum(1.0, 0.0, 1.0, 0.5)
    x = np.linspace(0, 1, 1001)[:, None]
    assert np.array_equal(jd(x), jd.swapped()(x))
    jd2 = JumpDatum((1.0, 2.0), (0.0, 0.0), (0.0, 1.0), (0.5, 0.5))
    y = np.random.default_rng(0).random((200, 2))
    assert np.array_equal(jd2(y), jd2.swapped()(y))


def test_zero_height_datum_gives_zero_excess():
    jd = JumpDatum(0.3, 0.3, 1.0, 0.5)
    pr = surface_density_probe(jd, POT, [1 / 2, 1 / 4], 0.5, method="exact")
    assert pr.excess == [0.0, 0.0]


def test_low_temperature_surface_amplitude():
    jd = JumpDatum(1.0, 0.0, 1.0, 0.5)
    pr = surface_density_probe(jd, POT, [1 / 16, 1 / 32], kappa=0.2, beta=200.0,
                               chain=ChainConfig(steps=2000, burn_in=400, seed=1))
    for a in pr.amplitude:
        assert a == pytest.approx(2.0, rel=0.05)
