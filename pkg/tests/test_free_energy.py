import math

import numpy as np
import pytest
from scipy import integrate, special

from gibbs_lattice.free_energy import (FreeEnergyProblem, TIError, estimate_free_energy, exact_free_energy,
                                       limit_scan, reference_free_energy_G, ti_free_energy)
from gibbs_lattice.hamiltonian import HamiltonianSpec
from gibbs_lattice.lattice import AffineProfile, Domain, LatticeRegion
from gibbs_lattice.potentials import DecayWeights, SobolevPotential
from gibbs_lattice.quadrature import DimensionError
from gibbs_lattice.sampler import ChainConfig, ConstraintSpec

NN = SobolevPotential(2.0, DecayWeights(1, support="nearest"))


def _single_site():
    region = LatticeRegion(1.0, Domain.interval(0.5, 1.5))
    return HamiltonianSpec(NN, region, onsite=(1.0, 2.0)), region


@pytest.mark.parametrize("kappa", [math.inf, 1.0, 0.5])
def test_single_site_gaussian(kappa):
    h, region = _single_site()
    est = exact_free_energy(h, ConstraintSpec(0.0, region, kappa))
    expected = -math.log(math.sqrt(math.pi) * (1.0 if math.isinf(kappa) else special.erf(kappa)))
    assert est.value == pytest.approx(expected, abs=1e-9)
    assert est.method == "exact_quadrature"


def test_zero_energy_box_is_volume():
    # H = 0 and |eps phi - u| <= eps on every site: F = -(eps/|A|) * n log 2
    zero = SobolevPotential(2.0, DecayWeights(1, c0=0.0, support="nearest"))
    region = LatticeRegion(0.25, Domain.interval(0.0, 1.0))
    c = ConstraintSpec(0.0, region, mode="soft_clamp", r0=10.0)
    h = HamiltonianSpec(zero, region, "interior")
    est = exact_free_energy(h, c)
    assert est.value == pytest.approx(-0.25 * 3 * math.log(2.0), abs=1e-10)


def _two_site_pinned(kappa=0.3):
    region = LatticeRegion(1 / 3, Domain.interval(0.0, 1.0))
    h = HamiltonianSpec(NN, region, "full")
    return h, ConstraintSpec(AffineProfile([[1.0]]), region, kappa, mode="pinned")


def _two_site_oracle(kappa):
    # H = (1 + a)^2 + (1 + b - a)^2 + (1 - b)^2, disc a^2 + b^2 <= 27 kappa^2
    R = math.sqrt(27.0) * kappa
    f = lambda r, t: r * math.exp(-((1 + r * math.cos(t)) ** 2 + (1 + r * math.sin(t) - r * math.cos(t)) ** 2
                                    + (1 - r * math.sin(t)) ** 2))
    z = integrate.dblquad(lambda r, t: f(r, t), 0, 2 * math.pi, 0, R, epsabs=1e-13, epsrel=1e-12)[0]
    return -math.log(z) / 3


def test_two_site_exact_matches_independent_quadrature():
    h, c = _two_site_pinned(0.3)
    est = exact_free_energy(h, c)
    assert est.value == pytest.approx(_two_site_oracle(0.3), abs=1e-7)


def test_two_site_ti_matches_exact():
    h, c = _two_site_pinned(0.3)
    ex = exact_free_energy(h, c)
    ti = ti_free_energy(h, c, ChainConfig(steps=6000, burn_in=500, seed=3))
    assert ti.method == "thermodynamic_integration"
    assert abs(ti.value - ex.value) <= 3 * math.hypot(ti.stderr, ex.stderr)


def test_exact_refuses_large_systems():
    region = LatticeRegion(0.1, Domain.interval(0.0, 1.0))
    h = HamiltonianSpec(NN, region, "full")
    with pytest.raises(DimensionError):
        exact_free_energy(h, ConstraintSpec(AffineProfile([[1.0]]), region, 0.5, mode="pinned"))


def test_auto_dispatch():
    h, c = _two_site_pinned(0.3)
    assert estimate_free_energy(h, c).method == "exact_quadrature"
    with pytest.raises(ValueError):
        estimate_free_energy(h, c, method="nope")


def test_bulk_below_pinned():
    region = LatticeRegion(0.25, Domain.interval(0.0, 1.0))
    u = AffineProfile([[0.5]])
    bulk = exact_free_energy(HamiltonianSpec(NN, region, "interior"), ConstraintSpec(u, region, 0.5))
    pinned = exact_free_energy(HamiltonianSpec(NN, region, "full"), ConstraintSpec(u, region, 0.5, mode="pinned"))
    assert bulk.value <= pinned.value + 3 * math.hypot(bulk.stderr, pinned.stderr)


def test_reference_G_three_sites_exact_vs_ti():
    region = LatticeRegion(0.25, Domain.interval(0.0, 1.0))
    c = ConstraintSpec(AffineProfile([[0.0]]), region, 0.5, mode="pinned")
    ex = reference_free_energy_G(1.0, region, c, method="exact")
    ti = reference_free_energy_G(1.0, region, c, config=ChainConfig(steps=6000, burn_in=500, seed=11), method="ti")
    assert abs(ex.value - ti.value) <= 3 * math.hypot(ex.stderr, ti.stderr)
    assert ex.metadata["lambda"] == 1.0


def test_limit_scan_monotone_in_kappa():
    prob = FreeEnergyProblem(NN, Domain.interval(0.0, 1.0), AffineProfile([[0.5]]), mode="bulk")
    scan = limit_scan(prob, [0.5, 0.25], [1.0, 0.5])
    assert all(scan.monotone_rows.values())
    assert not scan.failures
    # kappa decreasing: F must not decrease, so its sup is the last column
    assert scan.f_prime[0] == pytest.approx(scan.f_liminf[1][0])
    with pytest.raises(ValueError):
        limit_scan(prob, [0.25, 0.5], [1.0])
