import math

import numpy as np
import pytest

from gibbs_lattice.homogenize import (CellProblem, OracleError, cell_free_energy, convolution_oracle_1d,
                                      f_hom_estimate, fit_extrapolation, legendre_oracle_1d)
from gibbs_lattice.lattice import Domain
from gibbs_lattice.potentials import DecayWeights, SobolevPotential
from gibbs_lattice.sampler import ChainConfig

NN = SobolevPotential(2.0, DecayWeights(1, support="nearest"))


@pytest.mark.parametrize("M", [0.0, 0.5, 1.0])
def test_legendre_gaussian_closed_form(M):
    assert legendre_oracle_1d(lambda t: t * t, M) == pytest.approx(M * M - 0.5 * math.log(math.pi), abs=1e-9)


def test_legendre_quartic_values():
    # log int exp(lam t - t^4) dt, then sup over lam: symmetric minimum at M = 0
    z = 2 * math.gamma(1.25)
    assert legendre_oracle_1d(lambda t: t ** 4, 0.0) == pytest.approx(-math.log(z), abs=1e-8)


def test_legendre_rejects_weak_growth():
    with pytest.raises(OracleError):
        legendre_oracle_1d(lambda t: abs(t) ** 0.5, 0.0)
    with pytest.raises(OracleError):
        legendre_oracle_1d(lambda t: abs(t), 0.0)


def test_legendre_even_symmetry():
    f = lambda t: t ** 4 + 0.5 * t * t
    assert legendre_oracle_1d(f, 0.7) == pytest.approx(legendre_oracle_1d(f, -0.7), abs=1e-9)


@pytest.mark.parametrize("M", [0.0, 1.0])
def test_convolution_corrected_matches_legendre(M):
    for f in (lambda t: t * t, lambda t: t ** 4):
        c = convolution_oracle_1d(f, M, 64)
        L = legendre_oracle_1d(f, M)
        assert abs(c.corrected - L) <= 0.01 * abs(L)


def test_convolution_raw_gaussian_prefactor():
    # the exact N-bond density of the Gaussian chain gives the raw value
    # M^2 - log(pi)/2 + log(pi N) / (2N)
    N, M = 64, 0.5
    c = convolution_oracle_1d(lambda t: t * t, M, N)
    exact = M * M - 0.5 * math.log(math.pi) + math.log(math.pi * N) / (2 * N)
    assert c.raw == pytest.approx(exact, abs=1e-4)


def test_fit_extrapolation_recovers_linear_trend():
    eps = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    vals = [2.0 + 0.7 * e for e in eps]
    fit = fit_extrapolation(eps, vals, [1e-6] * 4)
    assert fit["limit"] == pytest.approx(2.0, abs=1e-4)
    assert fit["order"] == pytest.approx(1.0, abs=0.05)


def test_incommensurate_schedule_rejected():
    per = SobolevPotential(2.0, DecayWeights(1, support="nearest"), coefficient=[1.0, 2.0])
    with pytest.raises(ValueError):
        CellProblem([[0.5]], per, [1 / 3, 1 / 6, 1 / 12])


def test_gaussian_cell_free_energy_exact_form():
    # pinned chain with N bonds: F_N = M^2 - log(pi)/2 + log(pi N)/(2N) when the constraint is loose
    prob = CellProblem([[0.5]], NN, [1 / 4, 1 / 8, 1 / 16], kappas=(0.5,),
                       chain=ChainConfig(steps=1500, burn_in=300, seed=2))
    est = cell_free_energy(prob, 1 / 4, 0.5)
    N = 4
    exact = 0.25 - 0.5 * math.log(math.pi) + math.log(math.pi * N) / (2 * N)
    assert est.value == pytest.approx(exact, abs=2e-3)


def test_periodic_cell_shift_invariance():
    per = SobolevPotential(2.0, DecayWeights(1, support="nearest"), coefficient=[1.0, 2.0])
    prob = CellProblem([[0.3]], per, [1 / 2, 1 / 4, 1 / 8], method="exact")
    a = cell_free_energy(prob, 1 / 4, 0.5)
    b = cell_free_energy(prob, 1 / 4, 0.5, shift=[2.0])
    assert a.value == pytest.approx(b.value, abs=1e-10)


def test_f_hom_gaussian_small():
    prob = CellProblem([[1.0]], NN, [1 / 16, 1 / 32, 1 / 64], kappas=(0.5,),
                       chain=ChainConfig(steps=1500, burn_in=300, seed=5))
    res = f_hom_estimate(prob)
    target = 1.0 - 0.5 * math.log(math.pi)
    assert abs(res.value - target) <= max(3 * res.stderr, 0.02 * abs(target))
