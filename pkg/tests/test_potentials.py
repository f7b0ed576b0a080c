import math

import numpy as np
import pytest
from scipy import integrate

from gibbs_lattice.potentials import DecayWeights, SBVPotential, SobolevPotential, validate


def test_one_dimensional_tail_bound_closed_form():
    w = DecayWeights(1, s=4.0)
    # 2 * sum_{k > 10} k^-4 <= 2 * 10^-3 / 3
    assert w.tail_bound(10) == pytest.approx(2 * 10.0 ** -3 / 3, rel=1e-12)
    exact = 2 * sum(k ** -4.0 for k in range(11, 200000))
    assert exact <= w.tail_bound(10)


@pytest.mark.parametrize("d,s", [(2, 4.0), (3, 5.0)])
def test_multidimensional_tail_bound_dominates_enumeration(d, s):
    w = DecayWeights(d, s=s)
    big = w.mass(14.0)
    for cutoff in (2, 3, 5):
        assert big - w.mass(cutoff) <= w.tail_bound(cutoff)


def test_choose_cutoff_caps_for_slow_decay(caplog):
    w = DecayWeights(1, s=4.0)
    m, tail = w.choose_cutoff(1e-6, max_cutoff=8)
    assert m == 8 and tail > 1e-6 * w.mass(8)
    assert "capped" in caplog.text
    assert DecayWeights(1, support="nearest").choose_cutoff() == (1, 0.0)


def test_sobolev_eval():
    pot = SobolevPotential(2.0, DecayWeights(1, support="nearest"))
    assert pot.eval((1,), 0.1, 0.3, 5.0) == 25.0
    assert pot.eval((2,), 0.1, 0.3, 5.0) == 0.0
    per = SobolevPotential(2.0, DecayWeights(1, support="nearest"), coefficient=[1.0, 3.0])
    assert per.eval((1,), 0.5, 0.5, 1.0) == 3.0  # site 1 sees a(1) = 3
    with pytest.raises(ValueError):
        pot.eval((0,), 0.1, 0.3, 1.0)


def test_sbv_branches():
    pot = SBVPotential(DecayWeights(1, support="nearest", mode="sbv"))
    eps = 0.01
    assert pot.threshold(eps) == pytest.approx(10.0)
    assert pot.eval((1,), eps, 0.0, 3.0) == pytest.approx(9.0)
    # above threshold: (1/eps) * (1 + sqrt(eps * t))
    assert pot.eval((1,), eps, 0.0, 200.0) == pytest.approx(100 * (1 + math.sqrt(2.0)))


def test_sbv_integral_exp_matches_quadrature():
    pot = SBVPotential(DecayWeights(1, support="nearest", mode="sbv"))
    eps = 0.05
    T = pot.threshold(eps)
    num = 2 * (integrate.quad(lambda t: math.exp(-t * t), 0, T)[0]
               + integrate.quad(lambda t: float(np.exp(-pot.bond_energy(t, eps))), T, np.inf)[0])
    assert pot.integral_exp(eps) == pytest.approx(num, rel=1e-8)


def test_validate_default_families_clean():
    assert validate(SobolevPotential(2.0, DecayWeights(2, s=5.0))).passed
    rep = validate(SBVPotential(DecayWeights(1, support="nearest", mode="sbv")))
    assert rep.passed
    assert rep["compatibility"].constant <= 1.0


def test_validate_reports_summability_failure_at_s_equal_d():
    rep = validate(SobolevPotential(2.0, DecayWeights(1, s=1.0)))
    assert not rep["summability"].passed
    assert math.isinf(DecayWeights(1, s=1.0).tail_bound(3))


def test_validate_reports_bad_threshold_schedule():
    rep = validate(SBVPotential(DecayWeights(1, support="nearest", mode="sbv"), gamma=1.5))
    assert not rep["threshold_scaling"].passed


def test_validate_reports_incommensurate_period():
    pot = SobolevPotential(2.0, DecayWeights(1, support="nearest"), coefficient=[1.0, 2.0, 3.0])
    rep = validate(pot, [0.25])
    assert not rep["H1_periodic_commensurate"].passed
    assert validate(pot, [1 / 6]).passed
