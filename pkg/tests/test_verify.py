import json

import pytest

from gibbs_lattice.potentials import DecayWeights, SBVPotential
from gibbs_lattice.verify import (Instance, _profile, _status, check_free_energy_inequalities,
                                  check_measure_property, check_tightness, check_zigzag,
                                  fit_monotonicity_constant, random_instances, summarize)


def test_status_rules():
    assert _status(True, 1.0, 0.1) == "pass"
    assert _status(False, -1.0, 0.1) == "fail"
    assert _status(True, 0.3, 0.1) == "inconclusive"


def test_zigzag_sobolev_and_sbv():
    (r,) = check_zigzag(60, seed=3)
    assert r.passed, r.witness["failures"]
    assert r.witness["max_nearest_ratio"] <= 1.0
    (s,) = check_zigzag(12, seed=4, sbv=SBVPotential(DecayWeights(2, support="nearest", mode="sbv")))
    assert s.passed


def test_free_energy_inequalities_on_random_instances():
    C = fit_monotonicity_constant(random_instances(2, 1) + random_instances(2, 2, epsilon=0.25))
    res = check_free_energy_inequalities(random_instances(3, 9), C)
    assert not [r for r in res if r.status == "fail"]
    assert {r.name for r in res} == {"kappa_monotone", "F_le_F_inf", "almost_monotone"}


def test_tightness_bound_and_doubling():
    inst = [Instance(((0.0, 1.0),), 0.5, _profile(0.5, 0.0, 0.0), 1.0)]
    res = check_tightness(inst)
    assert all(r.passed for r in res)
    bound = res[0].witness
    assert all(v <= b + 1e-9 for v, b in zip(bound["log_restricted"], bound["log_bound"]))


def test_tightness_requires_one_dof():
    with pytest.raises(ValueError):
        check_tightness([Instance(((0.0, 1.0),), 0.25, _profile(0.5, 0.0, 0.0), 1.0)])


def test_measure_properties_and_bitwise_invariances():
    C = fit_monotonicity_constant(random_instances(2, 1) + random_instances(2, 2, epsilon=0.25))
    res = check_measure_property(random_instances(1, 5, epsilon=0.25), C)
    bad = [(r.name, r.witness) for r in res if r.status == "fail"]
    assert not bad
    by = {r.name: r for r in res}
    assert by["locality"].witness["F_u"] == by["locality"].witness["F_v"]
    assert by["translation_invariance"].passed


def test_summary_schema():
    (r,) = check_zigzag(3, seed=0)
    s = summarize([r])
    json.dumps(s, default=str)
    assert set(s["checks"][0]) >= {"name", "status", "witness", "seed"}
    assert s["counts"]["pass"] == 1
