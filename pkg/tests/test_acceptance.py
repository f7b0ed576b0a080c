"""Acceptance suite: one test (or parametrised group) per criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion.  The module-scoped homogenization fixture is
shared by criteria 1 and 8.
"""

import json
import math
import re
import time
from pathlib import Path

import numpy as np
import pytest

from gibbs_lattice import (AffineProfile, CellProblem, ChainConfig, ConstraintSpec, DecayWeights, Domain,
                           FreeEnergyProblem, HamiltonianSpec, JumpDatum, LatticeRegion, Profile,
                           SBVPotential, SobolevPotential, discrete_sbv_norm, discrete_sobolev_seminorm,
                           discretize, exact_free_energy, f_hom_estimate, legendre_oracle_1d, split_energy,
                           ti_free_energy)
from gibbs_lattice.cli import main
from gibbs_lattice.homogenize import convolution_oracle_1d
from gibbs_lattice.sbv_energy import continuum_sbv_energy
from gibbs_lattice.verify import _profile, default_battery, summarize

ROOT = Path(__file__).resolve().parent.parent
CONFIGS = ROOT / "configs"
NN = SobolevPotential(2.0, DecayWeights(1, support="nearest"))
M_VALUES = (0.0, 0.5, 1.0)
KAPPAS = (0.1, 0.5)


@pytest.fixture(scope="module")
def homogenization():
    t0 = time.perf_counter()
    out = {}
    for M in M_VALUES:
        prob = CellProblem([[M]], NN, [1 / 32, 1 / 64, 1 / 128], KAPPAS,
                           chain=ChainConfig(2000, 300, None, 7, 4, 1))
        out[M] = f_hom_estimate(prob, threads=8)
    return out, time.perf_counter() - t0


@pytest.mark.criterion(1, "1-D homogenization matches the Legendre oracle")
@pytest.mark.parametrize("M", M_VALUES)
def test_c1_homogenization_vs_legendre(homogenization, M):
    res, wall = homogenization
    oracle = M * M - 0.5 * math.log(math.pi)
    assert legendre_oracle_1d(lambda t: t * t, M) == pytest.approx(oracle, abs=1e-9)
    tol = max(3 * res[M].stderr, 0.02 * abs(oracle))
    assert abs(res[M].value - oracle) <= tol, (res[M].value, oracle, tol)
    assert wall <= 600.0


@pytest.mark.criterion(2, "convolution and Legendre oracles agree within 2% at N = 64")
@pytest.mark.parametrize("power", [2, 4])
@pytest.mark.parametrize("M", M_VALUES)
def test_c2_oracle_cross_validation(power, M):
    f = lambda t: abs(t) ** power
    leg = legendre_oracle_1d(f, M)
    conv = convolution_oracle_1d(f, M, 64)
    assert abs(conv.raw - leg) <= 0.02 * abs(leg), (conv.raw, conv.corrected, leg)


@pytest.mark.criterion(3, "TI agrees with exact quadrature on random 2-site instances")
@pytest.mark.parametrize("k", range(5))
def test_c3_exact_vs_ti(k):
    rng = np.random.default_rng(2024 + k)
    p = float(rng.choice([2.0, 3.0, 4.0]))
    pot = SobolevPotential(p, DecayWeights(1, support="nearest"))
    u = _profile(float(rng.uniform(-1, 1)), float(rng.uniform(0, 0.3)), float(rng.uniform(0, 2 * math.pi)))
    region = LatticeRegion(1 / 3, Domain.interval(0.0, 1.0))
    c = ConstraintSpec(u, region, float(rng.uniform(0.2, 1.0)), mode="pinned")
    h = HamiltonianSpec(pot, region, "full")
    ex = exact_free_energy(h, c)
    ti = ti_free_energy(h, c, ChainConfig(steps=6000, burn_in=500, seed=k))
    assert abs(ti.value - ex.value) <= 3 * math.hypot(ti.stderr, ex.stderr), (ti.value, ex.value, ti.stderr)


@pytest.mark.criterion(4, "verify battery: zero failures, inconclusive rate below 5%")
def test_c4_inequality_battery():
    results = default_battery(0, 1000, threads=8)
    s = summarize(results)
    names = {r.name for r in results}
    assert names >= {"zigzag_sobolev", "F_le_F_inf", "kappa_monotone", "almost_monotone", "locality",
                     "translation_invariance", "tightness_bound"}, names
    assert s["counts"]["fail"] == 0, [(r.name, r.witness) for r in results if r.status == "fail"]
    assert s["inconclusive_rate"] < 0.05


@pytest.mark.criterion(5, "discrete Sobolev error halves with eps")
def test_c5_sobolev_norm_convergence():
    errs = []
    for k in range(4, 10):
        region = LatticeRegion(2.0 ** -k, Domain.interval(0.0, 1.0))
        f = discretize(Profile(lambda x: np.sin(2 * np.pi * x[:, 0])), region)
        errs.append(abs(discrete_sobolev_seminorm(f, 2.0) - 2 * math.pi ** 2))
    ratios = [b / a for a, b in zip(errs, errs[1:])]
    assert all(0.3 <= r <= 0.8 for r in ratios), ratios


@pytest.mark.criterion(6, "SBV bulk/surface splitting of a step")
def test_c6_sbv_splitting():
    pot = SBVPotential(DecayWeights(1, support="nearest", mode="sbv"))
    assert pot.threshold(1e-3) == pytest.approx(1e-3 ** -0.5)
    region = LatticeRegion(1e-3, Domain.interval(0.0, 1.0))
    rep = split_energy(discretize(JumpDatum(1.0, 0.0, 1.0, 0.5).profile(), region, rule="point"), pot)
    assert 1.9 <= rep.surface_energy <= 2.1
    assert rep.bulk_energy <= 1e-3
    for M in (0.3, 0.7, 1.5):
        u = Profile(lambda x, M=M: M * x[:, 0] + (x[:, 0] > 0.5))
        want = continuum_sbv_energy(M * M, [1.0], pot)
        assert abs(discrete_sbv_norm(u, 1e-3, pot) - want) <= 0.05 * want


@pytest.mark.criterion(7, "boundary gap F_inf - F decreases along eps = 2^-4..2^-7")
def test_c7_boundary_gap_trend():
    u = _profile(0.5, 0.2, 0.3)
    dom = Domain.interval(0.0, 1.0)
    cfg = ChainConfig(steps=3000, burn_in=500, seed=1)
    gaps = []
    for k in range(4, 8):
        b = FreeEnergyProblem(NN, dom, u, mode="bulk", chain=cfg).estimate(2.0 ** -k, 0.5)
        q = FreeEnergyProblem(NN, dom, u, mode="pinned", chain=cfg).estimate(2.0 ** -k, 0.5)
        gaps.append((q.value - b.value, math.hypot(q.stderr, b.stderr)))
    assert all(g >= -3 * s for g, s in gaps), gaps
    for (g0, s0), (g1, s1) in zip(gaps, gaps[1:]):
        assert g1 <= g0 + 3 * math.hypot(s0, s1), gaps


@pytest.mark.criterion(8, "f_hom is independent of kappa within 3 stderr")
@pytest.mark.parametrize("M", M_VALUES)
def test_c8_kappa_independence(homogenization, M):
    res, _ = homogenization
    a, b = (res[M].by_kappa[k] for k in KAPPAS)
    comb = math.hypot(a["stderr"], b["stderr"])
    assert abs(a["limit"] - b["limit"]) <= 3 * comb, (a, b)


def _verify_small(tmp_path):
    doc = json.loads((CONFIGS / "verify_default.json").read_text())
    doc["verify"] = {"n_zigzag": 50}
    p = tmp_path / "verify_small.json"
    p.write_text(json.dumps(doc))
    return p


@pytest.mark.criterion(9, "bitwise-identical CSV across reruns and thread counts")
@pytest.mark.parametrize("name", ["homogenize_gaussian", "free_energy_small", "scan_boundary", "sbv_probe",
                                  "verify_small"])
def test_c9_determinism(tmp_path, name):
    cfg = _verify_small(tmp_path) if name == "verify_small" else CONFIGS / f"{name}.json"
    blobs = []
    for run, threads in enumerate((1, 8, 1)):
        out = tmp_path / f"run{run}"
        assert main(["--config", str(cfg), "--out", str(out), "--threads", str(threads)]) in (0, 1)
        blobs.append((out / "results.csv").read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]
    assert b"FAILED" not in blobs[0]


@pytest.mark.criterion(10, "documentation states the limit-theorem substitution mapping")
def test_c10_non_reproducibility_note():
    text = (ROOT / "README.md").read_text(encoding="utf-8")
    section = text.split("## Acceptance criteria", 1)[1].split("\n## ", 1)[0]
    for n in range(1, 10):
        assert re.search(rf"^\|\s*{n}\s*\|", section, re.M), f"criterion {n} missing from mapping table"
    for phrase in ("quasiconvex", "BV-elliptic", "large deviation", "not checkable"):
        assert phrase in section, phrase
