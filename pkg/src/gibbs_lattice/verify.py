"""
Finite-ε property checks for the inequalities behind the limit theorems.

Every check returns :class:`CheckResult` records with a status of
``"pass"``, ``"fail"`` or ``"inconclusive"``.  Statistical comparisons are
inconclusive, never passing, when the combined error is not below a third of
the gap they are meant to resolve.

Measure-type properties are stated for the extensive free energy
``E(A) = |A| F(A) = -eps^d log Z(A)``; subadditivity and inner regularity
use the shifted functional ``E + C (||grad u||_p^p + |A|)`` that is
nonnegative under the lower partition bound.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .free_energy import FreeEnergyEstimate, estimate_free_energy, exact_free_energy
from .hamiltonian import HamiltonianSpec, sbv_zigzag_constant, zigzag_constant
from .lattice import (AffineProfile, Box, DiscretizedField, Domain, LatticeRegion, Profile,
                      half_lattice_directions, reachable_sites)
from .potentials import DecayWeights, SBVPotential, SobolevPotential
from .quadrature import log_partition
from .sampler import ChainConfig, CompiledSystem, ConstraintSpec

logger = logging.getLogger(__name__)

__all__ = [
    "CheckResult",
    "Instance",
    "check_zigzag",
    "check_free_energy_inequalities",
    "check_tightness",
    "check_measure_property",
    "fit_monotonicity_constant",
    "default_battery",
    "summarize",
]


@dataclass
class CheckResult:
    name: str
    digest: str
    status: str
    witness: dict = field(default_factory=dict)
    seed: Optional[int] = None

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _status(ok: bool, gap: float = None, sigma: float = 0.0) -> str:
    if sigma > 0 and gap is not None and sigma >= abs(gap) / 3:
        return "inconclusive"
    return "pass" if ok else "fail"


# --------------------------------------------------------------------------- zig-zag


def _nn_sum(field: DiscretizedField, cost) -> float:
    region = field.region
    total = 0.0
    for k in range(region.dim_d):
        e = np.zeros(region.dim_d, dtype=np.int64)
        e[k] = 1
        o = reachable_sites(region, e)
        total += float(np.sum(cost(np.linalg.norm(field.values[field.index_of(o + e)]
                                                  - field.values[field.index_of(o)], axis=1))))
    return total


def _long_sum(field: DiscretizedField, inner: LatticeRegion, xi, cost) -> float:
    o = reachable_sites(inner, xi)
    g = np.linalg.norm(field.values[field.index_of(o + xi)] - field.values[field.index_of(o)], axis=1)
    return float(np.sum(cost(g / np.linalg.norm(xi))))


def check_zigzag(n_fields: int = 1000, epsilon: float = 1 / 16, p: float = 2.0, max_xi: float = 6.0,
                 seed: int = 0, sbv: Optional[SBVPotential] = None, spike: bool = True) -> list:
    """Long-range differences bounded by nearest-neighbour ones on random 2-D fields.

    ``sbv`` switches the cost to ``g_eps`` and the constant to ``(2d)^2 |xi|``.
    """
    d = 2
    domain = Domain.unit_cube(d)
    region = LatticeRegion(epsilon, domain)
    shrink = 2 * math.sqrt(d) * epsilon
    inner = region.with_domain(Domain((Box((shrink,) * d, (1 - shrink,) * d),)))
    dirs = half_lattice_directions(d, max_xi)
    if sbv is None:
        cost = lambda t: t ** p
        const = lambda xi: zigzag_constant(d, p)
        name = "zigzag_sobolev"
    else:
        cost = lambda t: sbv.bond_energy(t, epsilon)
        const = lambda xi: sbv_zigzag_constant(d, xi)
        name = "zigzag_sbv"
    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_nn = 0.0
    fails = []
    fields = []
    for k in range(n_fields):
        kind = k % 3
        if kind == 0:
            vals = rng.standard_normal((len(region), 1))
        elif kind == 1:
            vals = np.cumsum(rng.standard_normal((len(region), 1)), axis=0) / 4
        else:
            amp = rng.uniform(0.1, 50) if sbv is not None else rng.uniform(0.1, 5)
            vals = amp * np.sin(region.positions @ rng.uniform(-8, 8, size=(d, 1)) + rng.uniform(0, 6.3))
        fields.append(vals)
    if spike:
        vals = np.zeros((len(region), 1))
        vals[len(region) // 2] = 1e3
        fields.append(vals)
    for k, vals in enumerate(fields):
        f = DiscretizedField(region, vals)
        rhs = _nn_sum(f, cost)
        for xi in dirs:
            lhs = _long_sum(f, inner, xi, cost)
            ratio = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
            if float(np.dot(xi, xi)) == 1.0:
                worst_nn = max(worst_nn, ratio)
            worst = max(worst, ratio / const(xi))
            if lhs > const(xi) * rhs * (1 + 1e-12):
                fails.append({"field": k, "xi": xi.tolist(), "lhs": lhs, "rhs": rhs})
    witness = {"fields": len(fields), "directions": len(dirs), "max_ratio_over_constant": worst,
               "max_nearest_ratio": worst_nn, "constant_sobolev": zigzag_constant(d, p),
               "failures": fails[:10]}
    status = "pass" if not fails and worst_nn <= 1.0 + 1e-12 else "fail"
    return [CheckResult(name, _digest({"n": n_fields, "eps": epsilon, "p": p, "xi": max_xi, "sbv": sbv is not None}),
                        status, witness, seed)]


# --------------------------------------------------------------------------- instances


@dataclass
class Instance:
    """Small 1-D chain problem; ``domain`` is a tuple of intervals."""

    intervals: tuple
    epsilon: float
    u: object
    kappa: float
    p: float = 2.0
    c0: float = 1.0
    beta: float = 1.0

    def domain(self) -> Domain:
        return Domain(tuple(Box((a,), (b,)) for a, b in self.intervals))

    def potential(self) -> SobolevPotential:
        return SobolevPotential(self.p, DecayWeights(1, c0=self.c0, support="nearest"))

    def build(self, domain: Optional[Domain] = None, mode: str = "bulk", kappa: Optional[float] = None,
              u=None):
        region = LatticeRegion(self.epsilon, domain or self.domain())
        c = ConstraintSpec(self.u if u is None else u, region, self.kappa if kappa is None else kappa,
                           self.p, mode)
        h = HamiltonianSpec(self.potential(), region, c.hamiltonian_mode(), beta=self.beta)
        return h, c

    def describe(self) -> dict:
        return {"intervals": self.intervals, "epsilon": self.epsilon, "kappa": self.kappa, "p": self.p,
                "c0": self.c0, "beta": self.beta, "u": getattr(self.u, "description", repr(self.u))}


def _profile(slope: float, amp: float, phase: float) -> Profile:
    prof = Profile(lambda x: slope * x[:, 0] + amp * np.sin(2 * np.pi * x[:, 0] + phase))
    prof.description = f"{slope}*x + {amp}*sin(2 pi x + {phase})"
    prof.grad = lambda x: slope + 2 * np.pi * amp * np.cos(2 * np.pi * x + phase)
    return prof


def _grad_norm(u, domain: Domain, p: float) -> float:
    total = 0.0
    for b in domain.boxes:
        total += integrate.quad(lambda x: abs(u.grad(x)) ** p, b.lo[0], b.hi[0], limit=200)[0]
    return total


def _extensive(est: FreeEnergyEstimate, domain: Domain) -> tuple:
    return est.value * domain.volume, est.stderr * domain.volume


def random_instances(n: int, seed: int, epsilon: float = 0.2, kappa_range=(0.3, 1.5)) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        u = _profile(float(rng.uniform(-1, 1)), float(rng.uniform(0, 0.3)), float(rng.uniform(0, 6.28)))
        out.append(Instance(((0.0, 1.0),), epsilon, u, float(rng.uniform(*kappa_range)),
                            c0=float(rng.uniform(0.5, 2.0))))
    return out


def _inclusion_gap(inst: Instance, A: Domain, B: Domain, C: float):
    ha, ca = inst.build(A)
    hb, cb = inst.build(B)
    ea, sa = _extensive(exact_free_energy(ha, ca), A)
    eb, sb = _extensive(exact_free_energy(hb, cb), B)
    ga = _grad_norm(inst.u, A, inst.p) + A.volume
    gb = _grad_norm(inst.u, B, inst.p) + B.volume
    return ea + C * ga, eb + C * gb, math.hypot(sa, sb)


_CALIBRATION_SETS = ((0.2, 0.3), (0.35, 0.65), (0.0, 0.5), (0.1, 0.9), (0.0, 1.0))


def fit_monotonicity_constant(instances: Sequence[Instance], safety: float = 2.0,
                              sets: Sequence[tuple] = _CALIBRATION_SETS) -> float:
    """Constant for the shifted functional, fitted on calibration instances.

    ``C`` must make ``E + C (||grad u||_p^p + |A|)`` nonnegative on every
    calibration interval (narrow ones holding a single site give the largest
    requirement) and the almost-monotonicity inequality hold; the larger
    requirement is multiplied by ``safety``.
    """
    need = 0.0
    for inst in instances:
        A, B = _nested_pair(inst)
        l0, r0, _ = _inclusion_gap(inst, A, B, 0.0)
        ga = _grad_norm(inst.u, A, inst.p) + A.volume
        gb = _grad_norm(inst.u, B, inst.p) + B.volume
        if gb > ga:
            need = max(need, (l0 - r0) / (gb - ga))
        for a, b in sets:
            D = Domain.interval(a, b)
            if len(LatticeRegion(inst.epsilon, D)) == 0:
                continue
            e, _, _ = _E(inst, D, inst.kappa)
            need = max(need, -e / (_grad_norm(inst.u, D, inst.p) + D.volume))
    return max(safety * need, 1.0)


def _nested_pair(inst: Instance):
    return Domain.interval(0.0, 0.5), Domain.interval(0.0, 1.0)


def check_free_energy_inequalities(instances: Sequence[Instance], C: float, delta: float = 0.25) -> list:
    """κ-monotonicity, ``F <= F_inf`` and almost-monotonicity on quadrature instances."""
    out = []
    for inst in instances:
        dig = _digest(inst.describe())
        h, c = inst.build()
        f1 = exact_free_energy(h, c)
        f2 = exact_free_energy(h, c.with_kappa(inst.kappa + delta))
        gap = f1.value - f2.value
        sig = math.hypot(f1.stderr, f2.stderr)
        out.append(CheckResult("kappa_monotone", dig, _status(gap >= -3 * sig, gap, sig),
                               {"F_kappa": f1.value, "F_kappa_plus": f2.value, "stderr": sig, "delta": delta}))
        hp, cp = inst.build(mode="pinned")
        fi = exact_free_energy(hp, cp)
        gap = fi.value - f1.value
        sig = math.hypot(fi.stderr, f1.stderr)
        out.append(CheckResult("F_le_F_inf", dig, _status(gap >= -3 * sig, gap, sig),
                               {"F": f1.value, "F_inf": fi.value, "stderr": sig}))
        A, B = _nested_pair(inst)
        lhs, rhs, sig = _inclusion_gap(inst, A, B, C)
        gap = rhs - lhs
        out.append(CheckResult("almost_monotone", dig, _status(gap >= -3 * sig, gap, sig),
                               {"lhs": lhs, "rhs": rhs, "C": C, "stderr": sig}))
    return out


# --------------------------------------------------------------------------- tightness


def _tight_instance_values(inst: Instance, K_grid: Sequence[float]):
    """Exact restricted integrals for a one-dof convex instance.

    Returns ``log int_{V, H >= K eps^-d |A|} exp(-H)``, the full ``log Z`` and
    the half-strength ``log Z_{1/2}``.
    """
    h, c = inst.build()
    sys = CompiledSystem(h, c)
    if sys.dof != 1:
        raise ValueError("tightness instances must have exactly one degree of freedom")
    eps, vol = h.region.epsilon, h.region.volume
    beta = h.beta
    H = lambda x: beta * float(sys.energies(np.array([[[x]]]))[0])
    r = (sys.budget / sys.cpow) ** (1 / sys.p) if math.isfinite(sys.budget) else math.inf
    xm = optimize.minimize_scalar(H, bounds=(-r, r) if math.isfinite(r) else None,
                                  method="bounded" if math.isfinite(r) else "brent").x
    hmin = H(xm)
    lo_lim, hi_lim = (-r, r) if math.isfinite(r) else (-np.inf, np.inf)

    def integral(a, b, g=lambda x: math.exp(-(H(x) - hmin))):
        if b <= a:
            return 0.0
        return integrate.quad(g, a, b, limit=400, epsabs=0, epsrel=1e-11, points=None if not
                              (a < xm < b and np.isfinite(a) and np.isfinite(b)) else [xm])[0]

    z = integral(lo_lim, xm) + integral(xm, hi_lim)
    zh = integral(lo_lim, xm, lambda x: math.exp(-(H(x) - hmin) / 2)) + \
        integral(xm, hi_lim, lambda x: math.exp(-(H(x) - hmin) / 2))
    log_z = math.log(z) - hmin
    log_zh = math.log(zh) - hmin / 2
    out = []
    for K in K_grid:
        level = K * vol / eps
        if level <= hmin:
            out.append(log_z)
            continue
        f = lambda x: H(x) - level
        left = -math.inf if not np.isfinite(lo_lim) else lo_lim
        span = 1.0
        while f(xm - span) < 0 and xm - span > left:
            span *= 2
        a = optimize.brentq(f, max(xm - span, left), xm) if f(max(xm - span, left)) >= 0 else left
        span = 1.0
        right = hi_lim
        while f(xm + span) < 0 and xm + span < right:
            span *= 2
        b = optimize.brentq(f, xm, min(xm + span, right)) if f(min(xm + span, right)) >= 0 else right
        part = integral(lo_lim, a) + integral(b, hi_lim)
        out.append(math.log(part) - hmin if part > 0 else -math.inf)
    return out, log_z, log_zh, sys


def check_tightness(instances: Sequence[Instance], K_grid: Sequence[float] = (0.5, 1, 2, 4, 8, 16)) -> list:
    """Restricted partition mass against ``exp(-K/2 eps^-d|A| + D (eps^-d|A| + sum |grad phi_u|^p))``."""
    out = []
    for inst in instances:
        dig = _digest(inst.describe())
        vals, log_z, log_zh, sys = _tight_instance_values(inst, K_grid)
        region = sys.hspec.region
        n_eff = region.volume / region.epsilon ** region.dim_d
        grad = float(np.sum((np.linalg.norm(sys.dc, axis=1) * sys.inv) ** inst.p))
        D = max(log_zh, 0.0) / (n_eff + grad)
        bounds = [-0.5 * K * n_eff + D * (n_eff + grad) for K in K_grid]
        ok = all(v <= b + 1e-9 for v, b in zip(vals, bounds))
        nontrivial = [K for K, b in zip(K_grid, bounds) if b < log_z]
        K0 = min(nontrivial) if nontrivial else math.inf
        out.append(CheckResult("tightness_bound", dig, "pass" if ok else "fail",
                               {"K": list(K_grid), "log_restricted": vals, "log_bound": bounds, "D": D,
                                "K0": K0, "log_Z": log_z}))
        dec = []
        okd = True
        for K, v in zip(K_grid, vals):
            if K < K0 or 2 * K not in K_grid:
                continue
            v2 = vals[list(K_grid).index(2 * K)]
            dec.append((K, v, v2))
            okd &= v2 <= v - 0.5 * K * n_eff + 1e-9
        out.append(CheckResult("tightness_doubling", dig, "pass" if okd else "fail",
                               {"pairs": dec, "rule": "log I(2K) <= log I(K) - K eps^-d |A| / 2"}))
    return out


# --------------------------------------------------------------------------- measure properties


def _E(inst: Instance, domain: Domain, kappa: float, config: Optional[ChainConfig] = None, u=None):
    h, c = inst.build(domain, kappa=kappa, u=u)
    est = estimate_free_energy(h, c, config)
    return est.value * domain.volume, est.stderr * domain.volume, est


def check_measure_property(family: Sequence[Instance], C: float, config: Optional[ChainConfig] = None,
                           slab_counts: Sequence[int] = (1, 2, 4)) -> list:
    """Additivity sandwich, subadditivity, inner regularity, locality and translation invariance."""
    out = []
    for inst in family:
        dig = _digest(inst.describe())
        p = inst.p
        # disjoint pair sandwich
        A = Domain.interval(0.0, 0.5)
        B = Domain.interval(0.5, 1.0)
        AB = A.union(B)
        k = inst.kappa
        kA = k * (AB.volume / A.volume) ** (1 / p)
        kB = k * (AB.volume / B.volume) ** (1 / p)
        eab, sab, _ = _E(inst, AB, k)
        ea, sa, _ = _E(inst, A, k)
        eb, sb, _ = _E(inst, B, k)
        ea2, sa2, _ = _E(inst, A, kA)
        eb2, sb2, _ = _E(inst, B, kB)
        lo, hi = ea2 + eb2, ea + eb
        sig = math.sqrt(sab ** 2 + sa ** 2 + sb ** 2 + sa2 ** 2 + sb2 ** 2)
        ok = lo - 3 * sig <= eab <= hi + 3 * sig
        gap = min(eab - lo, hi - eab)
        out.append(CheckResult("disjoint_sandwich", dig, _status(ok, gap if gap > 0 else None, sig),
                               {"lower": lo, "E_union": eab, "upper": hi, "stderr": sig}))
        # subadditivity with compactly contained sets, slab count as a knob
        Aset, Bset = (0.0, 0.6), (0.4, 1.0)
        sens = []
        ok_all = True
        for n in slab_counts:
            shrink = (Aset[1] - Bset[0]) / (2 * n) / 2
            Ap = (Aset[0] + shrink, Aset[1] - shrink)
            Bp = (Bset[0] + shrink, Bset[1] - shrink)
            U = Domain.interval(min(Ap[0], Bp[0]), max(Ap[1], Bp[1]))
            dA = Domain.interval(*Aset)
            dB = Domain.interval(*Bset)
            eu, su, _ = _E(inst, U, k)
            e1, s1, _ = _E(inst, dA, k)
            e2, s2, _ = _E(inst, dB, k)
            shift = lambda D: C * (_grad_norm(inst.u, D, p) + D.volume)
            lhs = eu + shift(U)
            rhs = e1 + shift(dA) + e2 + shift(dB)
            s = math.sqrt(su ** 2 + s1 ** 2 + s2 ** 2)
            sens.append({"slabs": n, "lhs": lhs, "rhs": rhs, "stderr": s})
            ok_all &= lhs <= rhs + 3 * s
        out.append(CheckResult("subadditivity", dig, "pass" if ok_all else "fail",
                               {"sensitivity": sens, "C": C}))
        # inner regularity along a nested exhaustion of (0, 1)
        seq = []
        for w in (0.3, 0.2, 0.1, 0.0):
            D = Domain.interval(w / 2, 1 - w / 2)
            e, s, _ = _E(inst, D, k)
            seq.append((e + C * (_grad_norm(inst.u, D, p) + D.volume), s))
        mono = all(b[0] >= a[0] - 3 * math.hypot(a[1], b[1]) for a, b in zip(seq, seq[1:]))
        shrinking = abs(seq[-1][0] - seq[-2][0]) <= abs(seq[-1][0] - seq[0][0]) + 1e-12
        out.append(CheckResult("inner_regularity", dig, "pass" if (mono and shrinking) else "fail",
                               {"sequence": seq}))
        # locality: two profiles agreeing on A = (0, 1/2)
        A = Domain.interval(0.0, 0.5)
        v = Profile(lambda x, u=inst.u: np.where(x[:, 0] < 0.5, u(x)[:, 0], u(x)[:, 0] + 7.0 * (x[:, 0] - 0.5)))
        e1, _, est1 = _E(inst, A, k, config)
        e2, _, est2 = _E(inst, A, k, config, u=v)
        out.append(CheckResult("locality", dig, "pass" if est1.value == est2.value else "fail",
                               {"F_u": est1.value, "F_v": est2.value, "bitwise": est1.value == est2.value}))
        z = 0.731
        e3, _, est3 = _E(inst, Domain.interval(0, 1), k, config)
        e4, _, est4 = _E(inst, Domain.interval(0, 1), k, config, u=inst.u.shifted(z))
        out.append(CheckResult("translation_invariance", dig, "pass" if est3.value == est4.value else "fail",
                               {"F_u": est3.value, "F_u_plus_z": est4.value, "z": z}))
    return out


def _mc_locality(seed: int, threads: int = 1) -> list:
    """Locality and translation invariance on a TI-sized instance (bitwise)."""
    inst = Instance(((0.0, 1.0),), 1 / 16, _profile(0.4, 0.2, 0.3), 0.5)
    cfg = ChainConfig(steps=600, burn_in=100, seed=seed, chains=2)
    A = Domain.interval(0.0, 0.5)
    v = Profile(lambda x, u=inst.u: np.where(x[:, 0] < 0.5, u(x)[:, 0], -3.0 * x[:, 0]))
    h1, c1 = inst.build(A)
    h2, c2 = inst.build(A, u=v)
    from .free_energy import ti_free_energy
    f1 = ti_free_energy(h1, c1, cfg, threads=threads, reference_samples=20000)
    f2 = ti_free_energy(h2, c2, cfg, threads=threads, reference_samples=20000)
    h3, c3 = inst.build(A, u=inst.u.shifted(-1.25))
    f3 = ti_free_energy(h3, c3, cfg, threads=threads, reference_samples=20000)
    dig = _digest(inst.describe())
    return [CheckResult("locality_mc", dig, "pass" if f1.value == f2.value else "fail",
                        {"F_u": f1.value, "F_v": f2.value}, seed),
            CheckResult("translation_invariance_mc", dig, "pass" if f1.value == f3.value else "fail",
                        {"F_u": f1.value, "F_u_plus_z": f3.value}, seed)]


def default_battery(seed: int = 0, n_zigzag: int = 1000, threads: int = 1) -> list:
    """The release battery: every check on its default instances."""
    results = []
    results += check_zigzag(n_zigzag, seed=seed)
    results += check_zigzag(max(1, n_zigzag // 10), seed=seed + 1,
                            sbv=SBVPotential(DecayWeights(2, support="nearest", mode="sbv")))
    calib = random_instances(2, seed + 100) + random_instances(2, seed + 101, epsilon=0.25)
    C = fit_monotonicity_constant(calib)
    held = random_instances(4, seed + 200)
    results += check_free_energy_inequalities(held, C)
    tight = [Instance(((0.0, 1.0),), 0.5, _profile(s, 0.0, 0.0), k) for s, k in ((0.0, 10.0), (0.5, 1.0), (1.0, 0.8))]
    results += check_tightness(tight)
    fam = random_instances(2, seed + 300, epsilon=0.25)
    results += check_measure_property(fam, C)
    results += _mc_locality(seed, threads)
    for r in results:
        if r.seed is None:
            r.seed = seed
    return results


def summarize(results: Sequence[CheckResult]) -> dict:
    counts = {"pass": 0, "fail": 0, "inconclusive": 0}
    for r in results:
        counts[r.status] += 1
    n = max(len(results), 1)
    return {"counts": counts, "inconclusive_rate": counts["inconclusive"] / n,
            "checks": [{"name": r.name, "status": r.status, "witness": r.witness, "seed": r.seed,
                        "digest": r.digest} for r in results]}
