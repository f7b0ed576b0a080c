"""
Constrained free energies ``F = -(eps^d/|A|) log Z`` and their limit scans.

Two estimators share one compiled representation of the problem:

* :func:`exact_free_energy` integrates the constrained partition function by
  nested quadrature (at most four scalar unknowns);
* :func:`ti_free_energy` combines a tractable reference system, the reference
  probability of the admissible set (direct sampling), and thermodynamic
  integration along ``H_lam = lam beta H + (1 - lam) H_ref``.

The per-volume prefactor ``eps^d/|A|`` is used for both ``F`` and ``F_inf``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, linalg, optimize, special
from scipy.stats import norm

from .hamiltonian import HamiltonianSpec
from .lattice import LatticeRegion
from .potentials import DecayWeights, SBVPotential, SobolevPotential
from .quadrature import MAX_DOF, DimensionError, log_partition
from .sampler import (ChainConfig, CompiledSystem, ConstraintSpec, Reference, _run_chains, autotune,
                      batch_means, chain_rng)

logger = logging.getLogger(__name__)

__all__ = [
    "FreeEnergyEstimate",
    "TIError",
    "exact_free_energy",
    "ti_free_energy",
    "estimate_free_energy",
    "gaussian_reference",
    "product_reference",
    "reference_free_energy_G",
    "FreeEnergyProblem",
    "LimitScan",
    "limit_scan",
    "rate_functional_report",
    "NORMALIZATION",
]

NORMALIZATION = "eps^d/|A| for both F and F_inf"


class TIError(RuntimeError):
    """A thermodynamic-integration stage failed its diagnostics."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class FreeEnergyEstimate:
    value: float
    stderr: float
    method: str
    metadata: dict = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        return self.metadata.get("epsilon")

    @property
    def kappa(self) -> float:
        return self.metadata.get("kappa")


def _prefactor(region: LatticeRegion) -> float:
    return region.epsilon ** region.dim_d / region.volume


def _metadata(hspec: HamiltonianSpec, constraint: ConstraintSpec, **extra) -> dict:
    md = {
        "epsilon": hspec.region.epsilon,
        "kappa": constraint.kappa,
        "mode": constraint.mode,
        "cutoff": hspec.cutoff,
        "tail_bound": hspec.tail_bound,
        "beta": hspec.beta,
        "n_free": hspec.n_free,
        "normalization": NORMALIZATION,
    }
    md.update(extra)
    return md


def exact_free_energy(hspec: HamiltonianSpec, constraint: ConstraintSpec,
                      panels: Optional[int] = None) -> FreeEnergyEstimate:
    """Free energy by nested quadrature; ``stderr`` is the quadrature residual."""
    sys = CompiledSystem(hspec, constraint)
    if sys.dof > MAX_DOF:
        raise DimensionError(f"{sys.dof} degrees of freedom exceed {MAX_DOF}; use ti_free_energy")
    q = log_partition(sys, panels)
    pre = _prefactor(hspec.region)
    return FreeEnergyEstimate(-pre * q.log_z, pre * q.residual, "exact_quadrature",
                              _metadata(hspec, constraint, log_z=q.log_z, panels=q.panels))


# --------------------------------------------------------------------------- references


def _log_gen_gauss(m: int, p: float, a: float) -> float:
    """``log int_{R^m} exp(-a |y|^p) dy``."""
    return (math.log(2.0) + 0.5 * m * math.log(math.pi) + math.lgamma(m / p) - math.lgamma(m / 2)
            - math.log(p) - (m / p) * math.log(a))


def product_reference(sys: CompiledSystem, theta: float):
    """``theta sum |eps psi|^p``: returns the reference, ``log Z_ref`` and a direct sampler."""
    eps = sys.hspec.region.epsilon
    m, p = sys.m, sys.p
    a = theta * eps ** p
    log_z = sys.n_free * _log_gen_gauss(m, p, a)

    def draw(rng, k):
        r = (rng.gamma(m / p, 1.0, size=(k, sys.n_free)) / a) ** (1.0 / p)
        d = rng.standard_normal((k, sys.n_free, m))
        d /= np.linalg.norm(d, axis=2, keepdims=True)
        return r[:, :, None] * d

    return Reference("product", theta), log_z, draw


def _tilted_spring(beta_w: float, g0: float, f: Callable, eps: float) -> float:
    """Spring ``k`` matching the variance of ``exp(lam t - beta_w f(t))`` whose mean is ``g0``."""
    # grid wide enough for the tilted density; f grows at least like t^p
    scale = max(1.0, abs(g0))
    t = np.linspace(-40 * scale - 10, 40 * scale + 10, 40001)
    ft = beta_w * f(np.abs(t), eps)

    def moments(lam):
        a = lam * t - ft
        a -= a.max()
        wgt = np.exp(a)
        z = wgt.sum()
        mu = float((wgt * t).sum() / z)
        var = float((wgt * (t - mu) ** 2).sum() / z)
        return mu, var

    try:
        if g0 == 0.0:
            lam = 0.0
        else:
            lo, hi = -1.0, 1.0
            while moments(lo)[0] > g0:
                lo *= 2
            while moments(hi)[0] < g0:
                hi *= 2
            lam = optimize.brentq(lambda x: moments(x)[0] - g0, lo, hi, xtol=1e-12)
        var = moments(lam)[1]
    except (ValueError, OverflowError, FloatingPointError):
        var = moments(0.0)[1]
    if not np.isfinite(var) or var <= 0:
        var = moments(0.0)[1]
    return 0.5 / var


def _gaussian_precision(sys: CompiledSystem, k: np.ndarray, theta: float) -> np.ndarray:
    n = sys.n_free
    eps = sys.hspec.region.epsilon
    Q = np.zeros((n, n))
    c = k * sys.inv ** 2
    for b in range(len(sys.ia)):
        i, j = sys.ia[b], sys.ib[b]
        if i < n:
            Q[i, i] += c[b]
        if j < n:
            Q[j, j] += c[b]
        if i < n and j < n:
            Q[i, j] -= c[b]
            Q[j, i] -= c[b]
    Q[np.diag_indices(n)] += theta * eps ** 2
    return Q


def reference_centre(sys: CompiledSystem, springs: np.ndarray) -> np.ndarray:
    """Minimiser of the spring surrogate ``sum_b k_b |dc_b + Delta mu_b|^2 / |xi_b|^2``.

    Centring the reference there keeps the interpolating family's mean close
    to the target's, so no stage has to transport the chain along the slow
    long-wavelength modes.  Zero modes (no pinned band) are resolved by the
    minimum-norm solution, and ``mu`` is shrunk towards zero when it would
    use more than a quarter of the constraint budget.
    """
    n, m = sys.n_free, sys.m
    mu = np.zeros((sys.n_rows, m))
    if n == 0 or not len(sys.ia) or not np.any(sys.dc):
        return mu
    L = _gaussian_precision(sys, springs, 0.0)
    c = springs * sys.inv ** 2
    g = np.zeros((n, m))
    ia, ib = sys.ia, sys.ib
    for b in range(len(ia)):
        if ib[b] < n:
            g[ib[b]] += c[b] * sys.dc[b]
        if ia[b] < n:
            g[ia[b]] -= c[b] * sys.dc[b]
    sol = linalg.lstsq(L, -g, cond=1e-12)[0]
    if math.isfinite(sys.budget):
        used = float(sys.constraint_sums(sol[None])[0])
        if used > 0.25 * sys.budget:
            sol *= (0.25 * sys.budget / used) ** (1.0 / sys.p)
    mu[:n] = sol
    return mu


def gaussian_reference(sys: CompiledSystem, theta: float, springs: Optional[np.ndarray] = None,
                       mu: Optional[np.ndarray] = None):
    """Deviation-space Gaussian chain reference centred at ``mu``.

    Bond springs are moment-matched to the one-bond tilted density of the
    target; ``theta`` adds an on-site tether ``theta eps^2 |psi - mu|^2``.
    Returns ``(reference, log Z_ref, sampler)`` or raises ``LinAlgError``
    when the precision matrix is not positive definite.
    """
    if springs is None:
        springs = bond_springs(sys)
    Q = _gaussian_precision(sys, springs, theta)
    L = linalg.cholesky(Q, lower=True)
    n, m = sys.n_free, sys.m
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    log_z = 0.5 * n * m * math.log(math.pi) - 0.5 * m * logdet
    centre = np.zeros((n, m)) if mu is None else np.asarray(mu)[:n]

    def draw(rng, kk):
        z = rng.standard_normal((n, kk * m))
        x = linalg.solve_triangular(L, z, lower=True, trans="T") / math.sqrt(2.0)
        return x.T.reshape(kk, m, n).transpose(0, 2, 1) + centre

    return Reference("gaussian", theta, springs, mu), log_z, draw


def bond_springs(sys: CompiledSystem) -> np.ndarray:
    pot = sys.hspec.potential
    eps = sys.hspec.region.epsilon
    g0 = np.linalg.norm(sys.dc, axis=1) * sys.inv if len(sys.ia) else np.zeros(0)
    bw = sys.beta * sys.w
    keys = np.round(np.stack([bw, g0], axis=1), 12) if len(bw) else np.zeros((0, 2))
    out = np.zeros(len(bw))
    cache = {}
    for b, (x, g) in enumerate(keys):
        key = (x, g)
        if key not in cache:
            cache[key] = _tilted_spring(float(x), float(g), pot.bond_energy, eps) if x > 0 else 0.0
        out[b] = cache[key]
    return out


def _wilson(hits: int, n: int, z: float = 1.0):
    if n == 0:
        return 0.0, 0.0, 1.0
    ph = hits / n
    den = 1 + z * z / n
    center = (ph + z * z / (2 * n)) / den
    half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / den
    return ph, max(center - half, 0.0), min(center + half, 1.0)


def _reference_probability(sys: CompiledSystem, draw, rng, n_samples: int):
    if math.isinf(sys.budget) and np.all(np.isinf(sys.clamp)):
        return 0.0, 0.0, 1.0
    hits = 0
    done = 0
    batch = max(1, min(20000, 2_000_000 // max(1, sys.dof)))
    while done < n_samples:
        k = min(batch, n_samples - done)
        hits += int(np.sum(sys.feasible(draw(rng, k))))
        done += k
    ph, lo, hi = _wilson(hits, done)
    if hits == 0:
        return -math.inf, math.inf, 0.0
    return math.log(ph), (math.log(hi) - math.log(max(lo, 1e-300))) / 2, ph


def _tether_start(sys: CompiledSystem) -> float:
    eps = sys.hspec.region.epsilon
    n, m = sys.n_free, sys.m
    if math.isfinite(sys.budget):
        r_site = (sys.budget / max(n, 1) / sys.cpow) ** (1 / sys.p)
    elif np.any(np.isfinite(sys.clamp)):
        r_site = float(np.min(sys.clamp))
    else:
        r_site = 1.0
    return 2.0 * m / (eps ** 2 * r_site ** 2)


def build_reference(sys: CompiledSystem, kind: str, rng, n_samples: int):
    """Reference with ``P_ref(V) >= 1e-2`` after rescaling when it starts below ``1e-3``."""
    history = []
    if kind == "gaussian":
        springs = bond_springs(sys)
        mu = reference_centre(sys, springs)
        theta = 0.0
        try:
            ref, log_z, draw = gaussian_reference(sys, theta, springs, mu)
        except linalg.LinAlgError:
            theta = _tether_start(sys) / 16
            ref, log_z, draw = gaussian_reference(sys, theta, springs, mu)
    elif kind == "product":
        springs = None
        theta = _tether_start(sys) / 16
        ref, log_z, draw = product_reference(sys, theta)
    else:
        raise ValueError(f"unknown reference kind {kind!r}")
    logp, logp_err, ph = _reference_probability(sys, draw, rng, n_samples)
    history.append((theta, ph))
    if ph < 1e-3:
        if theta == 0.0:
            theta = _tether_start(sys) / 16
        for _ in range(40):
            if kind == "gaussian":
                ref, log_z, draw = gaussian_reference(sys, theta, springs, mu)
            else:
                ref, log_z, draw = product_reference(sys, theta)
            logp, logp_err, ph = _reference_probability(sys, draw, rng, n_samples)
            history.append((theta, ph))
            if ph >= 1e-2:
                break
            theta *= 4.0
        else:
            raise TIError("reference rescaling could not reach feasible mass 1e-2",
                          {"history": history})
    return ref, log_z, logp, logp_err, history


def _lambda_stage(sys, cfg, lam, ref, threads, stream):
    scale = cfg.proposal_scale
    if scale is None:
        scale = autotune(sys.hspec, sys.constraint, cfg.seed, lam, ref, system=sys, stream=stream)
    chains = _run_chains(sys, cfg, scale, lam, ref, False, threads, stream=(stream,))
    series = [sys.beta * c.energy - c.ref_energy for c in chains]
    mean, se = batch_means(series)
    allv = np.concatenate(series)
    acc = float(np.mean([c.acceptance for c in chains]))
    return {"lam": float(lam), "mean": mean, "stderr": se, "acceptance": acc, "scale": float(scale),
            "q_lo": float(np.quantile(allv, 0.005)), "q_hi": float(np.quantile(allv, 0.995))}


def _ti_integral(sys, cfg, ref, n_nodes, threads, stream_base):
    x, w = np.polynomial.legendre.leggauss(n_nodes)
    lam = 0.5 * (x + 1)
    w = 0.5 * w
    stages = [_lambda_stage(sys, cfg, l, ref, threads, stream_base + j) for j, l in enumerate(lam)]
    bad = [s for s in stages if s["acceptance"] < 0.01]
    if bad:
        raise TIError(f"acceptance below 1% at lambda={bad[0]['lam']:.4f}", {"stages": stages})
    for a, b in zip(stages, stages[1:]):
        if a["q_hi"] < b["q_lo"] or b["q_hi"] < a["q_lo"]:
            raise TIError(f"non-overlapping stages at lambda={a['lam']:.4f} and {b['lam']:.4f}",
                          {"stages": stages})
    m = np.array([s["mean"] for s in stages])
    se = np.array([s["stderr"] for s in stages])
    return float(np.sum(w * m)), float(math.sqrt(np.sum((w * se) ** 2))), lam, m, se, stages


def _cubic_disagrees(lam, m, se, total, total_se) -> bool:
    if len(lam) < 5:
        return False
    sig = np.where(se > 0, se, np.max(se) if np.max(se) > 0 else 1.0)
    coef = np.polynomial.polynomial.polyfit(lam, m, 3, w=1.0 / sig)
    poly_int = float(np.sum(coef / np.arange(1, 5)))
    return abs(poly_int - total) > 3.0 * max(total_se, 1e-300)


def ti_free_energy(hspec: HamiltonianSpec, constraint: ConstraintSpec, config: ChainConfig,
                   reference: str = "gaussian", threads: int = 1, n_nodes: int = 8,
                   reference_samples: int = 200_000) -> FreeEnergyEstimate:
    """Two-stage estimate: reference with constraint probability, then TI to the target."""
    sys = CompiledSystem(hspec, constraint)
    rng = chain_rng(config.seed, 0x12EF)
    ref, log_z_ref, logp, logp_err, history = build_reference(sys, reference, rng, reference_samples)
    if not np.isfinite(logp):
        raise TIError("no reference sample fell inside the constraint set", {"history": history})
    total, total_se, lam, m, se, stages = _ti_integral(sys, config, ref, n_nodes, threads, 100)
    doubled = False
    if _cubic_disagrees(lam, m, se, total, total_se):
        logger.info("TI integrand looks nonsmooth; doubling the lambda grid to %d nodes", 2 * n_nodes)
        total, total_se, lam, m, se, stages = _ti_integral(sys, config, ref, 2 * n_nodes, threads, 200)
        doubled = True
    log_z = log_z_ref + logp - total
    pre = _prefactor(hspec.region)
    err = pre * math.sqrt(total_se ** 2 + logp_err ** 2)
    md = _metadata(hspec, constraint, log_z=log_z, log_z_ref=log_z_ref, log_p_ref=logp,
                   log_p_ref_err=logp_err, ti_integral=total, ti_stderr=total_se, reference=reference,
                   theta=ref.theta, lambda_nodes=len(lam), doubled=doubled,
                   stages=[{k: v for k, v in s.items()} for s in stages],
                   sampler=config.digest_fields(), sampler_digest=_digest(config.digest_fields()))
    return FreeEnergyEstimate(-pre * log_z, err, "thermodynamic_integration", md)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def estimate_free_energy(hspec: HamiltonianSpec, constraint: ConstraintSpec,
                         config: Optional[ChainConfig] = None, method: str = "auto",
                         threads: int = 1, **kw) -> FreeEnergyEstimate:
    """Dispatch to quadrature for small systems and TI otherwise."""
    if method not in ("auto", "exact", "ti"):
        raise ValueError(f"unknown method {method!r}")
    dof = len(hspec.region) * hspec.region.dim_m
    if method == "exact" or (method == "auto" and dof <= MAX_DOF):
        return exact_free_energy(hspec, constraint)
    return ti_free_energy(hspec, constraint, config or ChainConfig(), threads=threads, **kw)


def reference_free_energy_G(lam: float, region: LatticeRegion, constraint: ConstraintSpec,
                            mode: str = "p_power", p: float = 2.0, sbv: Optional[SBVPotential] = None,
                            config: Optional[ChainConfig] = None, method: str = "auto",
                            threads: int = 1) -> FreeEnergyEstimate:
    """Free energy of ``lam sum_i sum_{R^{e_i}} |grad_i phi|^p`` (or ``g_eps``) under ``constraint``."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    weights = DecayWeights(region.dim_d, c0=lam, support="nearest")
    if mode == "p_power":
        pot = SobolevPotential(p, weights)
    elif mode == "sbv_g":
        base = sbv or SBVPotential(DecayWeights(region.dim_d, support="nearest", mode="sbv"))
        pot = SBVPotential(DecayWeights(region.dim_d, c0=lam, support="nearest", mode="sbv"), base.p,
                           base.c1, base.b, base.c2, base.alpha, base.tau, base.gamma)
    else:
        raise ValueError(f"unknown reference mode {mode!r}")
    hspec = HamiltonianSpec(pot, region, constraint.hamiltonian_mode())
    est = estimate_free_energy(hspec, constraint, config, method, threads)
    est.metadata["lambda"] = lam
    est.metadata["reference_mode"] = mode
    return est


# --------------------------------------------------------------------------- scans


@dataclass
class FreeEnergyProblem:
    """Recipe producing (Hamiltonian, constraint) pairs at any ``(eps, kappa)``."""

    potential: object
    domain: object
    u: object
    p: float = 2.0
    mode: str = "bulk"
    beta: float = 1.0
    cutoff: Optional[float] = None
    dim_m: int = 1
    chain: ChainConfig = field(default_factory=ChainConfig)
    method: str = "auto"
    r0: float = 1.0
    onsite: Optional[tuple] = None

    def build(self, epsilon: float, kappa: float):
        region = LatticeRegion(epsilon, self.domain, self.dim_m)
        constraint = ConstraintSpec(self.u, region, kappa, self.p, self.mode, self.r0)
        hspec = HamiltonianSpec(self.potential, region, constraint.hamiltonian_mode(), self.cutoff,
                                self.beta, self.onsite)
        return hspec, constraint

    def estimate(self, epsilon: float, kappa: float, threads: int = 1) -> FreeEnergyEstimate:
        hspec, constraint = self.build(epsilon, kappa)
        return estimate_free_energy(hspec, constraint, self.chain, self.method, threads)


@dataclass
class LimitScan:
    epsilons: list
    kappas: list
    grid: dict                      # (i, j) -> FreeEnergyEstimate or failure string
    f_liminf: dict = field(default_factory=dict)   # j -> (value, stderr)
    f_limsup: dict = field(default_factory=dict)
    converged: dict = field(default_factory=dict)
    monotone_rows: dict = field(default_factory=dict)
    f_prime: tuple = (math.nan, math.nan)
    f_second: tuple = (math.nan, math.nan)

    @property
    def all_converged(self) -> bool:
        return bool(self.converged) and all(self.converged.values())

    @property
    def failures(self) -> dict:
        return {k: v for k, v in self.grid.items() if not isinstance(v, FreeEnergyEstimate)}


def limit_scan(problem, epsilon_schedule: Sequence[float], kappa_schedule: Sequence[float],
               threads: int = 1, rel_tol: float = 0.02) -> LimitScan:
    """Grid of estimates with liminf/limsup surrogates over the ε-tail and κ-extrapolants.

    ``problem`` is a :class:`FreeEnergyProblem` or any callable ``(eps, kappa)
    -> FreeEnergyEstimate``.
    """
    eps = list(epsilon_schedule)
    kap = list(kappa_schedule)
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ValueError("epsilon schedule must be strictly decreasing")
    if any(b >= a for a, b in zip(kap, kap[1:])):
        raise ValueError("kappa schedule must be strictly decreasing")
    est = problem.estimate if hasattr(problem, "estimate") else problem
    grid = {}
    for i, e in enumerate(eps):
        for j, k in enumerate(kap):
            try:
                grid[(i, j)] = est(e, k)
            except (RuntimeError, ValueError) as exc:
                logger.warning("scan cell eps=%g kappa=%g failed: %s", e, k, exc)
                grid[(i, j)] = f"FAILED: {exc}"
    scan = LimitScan(eps, kap, grid)
    tail = list(range(len(eps) - math.ceil(len(eps) / 2), len(eps)))
    for j in range(len(kap)):
        cells = [grid[(i, j)] for i in tail if isinstance(grid[(i, j)], FreeEnergyEstimate)]
        if not cells:
            scan.converged[j] = False
            continue
        vals = [c.value for c in cells]
        lo = int(np.argmin(vals))
        hi = int(np.argmax(vals))
        scan.f_liminf[j] = (cells[lo].value, cells[lo].stderr)
        scan.f_limsup[j] = (cells[hi].value, cells[hi].stderr)
        last = [grid[(i, j)] for i in range(len(eps))[-2:] if isinstance(grid[(i, j)], FreeEnergyEstimate)]
        if len(last) == 2:
            gap = abs(last[0].value - last[1].value)
            tol = max(3 * math.hypot(last[0].stderr, last[1].stderr), rel_tol * max(1.0, abs(last[1].value)))
            scan.converged[j] = gap <= tol
        else:
            scan.converged[j] = False
    for i in range(len(eps)):
        row = [grid[(i, j)] for j in range(len(kap))]
        ok = True
        for a, b in zip(row, row[1:]):  # kappa decreasing: F must not decrease
            if isinstance(a, FreeEnergyEstimate) and isinstance(b, FreeEnergyEstimate):
                if b.value < a.value - 3 * math.hypot(a.stderr, b.stderr):
                    ok = False
        scan.monotone_rows[i] = ok
    if scan.f_liminf:
        # the outer kappa-limit of a monotone family is its supremum
        j = max(scan.f_liminf, key=lambda j: scan.f_liminf[j][0])
        scan.f_prime = scan.f_liminf[j]
        j = max(scan.f_limsup, key=lambda j: scan.f_limsup[j][0])
        scan.f_second = scan.f_limsup[j]
    return scan


def rate_functional_report(scan_u: LimitScan, scan_minimizer: LimitScan) -> dict:
    """``I(v) ~ F(v) - F(v*)`` from two converged scans."""
    for name, s in (("scan_u", scan_u), ("scan_minimizer", scan_minimizer)):
        if not s.all_converged:
            raise ValueError(f"{name} is not converged; refusing to report a rate")
    a, sa = scan_u.f_prime
    b, sb = scan_minimizer.f_prime
    rate = a - b
    err = math.hypot(sa, sb) if scan_u is not scan_minimizer else 0.0
    return {"rate": rate, "stderr": err, "nonnegative_within_3sigma": rate >= -3 * err,
            "f_v": a, "f_v_star": b}
