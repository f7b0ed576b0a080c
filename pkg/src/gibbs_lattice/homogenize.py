"""
Cell-formula estimates of the homogenised density ``f_hom(M)``.

A cell problem pins the exterior of the open unit box to the affine datum
``u = Mx`` and estimates ``F_inf`` per unit volume.  Two independent 1-D
oracles are provided for the scalar nearest-neighbour case: the Legendre
transform of the bond cumulant generating function, and an FFT N-fold
self-convolution of the bond weight.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize

from .free_energy import FreeEnergyEstimate, estimate_free_energy
from .hamiltonian import HamiltonianSpec
from .lattice import AffineProfile, Domain, LatticeRegion
from .potentials import SobolevPotential
from .sampler import ChainConfig, ConstraintSpec

logger = logging.getLogger(__name__)

__all__ = [
    "CellProblem",
    "HomogenizationResult",
    "OracleError",
    "cell_free_energy",
    "f_hom_estimate",
    "fit_extrapolation",
    "legendre_oracle_1d",
    "log_mgf_1d",
    "convolution_oracle_1d",
    "ConvolutionOracle",
]


class OracleError(ValueError):
    """The bond weight is not integrable with enough growth for the oracle."""


@dataclass
class CellProblem:
    """Affine cell problem on a box with a periodic Sobolev potential.

    Parameters
    ----------
    M : array_like
        Shape ``(m, d)``.
    potential : SobolevPotential
    epsilons, kappas : sequences
        Schedules; each ``1/eps`` must be a multiple of the coefficient period.
    cell : Domain, optional
        Defaults to the open unit cube.
    """

    M: object
    potential: SobolevPotential
    epsilons: Sequence[float]
    kappas: Sequence[float] = (0.5,)
    cell: Optional[Domain] = None
    p: float = 2.0
    beta: float = 1.0
    cutoff: Optional[float] = None
    chain: ChainConfig = field(default_factory=ChainConfig)
    method: str = "auto"
    mode: str = "pinned"

    def __post_init__(self):
        self.M = np.atleast_2d(np.asarray(self.M, dtype=float))
        d = self.potential.weights.d
        if self.M.shape[1] != d:
            raise ValueError("M must have shape (m, d)")
        if self.cell is None:
            self.cell = Domain.unit_cube(d)
        per = self.potential.period
        for e in self.epsilons:
            n = 1.0 / e
            if abs(n - round(n)) > 1e-9 or round(n) % per:
                raise ValueError(f"1/eps = {n:g} is not a multiple of the coefficient period {per}")

    @property
    def dim_m(self) -> int:
        return self.M.shape[0]

    def build(self, epsilon: float, kappa: float, shift=None):
        cell = self.cell if shift is None else self.cell.translate(shift)
        region = LatticeRegion(epsilon, cell, self.dim_m)
        u = AffineProfile(self.M)
        constraint = ConstraintSpec(u, region, kappa, self.p, self.mode)
        hspec = HamiltonianSpec(self.potential, region, constraint.hamiltonian_mode(), self.cutoff, self.beta)
        return hspec, constraint


def cell_free_energy(problem: CellProblem, epsilon: float, kappa: float, shift=None,
                     threads: int = 1) -> FreeEnergyEstimate:
    """``F_inf(Mx, Q, kappa, eps)`` per unit volume of ``Q``.

    The estimator already divides by ``|Q|``, so the value is a density.
    ``shift`` translates the cell (used for the periodic-symmetry check).
    """
    hspec, constraint = problem.build(epsilon, kappa, shift)
    est = estimate_free_energy(hspec, constraint, problem.chain, problem.method, threads)
    est.metadata["M"] = problem.M.tolist()
    return est


def fit_extrapolation(eps: Sequence[float], vals: Sequence[float], errs: Sequence[float],
                      q_range=(0.5, 2.0), n_boot: int = 400, seed: int = 0) -> dict:
    """Fit ``a + b eps^q`` through the last three points with ``q`` in ``q_range``.

    The standard error of ``a`` comes from a parametric bootstrap over the
    input errors.
    """
    eps = np.asarray(eps, dtype=float)[-3:]
    vals = np.asarray(vals, dtype=float)[-3:]
    errs = np.asarray(errs, dtype=float)[-3:]
    qs = np.linspace(q_range[0], q_range[1], 151)

    def fit(v):
        best = None
        sig = np.where(errs > 0, errs, 1.0)
        for q in qs:
            X = np.stack([np.ones_like(eps), eps ** q], axis=1)
            coef, *_ = np.linalg.lstsq(X / sig[:, None], v / sig, rcond=None)
            r = float(np.sum(((X @ coef - v) / sig) ** 2))
            if best is None or r < best[0] - 1e-15:
                best = (r, q, coef)
        return best

    r, q, coef = fit(vals)
    rng = np.random.default_rng(seed)
    boots = [fit(vals + rng.standard_normal(3) * errs)[2][0] for _ in range(n_boot)] if np.any(errs > 0) else [coef[0]]
    return {"limit": float(coef[0]), "slope": float(coef[1]), "order": float(q), "residual": r,
            "stderr": float(np.std(boots, ddof=1)) if len(boots) > 1 else 0.0}


@dataclass
class HomogenizationResult:
    value: float
    stderr: float
    order: float
    by_kappa: dict
    grid: dict
    kappa_independent: bool
    converged: bool
    report: dict = field(default_factory=dict)


def f_hom_estimate(problem: CellProblem, threads: int = 1) -> HomogenizationResult:
    """Extrapolate the cell free energy in ``eps`` for every ``kappa``.

    The headline value is the smallest-kappa extrapolant; the κ-agreement
    check compares all extrapolants within three combined standard errors.
    """
    eps = list(problem.epsilons)
    if len(eps) < 3:
        raise ValueError("need at least three epsilon values")
    grid = {}
    by_kappa = {}
    for kappa in problem.kappas:
        ests = [cell_free_energy(problem, e, kappa, threads=threads) for e in eps]
        for e, est in zip(eps, ests):
            grid[(e, kappa)] = est
        fit = fit_extrapolation(eps, [x.value for x in ests], [x.stderr for x in ests])
        by_kappa[kappa] = fit
    kmin = min(problem.kappas)
    head = by_kappa[kmin]
    agree = True
    pairs = []
    ks = sorted(by_kappa)
    for a, b in zip(ks, ks[1:]):
        fa, fb = by_kappa[a], by_kappa[b]
        comb = math.hypot(fa["stderr"], fb["stderr"])
        ok = abs(fa["limit"] - fb["limit"]) <= 3 * comb
        pairs.append({"kappas": (a, b), "diff": fa["limit"] - fb["limit"], "combined_stderr": comb, "agree": ok})
        agree &= ok
    converged = all(q_in_range(f["order"]) and np.isfinite(f["limit"]) for f in by_kappa.values())
    if not converged:
        logger.warning("extrapolation order hit the fit boundary; trend may not be converged")
    return HomogenizationResult(head["limit"], head["stderr"], head["order"], by_kappa, grid, agree,
                                converged, {"kappa_pairs": pairs})


def q_in_range(q: float, lo: float = 0.5, hi: float = 2.0) -> bool:
    return lo + 1e-9 < q < hi - 1e-9


# --------------------------------------------------------------------------- 1-D oracles


def _check_growth(f: Callable):
    """Refuse potentials that are not superlinear, for which the log-MGF is not finite everywhere."""
    big = 1e6
    for t in (big, -big):
        v, v2 = float(f(t)), float(f(2 * t))
        if not (np.isfinite(v) and np.isfinite(v2)) or v <= 0 or v2 <= 0:
            raise OracleError("bond potential must be finite and positive at large |t|")
        order = math.log2(v2 / v)
        if order <= 1.0 + 1e-3:
            raise OracleError(f"bond potential grows like |t|^{order:.3g}; exp(-f) needs superlinear growth "
                              "for exponential moments of every order")


def log_mgf_1d(f: Callable, lam: float) -> float:
    """``Lambda(lam) = log int exp(lam t - f(t)) dt`` by adaptive quadrature."""
    g = lambda t: lam * t - f(t)
    # locate the peak so quad sees it
    res = optimize.minimize_scalar(lambda t: -g(t), bracket=(-1.0, 1.0))
    t0 = float(res.x)
    g0 = g(t0)
    val, _ = integrate.quad(lambda t: math.exp(g(t) - g0), -np.inf, t0, limit=400, epsabs=0, epsrel=1e-12)
    val2, _ = integrate.quad(lambda t: math.exp(g(t) - g0), t0, np.inf, limit=400, epsabs=0, epsrel=1e-12)
    return g0 + math.log(val + val2)


def legendre_oracle_1d(f: Callable, M: float, tol: float = 1e-11) -> float:
    """``sup_lam [lam M - Lambda(lam)]`` by bracketed golden-section search."""
    _check_growth(f)
    obj = lambda lam: -(lam * M - log_mgf_1d(f, lam))
    # expand a bracket around the maximiser of the concave objective
    a, b = -1.0, 1.0
    while obj(a) < obj(0.5 * (a + b)) or obj(b) < obj(0.5 * (a + b)):
        mid = 0.5 * (a + b)
        if obj(a) < obj(mid):
            a = mid - 2 * (mid - a)
        if obj(b) < obj(mid):
            b = mid + 2 * (b - mid)
        if b - a > 1e8:
            raise OracleError("Legendre transform is not attained")
    res = optimize.minimize_scalar(obj, bracket=(a, 0.5 * (a + b), b), method="golden", tol=tol)
    return float(-res.fun)


@dataclass
class ConvolutionOracle:
    raw: float
    corrected: float
    refinement_error: float
    h: float
    tilt: float


def _conv_once(f, M, N, h):
    # exponentially tilt so the tilted one-bond mean is M; the N-fold density then peaks at N M
    lam = _tilt_for_mean(f, M)
    half = 40.0 + 40.0 * abs(M)
    n_half = int(math.ceil(half / h))
    t = np.arange(-n_half, n_half + 1) * h + M
    g = lam * t - np.array([f(x) for x in t])
    gmax = g.max()
    w = np.exp(g - gmax)
    lam_grid = math.log(np.sum(w) * h) + gmax  # grid version of Lambda(lam)
    p1 = w / np.sum(w)                          # probability mass of one tilted bond
    size = 1
    while size < N * len(p1):
        size *= 2
    spec = np.fft.rfft(p1, size) ** N
    pn = np.fft.irfft(spec, size)[:N * (len(p1) - 1) + 1]
    # index of the sum N*M on the N-fold grid: offset N*(-n_half) in units of h
    k = N * n_half
    pk = max(float(pn[k]), 1e-300)
    # N-fold density of the untilted weight at N M:  exp(N Lambda - lam N M) pk / h
    raw = lam * M - lam_grid - math.log(pk / h) / N
    mu, var = _tilted_moments(t, w)
    corrected = raw - math.log(2 * math.pi * N * var) / (2 * N)
    return raw, corrected, lam


def _tilted_moments(t, w):
    z = np.sum(w)
    mu = float(np.sum(w * t) / z)
    return mu, float(np.sum(w * (t - mu) ** 2) / z)


def _tilt_for_mean(f, M):
    def mean(lam):
        t = np.linspace(-60 - abs(M) * 4, 60 + abs(M) * 4, 24001)
        g = lam * t - np.array([f(x) for x in t]) if not hasattr(f, "__vectorized__") else lam * t - f(t)
        g -= g.max()
        w = np.exp(g)
        return float(np.sum(w * t) / np.sum(w))
    if M == 0:
        return 0.0
    lo, hi = -1.0, 1.0
    while mean(lo) > M:
        lo *= 2
    while mean(hi) < M:
        hi *= 2
    return optimize.brentq(lambda x: mean(x) - M, lo, hi, xtol=1e-13)


def convolution_oracle_1d(f: Callable, M: float, N: int, h: Optional[float] = None) -> ConvolutionOracle:
    """``-(1/N) log`` of the N-fold self-convolution of ``exp(-f)`` at ``N M``.

    The grid spacing is chosen so that ``M/h`` is an integer; the
    refinement error compares with a run at ``h/2``.  ``corrected`` removes
    the Gaussian prefactor ``(1/(2N)) log(2 pi N sigma^2)``.
    """
    if not 1 <= N <= 2 ** 10:
        raise ValueError("N must be in [1, 1024]")
    _check_growth(f)
    if h is None:
        h = 0.02
    if M != 0:
        k = max(1, round(abs(M) / h))
        h = abs(M) / k
    raw, corr, lam = _conv_once(f, M, N, h)
    raw2, corr2, _ = _conv_once(f, M, N, h / 2)
    return ConvolutionOracle(raw2, corr2, abs(raw2 - raw), h / 2, lam)
