"""
Bond interaction families and grid-based validators for their hypotheses.

Two families are provided:

* :class:`SobolevPotential` with ``f(x, t) = C_xi * a(x / eps) * |t|^p``;
* :class:`SBVPotential` with the truncated potential
  ``g_eps(t) = g1(t)`` for ``t < T_eps`` and ``(1/eps) g2(eps t)`` otherwise,
  where ``g1(t) = c1 t^p``, ``g2(t) = b + c2 t^alpha`` and ``T_eps = tau eps^-gamma``.

Both carry :class:`DecayWeights` for the long-range coefficients ``C_xi``.
Validation never raises; it returns a :class:`HypothesisReport`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, special

from .lattice import half_lattice_directions

logger = logging.getLogger(__name__)

__all__ = [
    "DecayWeights",
    "PotentialFamily",
    "SobolevPotential",
    "SBVPotential",
    "HypothesisCheck",
    "HypothesisReport",
    "tail_bound",
    "validate",
    "CONSTANT_CEILING",
    "KIND_POWER",
    "KIND_SBV",
]

# "a constant exists" is read as "a fitted constant no larger than this"
CONSTANT_CEILING = 1e3

KIND_POWER = 0
KIND_SBV = 1


def _sphere_area(d: int) -> float:
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class DecayWeights:
    """Direction weights ``C_xi``.

    Parameters
    ----------
    d : int
        Lattice dimension.
    c0 : float
        Overall amplitude.
    s : float, optional
        Decay exponent for ``support="power"``: ``C_xi = c0 |xi|^-s``.
    support : {"power", "nearest"}
        ``"nearest"`` keeps only ``C_{e_i} = c0``.
    mode : {"sobolev", "sbv"}
        Which summability condition the tail certificate refers to; in SBV
        mode the certified quantity is ``sum |xi| C_xi``.
    """

    d: int
    c0: float = 1.0
    s: Optional[float] = None
    support: str = "power"
    mode: str = "sobolev"

    def __post_init__(self):
        if self.support not in ("power", "nearest"):
            raise ValueError(f"unknown weight support {self.support!r}")
        if self.mode not in ("sobolev", "sbv"):
            raise ValueError(f"unknown weight mode {self.mode!r}")
        if self.support == "power" and (self.s is None or self.s <= 0):
            raise ValueError("power-law weights need a positive exponent s")
        if self.c0 < 0:
            raise ValueError("c0 must be nonnegative")

    @property
    def effective_exponent(self) -> float:
        """Exponent of the summand whose tail is certified."""
        return self.s - (1.0 if self.mode == "sbv" else 0.0)

    @property
    def summable(self) -> bool:
        if self.support == "nearest":
            return True
        return self.effective_exponent > self.d

    def weight(self, xi) -> float:
        xi = np.asarray(xi)
        r2 = float(np.dot(xi, xi))
        if r2 == 0:
            raise ValueError("xi = 0 carries no weight")
        if self.support == "nearest":
            return self.c0 if r2 == 1.0 else 0.0
        return self.c0 * r2 ** (-self.s / 2)

    def _summand(self, r: np.ndarray) -> np.ndarray:
        return self.c0 * r ** (-self.effective_exponent)

    def mass(self, radius: float) -> float:
        """``sum_{0<|xi|<=radius}`` of the certified summand over all of ``Z^d``."""
        if self.support == "nearest":
            return 2 * self.d * self.c0 if radius >= 1 else 0.0
        dirs = half_lattice_directions(self.d, radius)
        if not dirs:
            return 0.0
        r = np.array([np.linalg.norm(v) for v in dirs])
        return 2.0 * float(np.sum(self._summand(r)))

    def tail_bound(self, cutoff: float) -> float:
        """Certified upper bound on ``sum_{|xi| > cutoff}`` over all of ``Z^d``.

        Exact enumeration between ``cutoff`` and an integration radius ``R``,
        then the integral comparison: the unit cube around each lattice point
        sits at distance ``>= |xi| - sqrt(d)/2`` from the origin.
        """
        if cutoff < 1:
            raise ValueError("cutoff must be >= 1")
        if self.support == "nearest":
            return 0.0
        if not self.summable:
            return math.inf
        q = self.effective_exponent
        if self.d == 1:
            return 2.0 * self.c0 * cutoff ** (1.0 - q) / (q - 1.0)
        h = math.sqrt(self.d) / 2
        R = max(float(cutoff), 2 * h + 1)
        exact = self.mass(R) - self.mass(cutoff)
        integral = (1 + h / R) ** q * _sphere_area(self.d) * (R - h) ** (self.d - q) / (q - self.d)
        return exact + self.c0 * integral

    def choose_cutoff(self, rel_tol: float = 1e-6, max_cutoff: int = 8) -> tuple:
        """Smallest integer cutoff with ``tail <= rel_tol * mass``.

        Returns ``(cutoff, tail_bound)``; a warning is logged when the cap
        ``max_cutoff`` binds before the tolerance is met.
        """
        if self.support == "nearest":
            return 1, 0.0
        for m in range(1, max_cutoff + 1):
            t = self.tail_bound(m)
            if t <= rel_tol * self.mass(m):
                return m, t
        t = self.tail_bound(max_cutoff)
        logger.warning("cutoff capped at %d; certified tail %.3g exceeds %.1g of the retained mass",
                       max_cutoff, t, rel_tol)
        return max_cutoff, t


def tail_bound(weights: DecayWeights, cutoff: float) -> float:
    return weights.tail_bound(cutoff)


@dataclass
class HypothesisCheck:
    name: str
    passed: bool
    witness: dict = field(default_factory=dict)
    constant: Optional[float] = None
    violation: Optional[dict] = None


@dataclass
class HypothesisReport:
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list:
        return [c for c in self.checks if not c.passed]

    def as_dict(self) -> dict:
        return {c.name: {"passed": bool(c.passed), "constant": c.constant, "witness": c.witness,
                         "violation": c.violation} for c in self.checks}


_T_GRID = np.concatenate([[0.0], np.logspace(-3, 3, 121)])


class PotentialFamily:
    """Common interface: ``eval = weight(xi) * modulator(site) * bond_energy(|t|)``."""

    kind: int
    weights: DecayWeights

    def modulator(self, sites: np.ndarray) -> np.ndarray:
        return np.ones(len(np.atleast_2d(sites)))

    def bond_energy(self, t, epsilon: float):
        raise NotImplementedError

    def eval(self, xi, epsilon: float, x, t) -> float:
        """Energy of one bond in direction ``xi`` at position ``x`` with gradient ``t``."""
        xi = np.asarray(xi)
        if not np.any(xi):
            raise ValueError("xi must be nonzero")
        x = np.atleast_1d(np.asarray(x, dtype=float))
        site = np.rint(x / epsilon).astype(np.int64)[None, :]
        tn = float(np.linalg.norm(np.atleast_1d(t)))
        return float(self.weights.weight(xi) * self.modulator(site)[0] * self.bond_energy(tn, epsilon))

    def kernel_params(self, epsilon: float) -> np.ndarray:
        """Packed scalar parameters consumed by the compiled kernels."""
        raise NotImplementedError

    def tail_bound(self, cutoff: float) -> float:
        return self.weights.tail_bound(cutoff)


class SobolevPotential(PotentialFamily):
    """``f_{xi,eps}(x, t) = C_xi * a(x / eps) * |t|^p``.

    Parameters
    ----------
    p : float
        Growth exponent, ``p >= 1``.
    weights : DecayWeights
    coefficient : array_like, optional
        Values of the periodic modulator on one period cell, shape
        ``(M_per,) * d``; defaults to the constant 1.
    """

    kind = KIND_POWER

    def __init__(self, p: float, weights: DecayWeights, coefficient=None):
        if p < 1:
            raise ValueError("p must be >= 1")
        self.p = float(p)
        self.weights = weights
        d = weights.d
        if coefficient is None:
            coefficient = np.ones((1,) * d)
        coefficient = np.asarray(coefficient, dtype=float)
        if coefficient.ndim == 1 and d > 1:
            coefficient = coefficient.reshape((len(coefficient),) + (1,) * (d - 1))
        if coefficient.ndim != d:
            raise ValueError(f"coefficient table must have {d} axes")
        self.coefficient = coefficient

    @property
    def period(self) -> int:
        return int(max(self.coefficient.shape))

    @property
    def a_min(self) -> float:
        return float(self.coefficient.min())

    @property
    def a_max(self) -> float:
        return float(self.coefficient.max())

    def modulator(self, sites: np.ndarray) -> np.ndarray:
        sites = np.atleast_2d(sites)
        idx = tuple(np.mod(sites[:, k], self.coefficient.shape[k]) for k in range(sites.shape[1]))
        return self.coefficient[idx]

    def bond_energy(self, t, epsilon: float = 1.0):
        return np.abs(t) ** self.p

    def kernel_params(self, epsilon: float) -> np.ndarray:
        return np.array([self.p, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0])

    def __repr__(self):
        return f"SobolevPotential(p={self.p}, weights={self.weights}, period={self.period})"

    def validate(self, epsilon_schedule: Sequence[float] = (), max_check: int = 6) -> HypothesisReport:
        checks = []
        w = self.weights
        tails = {int(m): w.tail_bound(m) for m in range(1, max_check + 1)}
        checks.append(HypothesisCheck(
            "summability", w.summable,
            witness={"exponent": w.s, "d": w.d, "tail_bounds": tails}))
        t = _T_GRID
        dirs = half_lattice_directions(w.d, max_check)
        worst = None
        nonneg = True
        for xi in dirs:
            cx = w.weight(xi)
            vals = cx * self.a_min * self.bond_energy(t)
            if np.any(vals < 0):
                nonneg = False
                worst = {"xi": xi.tolist(), "t": float(t[np.argmin(vals)])}
                break
        checks.append(HypothesisCheck("C1_nonnegative", nonneg, witness={"t_grid": [float(t[1]), float(t[-1])]},
                                      violation=worst))
        # quasi-triangle form of the p-growth upper bound
        s_grid = np.concatenate([-t[::-1], t])
        S, T = np.meshgrid(s_grid[::8], s_grid[::8], indexing="ij")
        fac = 2.0 ** (self.p - 1)
        ok2 = True
        viol = None
        for xi in dirs:
            cx = w.weight(xi)
            lhs = cx * self.a_max * self.bond_energy(S + T)
            rhs = fac * cx * self.a_max * self.bond_energy(S) + fac * cx * self.a_max * (self.bond_energy(T) + 1)
            bad = lhs > rhs * (1 + 1e-12)
            if np.any(bad):
                k = np.argmax(bad)
                ok2 = False
                viol = {"xi": xi.tolist(), "s": float(S.flat[k]), "t": float(T.flat[k])}
                break
        checks.append(HypothesisCheck("C2_growth", ok2 and w.summable, constant=fac * self.a_max,
                                      witness={"form": "f(s+t) <= 2^(p-1) f(s) + C_xi' (|t|^p + 1)"},
                                      violation=viol if not ok2 else (None if w.summable else {"summable": False})))
        c_nn = min(w.weight(np.eye(w.d, dtype=int)[k]) for k in range(w.d)) * self.a_min
        lower_ok = c_nn > 0 and bool(np.all(c_nn * self.bond_energy(t) >= c_nn * np.maximum(t ** self.p - 1, 0) - 1e-12))
        checks.append(HypothesisCheck("C3_nearest_lower", lower_ok, constant=c_nn))
        checks.append(HypothesisCheck("H2_nearest_lower", lower_ok, constant=c_nn))
        bad_eps = []
        for eps in epsilon_schedule:
            n = 1.0 / eps
            if abs(n - round(n)) > 1e-9 or round(n) % self.period:
                bad_eps.append(float(eps))
        checks.append(HypothesisCheck("H1_periodic_commensurate", not bad_eps, witness={"period": self.period},
                                      violation={"epsilon": bad_eps} if bad_eps else None))
        checks.append(HypothesisCheck("H3_upper", w.summable and np.isfinite(self.a_max),
                                      constant=self.a_max,
                                      witness={"form": "f <= C_xi a_max (|t|^p + 1)"}))
        return HypothesisReport(checks)


class SBVPotential(PotentialFamily):
    """Truncated potential ``C_xi g_eps(|t|)``.

    Parameters
    ----------
    p : float
        Exponent of ``g1(t) = c1 t^p``.
    b, c2, alpha : float
        ``g2(t) = b + c2 t^alpha``; concave for ``0 < alpha <= 1``.
    tau, gamma : float
        Threshold schedule ``T_eps = tau * eps^-gamma``.
    """

    kind = KIND_SBV

    def __init__(self, weights: DecayWeights, p: float = 2.0, c1: float = 1.0, b: float = 1.0,
                 c2: float = 1.0, alpha: float = 0.5, tau: float = 1.0, gamma: float = 0.5):
        self.weights = weights
        self.p = float(p)
        self.c1 = float(c1)
        self.b = float(b)
        self.c2 = float(c2)
        self.alpha = float(alpha)
        self.tau = float(tau)
        self.gamma = float(gamma)

    def __repr__(self):
        return (f"SBVPotential(p={self.p}, b={self.b}, c2={self.c2}, alpha={self.alpha}, "
                f"tau={self.tau}, gamma={self.gamma})")

    def g1(self, t):
        return self.c1 * np.abs(t) ** self.p

    def g2(self, t):
        return self.b + self.c2 * np.abs(t) ** self.alpha

    def threshold(self, epsilon: float) -> float:
        return self.tau * epsilon ** (-self.gamma)

    def bond_energy(self, t, epsilon: float):
        t = np.abs(np.asarray(t, dtype=float))
        T = self.threshold(epsilon)
        return np.where(t < T, self.g1(t), self.g2(epsilon * t) / epsilon)

    g_eps = bond_energy

    def kernel_params(self, epsilon: float) -> np.ndarray:
        return np.array([self.p, self.c1, self.b, self.c2, self.alpha, self.threshold(epsilon), epsilon])

    def branch_jump(self, epsilon: float) -> float:
        T = self.threshold(epsilon)
        return float(self.g2(epsilon * T) / epsilon - self.g1(T))

    def integral_exp(self, epsilon: float) -> float:
        """``int_R exp(-g_eps(|t|)) dt`` with the above-threshold part in closed form."""
        T = self.threshold(epsilon)
        below, _ = integrate.quad(lambda t: math.exp(-self.c1 * t ** self.p), 0.0, T, limit=200)
        # int_T^inf exp(-(b + c2 (eps t)^alpha)/eps) dt, substitute y = c2 eps^(alpha-1) t^alpha
        k = self.c2 * epsilon ** (self.alpha - 1)
        y0 = k * T ** self.alpha
        above = math.exp(-self.b / epsilon) * k ** (-1 / self.alpha) / self.alpha * \
            special.gamma(1 / self.alpha) * special.gammaincc(1 / self.alpha, y0)
        return 2.0 * (below + above)

    def validate(self, epsilon_schedule: Sequence[float] = (1 / 8, 1 / 16, 1 / 32, 1 / 64),
                 doubling_factors: Optional[Sequence[float]] = None) -> HypothesisReport:
        checks = []
        w = self.weights
        eps = np.array(sorted(epsilon_schedule, reverse=True), dtype=float)
        checks.append(HypothesisCheck("summability", w.summable,
                                      witness={"exponent": w.s, "d": w.d, "mode": w.mode}))
        T = np.array([self.threshold(e) for e in eps])
        eT = eps * T
        scaling_ok = 0 < self.gamma < 1 and bool(np.all(np.diff(T) > 0)) and bool(np.all(np.diff(eT) < 0))
        checks.append(HypothesisCheck("threshold_scaling", scaling_ok,
                                      witness={"gamma": self.gamma, "T": T.tolist(), "eps_T": eT.tolist()},
                                      violation=None if scaling_ok else {"gamma": self.gamma}))
        shapes_ok = self.p >= 1 and self.c1 > 0 and 0 < self.alpha <= 1 and self.b > 0 and self.c2 >= 0
        checks.append(HypothesisCheck("g1_convex_g2_concave", shapes_ok,
                                      witness={"p": self.p, "alpha": self.alpha, "b": self.b}))
        ratio = np.array([e * self.g1(Ti) / self.g2(e * Ti) for e, Ti in zip(eps, T)])
        c_fit = float(ratio.max()) if len(ratio) else 0.0
        checks.append(HypothesisCheck("compatibility", c_fit <= CONSTANT_CEILING, constant=c_fit,
                                      witness={"form": "g1(T) <= (C/eps) g2(eps T)", "ratios": ratio.tolist()}))
        if doubling_factors is None:
            doubling_factors = list(range(2, 2 * w.d + 1))
        consts = {}
        worst = 0.0
        for m in doubling_factors:
            cm = 0.0
            for e in eps:
                t = np.logspace(-3, math.log10(10 * self.threshold(e)), 400)
                cm = max(cm, float(np.max(self.bond_energy(m * t, e) / self.bond_energy(t, e))))
            consts[float(m)] = cm
            worst = max(worst, cm)
        checks.append(HypothesisCheck("doubling", worst <= CONSTANT_CEILING, constant=worst,
                                      witness={"C_M": consts}))
        ints = [self.integral_exp(e) for e in eps]
        mb = float(max(ints)) if ints else 0.0
        checks.append(HypothesisCheck("integrability", np.isfinite(mb) and mb <= CONSTANT_CEILING, constant=mb,
                                      witness={"integrals": ints}))
        t = _T_GRID
        c_low = self.c1
        low_ok = self.c1 > 0 and bool(np.all(self.g1(t) >= c_low * np.maximum(t ** self.p - 1, 0) - 1e-12))
        checks.append(HypothesisCheck("g1_lower_growth", low_ok, constant=c_low))
        checks.append(HypothesisCheck("branch_jump_info", True,
                                      witness={"jump": [self.branch_jump(e) for e in eps]}))
        return HypothesisReport(checks)


def validate(potential: PotentialFamily, epsilon_schedule: Sequence[float] = ()) -> HypothesisReport:
    """Run the family's hypothesis battery over ``epsilon_schedule``."""
    if isinstance(potential, SBVPotential) and not epsilon_schedule:
        return potential.validate()
    return potential.validate(epsilon_schedule)
