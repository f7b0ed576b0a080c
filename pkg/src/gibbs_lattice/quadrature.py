"""
Nested Gauss-Legendre quadrature of constrained partition functions.

Used for systems with at most four scalar degrees of freedom.  Integration
variables are the deviations ``psi``; the admissible set is handled exactly
for scalar fields by computing each variable's feasible interval from the
budget left over by the outer variables.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

logger = logging.getLogger(__name__)

__all__ = ["DimensionError", "NonIntegrableError", "QuadratureResult", "log_partition", "MAX_DOF"]

MAX_DOF = 4
_GROWTH = 50.0
_SAFETY = 1.5
_ORDER = 8
_GL_T, _GL_W = np.polynomial.legendre.leggauss(_ORDER)


class DimensionError(ValueError):
    """Too many degrees of freedom for tensor quadrature."""


class NonIntegrableError(ValueError):
    """No finite integration box contains the mass of the integrand."""


@dataclass
class QuadratureResult:
    log_z: float
    residual: float
    box_lo: np.ndarray
    box_hi: np.ndarray
    panels: int


def _composite(panels: int):
    edges = np.linspace(-1.0, 1.0, panels + 1)
    half = 0.5 * (edges[1:] - edges[:-1])
    mid = 0.5 * (edges[1:] + edges[:-1])
    t = (mid[:, None] + half[:, None] * _GL_T[None, :]).ravel()
    w = (half[:, None] * _GL_W[None, :]).ravel()
    return t, w


class _LSE:
    def __init__(self):
        self.mx = -math.inf
        self.acc = 0.0

    def add(self, logv: np.ndarray):
        logv = logv[np.isfinite(logv)]
        if logv.size == 0:
            return
        new = max(self.mx, float(logv.max()))
        self.acc = self.acc * math.exp(self.mx - new) + float(np.sum(np.exp(logv - new)))
        self.mx = new

    @property
    def value(self) -> float:
        return self.mx + math.log(self.acc) if self.acc > 0 else -math.inf


def _energy_box(sys, scaled):
    """Per-dof box around the minimiser where the energy has grown by ``_GROWTH``."""
    n, m = sys.n_free, sys.m
    dof = n * m

    def f(x):
        return float(scaled(x.reshape(1, n, m))[0])

    x0 = np.zeros(dof)
    best = optimize.minimize(f, x0, method="Nelder-Mead",
                             options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 20000})
    xs = best.x
    try:
        polish = optimize.minimize(f, xs, method="BFGS")
        if polish.fun <= best.fun:
            xs = polish.x
    except (ValueError, FloatingPointError):
        pass
    f0 = f(xs)
    lo = np.full(dof, -math.inf)
    hi = np.full(dof, math.inf)
    for k in range(dof):
        for sgn in (-1.0, 1.0):
            r = 1e-2
            while r < 1e7:
                x = xs.copy()
                x[k] += sgn * r
                if f(x) - f0 >= _GROWTH:
                    break
                r *= 1.25
            else:
                continue
            if sgn < 0:
                lo[k] = xs[k] - _SAFETY * r
            else:
                hi[k] = xs[k] + _SAFETY * r
    return lo, hi, f0, xs


def _integrate(sys, scaled, lo_box, hi_box, panels: int) -> float:
    """``log int exp(-scaled(psi)) 1_V dpsi`` on the given per-dof box."""
    n, m = sys.n_free, sys.m
    dof = n * m
    t, w = _composite(panels)
    scalar = m == 1
    cpow, p, budget = sys.cpow, sys.p, sys.budget
    clamp = np.repeat(sys.clamp, m)
    lse = _LSE()

    def ranges(rem, k):
        rc = np.full(rem.shape, math.inf) if math.isinf(budget) else (np.maximum(rem, 0) / cpow) ** (1.0 / p)
        if not scalar:
            rc = np.full(rem.shape, math.inf) if math.isinf(budget) else np.full(rem.shape, (budget / cpow) ** (1 / p))
        lo = np.maximum(np.maximum(-rc, -clamp[k]), lo_box[k])
        hi = np.minimum(np.minimum(rc, clamp[k]), hi_box[k])
        return lo, hi, rc

    def expand(xs, logw, rem, k):
        lo, hi, rc = ranges(rem, k)
        ok = hi > lo
        xs, logw, rem, lo, hi, rc = xs[ok], logw[ok], rem[ok], lo[ok], hi[ok], rc[ok]
        if len(xs) == 0:
            return xs, logw, rem
        sub = np.isfinite(rc) & (lo <= -rc * (1 - 1e-14)) & (hi >= rc * (1 - 1e-14))
        half = 0.5 * (hi - lo)
        mid = 0.5 * (hi + lo)
        x_lin = mid[:, None] + half[:, None] * t[None, :]
        j_lin = np.broadcast_to(half[:, None] * w[None, :], x_lin.shape)
        ang = 0.5 * math.pi * t
        rcs = np.where(sub, rc, 0.0)
        x_sub = rcs[:, None] * np.sin(ang)[None, :]
        j_sub = rcs[:, None] * 0.5 * math.pi * np.cos(ang)[None, :] * w[None, :]
        x = np.where(sub[:, None], x_sub, x_lin)
        jac = np.where(sub[:, None], j_sub, j_lin)
        K = len(xs)
        new_xs = np.concatenate([np.repeat(xs, len(t), axis=0), x.reshape(-1, 1)], axis=1)
        with np.errstate(divide="ignore"):
            new_logw = np.repeat(logw, len(t)) + np.log(jac.ravel())
        if scalar:
            new_rem = np.repeat(rem, len(t)) - cpow * np.abs(x.ravel()) ** p
        else:
            new_rem = np.repeat(rem, len(t))
        return new_xs, new_logw, new_rem

    def finish(xs, logw):
        psi = xs.reshape(-1, n, m)
        lv = logw - scaled(psi)
        if not scalar:
            lv = np.where(sys.feasible(psi), lv, -np.inf)
        lse.add(lv)

    # walk the outer variable sequentially, vectorise the rest
    x0 = np.zeros((1, 0))
    rem0 = np.array([budget if np.isfinite(budget) else 0.0])
    outer_xs, outer_lw, outer_rem = expand(x0, np.zeros(1), rem0, 0)
    for r in range(len(outer_xs)):
        xs, lw, rem = outer_xs[r:r + 1], outer_lw[r:r + 1], outer_rem[r:r + 1]
        for k in range(1, dof):
            xs, lw, rem = expand(xs, lw, rem, k)
            if len(xs) == 0:
                break
        if len(xs):
            finish(xs, lw)
    return lse.value


def log_partition(sys, panels: int = None) -> QuadratureResult:
    """``log int exp(-beta H(c + psi)) 1_V(psi) dpsi`` with an error estimate.

    The residual adds the change under panel doubling and the change under a
    1.5-fold wider energy box.
    """
    dof = sys.dof
    if dof > MAX_DOF:
        raise DimensionError(f"{dof} degrees of freedom exceed the quadrature limit of {MAX_DOF}; "
                             "use thermodynamic integration")
    if dof == 0:
        return QuadratureResult(-sys.beta * float(sys.energies(np.zeros((1, 0, sys.m)))[0]), 0.0,
                                np.zeros(0), np.zeros(0), 0)
    if panels is None:
        panels = {1: 24, 2: 12, 3: 5, 4: 3}[dof]
    beta = sys.beta

    def scaled(psi):
        return beta * sys.energies(psi)

    lo, hi, f0, xs = _energy_box(sys, scaled)
    finite_c = np.isfinite(sys.budget) or np.all(np.isfinite(sys.clamp))
    unbounded = ~(np.isfinite(lo) & np.isfinite(hi))
    if np.any(unbounded) and not finite_c:
        raise NonIntegrableError("energy does not grow along some axis and no constraint bounds it")

    def shifted(psi):
        return scaled(psi) - f0

    coarse = _integrate(sys, shifted, lo, hi, panels)
    fine = _integrate(sys, shifted, lo, hi, 2 * panels)
    wlo = xs - _SAFETY * (xs - lo)
    whi = xs + _SAFETY * (hi - xs)
    wide = _integrate(sys, shifted, wlo, whi, panels)
    if not np.isfinite(fine):
        raise NonIntegrableError("constrained integral vanished on the quadrature grid")
    resid = abs(fine - coarse) + abs(wide - coarse)
    return QuadratureResult(fine - f0, float(resid), lo, hi, panels)
