"""
Jump detection, bulk/surface splitting, and surface free-energy probes for
the truncated SBV potential.

A nearest-neighbour bond is a jump bond when its gradient reaches the
threshold ``T_eps``.  Jump profiles are discretised by point values
(``phi(i) = u(eps i)/eps``) so that an interface through a lattice site
produces exactly one jump bond; a cell average through the same site would
split the jump into two half-height bonds.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .free_energy import estimate_free_energy
from .hamiltonian import HamiltonianSpec
from .lattice import (DiscretizedField, Domain, LatticeRegion, Profile, as_profile, discretize,
                      reachable_sites)
from .potentials import SBVPotential
from .sampler import ChainConfig, ConstraintSpec

logger = logging.getLogger(__name__)

__all__ = [
    "JumpReport",
    "JumpDatum",
    "split_energy",
    "discrete_sbv_norm",
    "continuum_sbv_energy",
    "SurfaceProbe",
    "surface_density_probe",
]


@dataclass
class JumpReport:
    jump_bonds: list            # (site tuple, axis)
    bulk_energy: float
    surface_energy: float
    long_range_bulk: float = 0.0
    long_range_surface: float = 0.0
    long_range_jumps: int = 0

    @property
    def total(self) -> float:
        return self.bulk_energy + self.surface_energy

    @property
    def long_range_correction(self) -> float:
        return self.long_range_bulk + self.long_range_surface


def _canonical(nu: np.ndarray) -> bool:
    nz = nu[np.nonzero(nu)[0]]
    return bool(nz.size) and nz[0] > 0


@dataclass(frozen=True)
class JumpDatum:
    """Two-valued profile ``a`` on ``(x - x0) . nu > 0`` and ``b`` on the other side.

    On the interface itself the value is taken from the side that ``nu``'s
    canonical orientation assigns to ``b``, so that ``(a, b, nu)`` and
    ``(b, a, -nu)`` define the same function everywhere.
    """

    a: tuple
    b: tuple
    nu: tuple
    x0: tuple

    def __post_init__(self):
        nu = np.atleast_1d(np.asarray(self.nu, dtype=float))
        if np.linalg.norm(nu) == 0:
            raise ValueError("nu must be nonzero")
        nu = nu / np.linalg.norm(nu)
        object.__setattr__(self, "nu", tuple(nu))
        object.__setattr__(self, "a", tuple(np.atleast_1d(np.asarray(self.a, dtype=float))))
        object.__setattr__(self, "b", tuple(np.atleast_1d(np.asarray(self.b, dtype=float))))
        object.__setattr__(self, "x0", tuple(np.broadcast_to(np.asarray(self.x0, dtype=float), nu.shape)))
        if len(self.a) != len(self.b):
            raise ValueError("a and b must have the same dimension")

    @property
    def dim_m(self) -> int:
        return len(self.a)

    @property
    def height(self) -> float:
        return float(np.linalg.norm(np.subtract(self.a, self.b)))

    def swapped(self) -> "JumpDatum":
        return JumpDatum(self.b, self.a, tuple(-np.asarray(self.nu)), self.x0)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.profile()(x)

    def profile(self) -> Profile:
        a = np.asarray(self.a)
        b = np.asarray(self.b)
        nu = np.asarray(self.nu)
        x0 = np.asarray(self.x0)
        canon = _canonical(nu)
        low, high = (b, a) if canon else (a, b)  # values on s<0 / s>0 in canonical orientation
        sgn = 1.0 if canon else -1.0

        def u(x):
            s = sgn * ((np.atleast_2d(x) - x0) @ nu)  # canonical-orientation coordinate
            return np.where((s > 0)[:, None], high, low)

        return Profile(u, self.dim_m)


def _nn_bonds(field: DiscretizedField):
    region = field.region
    for k in range(region.dim_d):
        e = np.zeros(region.dim_d, dtype=np.int64)
        e[k] = 1
        o = reachable_sites(region, e)
        ga = field.values[field.index_of(o)]
        gb = field.values[field.index_of(o + e)]
        yield k, e, o, np.linalg.norm(gb - ga, axis=1)


def split_energy(field: DiscretizedField, potential: SBVPotential, region: Optional[LatticeRegion] = None,
                 cutoff: float = 1.0) -> JumpReport:
    """Partition ``eps^d sum C g_eps`` over nearest-neighbour bonds by branch.

    Long-range bonds up to ``cutoff`` are classified by the same threshold
    test and reported separately as a correction.
    """
    if region is not None and region is not field.region:
        field = DiscretizedField(region, field.values[field.index_of(region.sites)], None, field.profile)
    region = field.region
    eps = region.epsilon
    d = region.dim_d
    T = potential.threshold(eps)
    scale = eps ** d
    jumps = []
    bulk = 0.0
    surf = 0.0
    w = potential.weights
    for k, e, o, t in _nn_bonds(field):
        c = w.weight(e)
        jump = t >= T
        bulk += c * float(np.sum(potential.g1(t[~jump])))
        surf += c * float(np.sum(potential.g2(eps * t[jump]) / eps))
        jumps.extend((tuple(int(v) for v in site), k) for site in o[jump])
    rep = JumpReport(jumps, scale * bulk, scale * surf)
    if cutoff > 1:
        from .lattice import half_lattice_directions
        for xi in half_lattice_directions(d, cutoff):
            if float(np.dot(xi, xi)) == 1.0 or w.weight(xi) == 0:
                continue
            o = reachable_sites(region, xi)
            ga = field.values[field.index_of(o)]
            gb = field.values[field.index_of(o + xi)]
            t = np.linalg.norm(gb - ga, axis=1) / np.linalg.norm(xi)
            jump = t >= T
            c = w.weight(xi)
            rep.long_range_bulk += scale * c * float(np.sum(potential.g1(t[~jump])))
            rep.long_range_surface += scale * c * float(np.sum(potential.g2(eps * t[jump]) / eps))
            rep.long_range_jumps += int(np.sum(jump))
    return rep


def discrete_sbv_norm(u, epsilon: float, potential: SBVPotential, domain: Optional[Domain] = None,
                      rule: str = "point") -> float:
    """``eps^d sum g_eps(|grad_{e_i} phi_u|)`` over nearest-neighbour bonds of the domain."""
    d = potential.weights.d
    domain = domain or Domain.unit_cube(d)
    prof = u.profile() if isinstance(u, JumpDatum) else as_profile(u)
    region = LatticeRegion(epsilon, domain, prof.dim_m)
    field = discretize(prof, region, rule=rule)
    total = 0.0
    for _, _, _, t in _nn_bonds(field):
        total += float(np.sum(potential.bond_energy(t, epsilon)))
    return epsilon ** d * total


def continuum_sbv_energy(gradient_integral: float, jump_heights: Sequence[float], potential: SBVPotential,
                         jump_areas: Optional[Sequence[float]] = None) -> float:
    """``int |grad u|^p + sum_jumps area * g2(height)`` for piecewise-smooth test profiles."""
    areas = jump_areas if jump_areas is not None else [1.0] * len(jump_heights)
    return gradient_integral + sum(a * float(potential.g2(h)) for a, h in zip(areas, jump_heights))


# --------------------------------------------------------------------------- surface probe


@dataclass
class SurfaceProbe:
    epsilons: list
    excess: list
    excess_err: list
    amplitude: list
    amplitude_err: list
    exponent: float
    exponent_err: float
    flags: list = field(default_factory=list)
    estimates: list = field(default_factory=list)


def _interface_area(domain: Domain, datum: JumpDatum) -> float:
    """Area of the flat interface inside a box, for coordinate-aligned normals."""
    nu = np.abs(np.asarray(datum.nu))
    if len(nu) == 1:
        return 1.0
    k = int(np.argmax(nu))
    if not math.isclose(nu[k], 1.0):
        raise ValueError("interface area is only tabulated for coordinate normals")
    lo, hi = domain.bounds
    return float(np.prod(np.delete(hi - lo, k)))


def surface_density_probe(datum: JumpDatum, potential: SBVPotential, epsilon_schedule: Sequence[float],
                          kappa: float, beta: float = 1.0, cell: Optional[Domain] = None,
                          chain: Optional[ChainConfig] = None, method: str = "auto", p: float = 2.0,
                          threads: int = 1, cutoff: Optional[float] = None) -> SurfaceProbe:
    """Free-energy excess of the jump datum over the flat datum ``u = b``.

    For each ``eps`` the pinned free energies of both data are computed on the
    same cell; their difference times ``|Q| / (beta |Gamma|)`` (with
    ``|Gamma|`` the interface area) is the surface amplitude, which at low
    temperature approaches the deterministic jump cost.  The slope of
    ``log |excess|`` against ``log eps`` is reported as the fitted exponent.
    """
    d = potential.weights.d
    if d > 2:
        raise ValueError("surface probes are limited to d <= 2")
    cell = cell or Domain.unit_cube(d)
    chain = chain or ChainConfig()
    jump_prof = datum.profile()
    flat = Profile(lambda x, b=np.asarray(datum.b): np.broadcast_to(b, (len(np.atleast_2d(x)), len(b))),
                   datum.dim_m)
    area = _interface_area(cell, datum)
    eps_l, exc, err, amp, amp_err, flags, ests = [], [], [], [], [], [], []
    for eps in epsilon_schedule:
        region = LatticeRegion(eps, cell, datum.dim_m)
        hspec = HamiltonianSpec(potential, region, "full", cutoff, beta)
        vals = []
        for prof in (jump_prof, flat):
            c = ConstraintSpec(prof, region, kappa, p, "pinned")
            vals.append(estimate_free_energy(hspec, c, chain, method, threads))
        ests.append(tuple(vals))
        if datum.height == 0:
            x, s = 0.0, 0.0
        else:
            x = vals[0].value - vals[1].value
            s = math.hypot(vals[0].stderr, vals[1].stderr)
        eps_l.append(float(eps))
        exc.append(x)
        err.append(s)
        factor = cell.volume / (beta * area)
        amp.append(x * factor)
        amp_err.append(s * factor)
        flags.append("ok" if s < max(abs(x), 1e-300) / 3 or x == 0 else "noisy")
    e = np.log(eps_l)
    with np.errstate(divide="ignore"):
        y = np.log(np.abs(exc))
    if len(e) >= 2 and np.all(np.isfinite(y)):
        coef, cov = np.polyfit(e, y, 1, cov=True) if len(e) > 2 else (np.polyfit(e, y, 1), np.zeros((2, 2)))
        expo, expo_err = float(coef[0]), float(math.sqrt(max(cov[0, 0], 0.0)))
    else:
        expo, expo_err = math.nan, math.nan
    return SurfaceProbe(eps_l, exc, err, amp, amp_err, expo, expo_err, flags, ests)
