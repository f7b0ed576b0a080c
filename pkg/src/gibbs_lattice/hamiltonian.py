"""
Lattice Hamiltonians built from a potential family and a lattice region.

Bonds are undirected: each pair ``{x, x + eps xi}`` is stored once, with
``xi`` in the half lattice (first nonzero component positive) and
``|xi| <= cutoff``.  Two bond sets are supported:

``interior``
    bonds whose segment lies in the domain (origins in the reachable set);
``full``
    every bond with at least one endpoint in the region; the exterior
    endpoints form a pinned band whose values are data, never unknowns.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .lattice import (Box, DiscretizedField, Domain, LatticeRegion, SiteIndex,
                      half_lattice_directions, reachable_sites)
from .potentials import PotentialFamily, SBVPotential, SobolevPotential

logger = logging.getLogger(__name__)

__all__ = [
    "ConfigurationError",
    "HamiltonianSpec",
    "BondTable",
    "energy",
    "energy_delta",
    "interior_vs_full_gap",
    "zigzag_constant",
    "sbv_zigzag_constant",
    "zigzag_sides",
]


class ConfigurationError(ValueError):
    """A field or spec is missing data the requested evaluation needs."""


@dataclass(frozen=True)
class BondTable:
    """Flat bond arrays in shell order.

    ``ia``/``ib`` index rows of ``[region.sites; band_sites]``; ``weight`` is
    ``C_xi * a(origin)``; ``inv_len`` is ``1/|xi|``; ``direction`` indexes
    the shell-ordered direction list.
    """

    ia: np.ndarray
    ib: np.ndarray
    weight: np.ndarray
    inv_len: np.ndarray
    direction: np.ndarray

    def __len__(self) -> int:
        return len(self.ia)


def _incidence(n_rows: int, ia: np.ndarray, ib: np.ndarray):
    ends = np.concatenate([ia, ib])
    bonds = np.concatenate([np.arange(len(ia)), np.arange(len(ib))])
    order = np.argsort(ends, kind="stable")
    counts = np.bincount(ends, minlength=n_rows)
    ptr = np.zeros(n_rows + 1, dtype=np.int64)
    np.cumsum(counts, out=ptr[1:])
    return ptr, bonds[order].astype(np.int64)


class HamiltonianSpec:
    """``H(phi) = sum_bonds C_xi a(x/eps) f(|grad_xi phi(x)|) + c sum_x |phi(x)|^q``.

    Parameters
    ----------
    potential : PotentialFamily
    region : LatticeRegion
    mode : {"interior", "full"}
    cutoff : float, optional
        Maximal ``|xi|``; chosen by the weights' cutoff policy when omitted.
    beta : float
        Inverse temperature multiplier; the Gibbs weight is ``exp(-beta H)``.
    onsite : tuple (c, q), optional
        Optional single-site term ``c |phi|^q``, useful for small test systems.
    """

    def __init__(self, potential: PotentialFamily, region: LatticeRegion, mode: str = "interior",
                 cutoff: Optional[float] = None, beta: float = 1.0, onsite: Optional[tuple] = None,
                 rel_tol: float = 1e-6, max_cutoff: int = 8):
        if mode not in ("interior", "full"):
            raise ValueError(f"unknown Hamiltonian mode {mode!r}")
        if potential.weights.d != region.dim_d:
            raise ValueError("potential and region dimensions differ")
        if beta <= 0:
            raise ValueError("beta must be positive")
        self.potential = potential
        self.region = region
        self.mode = mode
        self.beta = float(beta)
        if cutoff is None:
            cutoff, tail = potential.weights.choose_cutoff(rel_tol, max_cutoff)
        else:
            tail = potential.weights.tail_bound(cutoff)
        self.cutoff = float(cutoff)
        self.tail_bound = float(tail)
        self.onsite = (0.0, 2.0) if onsite is None else (float(onsite[0]), float(onsite[1]))
        self.directions = [xi for xi in half_lattice_directions(region.dim_d, self.cutoff)
                           if potential.weights.weight(xi) > 0]
        self._build()

    def __repr__(self):
        return (f"HamiltonianSpec(mode={self.mode!r}, cutoff={self.cutoff}, beta={self.beta}, "
                f"bonds={len(self.bonds)}, band={len(self.band_sites)})")

    @property
    def n_free(self) -> int:
        return len(self.region)

    @property
    def all_sites(self) -> np.ndarray:
        return np.concatenate([self.region.sites, self.band_sites])

    def _build(self):
        region = self.region
        d = region.dim_d
        n = len(region)
        pairs = []
        for k, xi in enumerate(self.directions):
            if self.mode == "interior":
                orig = reachable_sites(region, xi)
                pairs.append((k, orig, orig + xi))
            else:
                cand = np.unique(np.concatenate([region.sites, region.sites - xi]), axis=0) \
                    if n else np.zeros((0, d), dtype=np.int64)
                pairs.append((k, cand, cand + xi))
        band = []
        if self.mode == "full":
            for _, a, b in pairs:
                for ends in (a, b):
                    out = region.index_of(ends) < 0
                    band.append(ends[out])
        if band and sum(len(b) for b in band):
            band_sites = np.unique(np.concatenate(band), axis=0)
        else:
            band_sites = np.zeros((0, d), dtype=np.int64)
        self.band_sites = band_sites.astype(np.int64)
        index = SiteIndex(np.concatenate([region.sites, self.band_sites]))
        ia, ib, w, inv, dirn = [], [], [], [], []
        pot = self.potential
        for k, a, b in pairs:
            xi = self.directions[k]
            ra = index.lookup(a)
            rb = index.lookup(b)
            if self.mode == "full":
                keep = (ra < n) | (rb < n)
                keep &= (ra >= 0) & (rb >= 0)
                ra, rb, a = ra[keep], rb[keep], a[keep]
            if np.any(ra < 0) or np.any(rb < 0):
                raise RuntimeError("bond endpoint missing from site table")
            ia.append(ra)
            ib.append(rb)
            w.append(pot.weights.weight(xi) * pot.modulator(a))
            inv.append(np.full(len(ra), 1.0 / np.linalg.norm(xi)))
            dirn.append(np.full(len(ra), k, dtype=np.int64))
        cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dtype=dt))
        self.bonds = BondTable(cat(ia, np.int64), cat(ib, np.int64), cat(w, float), cat(inv, float),
                               cat(dirn, np.int64))
        self.incidence = _incidence(n + len(self.band_sites), self.bonds.ia, self.bonds.ib)

    def counterpart(self, mode: str) -> "HamiltonianSpec":
        """Same potential and cutoff, other bond set."""
        return HamiltonianSpec(self.potential, self.region, mode, self.cutoff, self.beta, self.onsite)

    def with_region(self, region: LatticeRegion) -> "HamiltonianSpec":
        return HamiltonianSpec(self.potential, region, self.mode, self.cutoff, self.beta, self.onsite)

    def with_beta(self, beta: float) -> "HamiltonianSpec":
        return HamiltonianSpec(self.potential, self.region, self.mode, self.cutoff, beta, self.onsite)

    def bond_energies(self, dphi: np.ndarray) -> np.ndarray:
        """Per-bond energies given bond differences ``phi(b) - phi(a)`` (shape ``(..., nb, m)``)."""
        t = np.linalg.norm(dphi, axis=-1) * self.bonds.inv_len
        return self.bonds.weight * self.potential.bond_energy(t, self.region.epsilon)

    def rows_in(self, field: DiscretizedField) -> np.ndarray:
        rows = field.index_of(self.all_sites)
        if np.any(rows[:self.n_free] < 0):
            raise ConfigurationError("field does not cover the region")
        if np.any(rows[self.n_free:] < 0):
            missing = self.band_sites[np.argmax(rows[self.n_free:] < 0)]
            raise ConfigurationError(f"full mode needs a pinned band value at site {tuple(missing)}")
        return rows


def _shell_sum(spec: HamiltonianSpec, per_bond: np.ndarray) -> float:
    # fixed shell order, pairwise summation inside each shell
    if len(per_bond) == 0:
        return 0.0
    edges = np.searchsorted(spec.bonds.direction, np.arange(len(spec.directions) + 1))
    return float(sum(np.sum(per_bond[edges[k]:edges[k + 1]]) for k in range(len(spec.directions))))


def energy(spec: HamiltonianSpec, field: DiscretizedField) -> float:
    """Total energy ``H`` of ``field`` (not multiplied by ``beta``)."""
    rows = spec.rows_in(field)
    vals = field.values[rows]
    b = spec.bonds
    per_bond = spec.bond_energies(vals[b.ib] - vals[b.ia])
    total = _shell_sum(spec, per_bond)
    c, q = spec.onsite
    if c:
        total += c * float(np.sum(np.linalg.norm(vals[:spec.n_free], axis=1) ** q))
    return total


def _resolve_site(spec: HamiltonianSpec, site) -> int:
    if np.ndim(site) == 0:
        s = int(site)
        if not 0 <= s < spec.n_free:
            raise ConfigurationError(f"site index {s} is not a free site")
        return s
    r = spec.region.index_of(np.asarray(site, dtype=np.int64)[None, :])[0]
    if r < 0:
        raise ConfigurationError(f"site {tuple(site)} is pinned or outside the region")
    return int(r)


def energy_delta(spec: HamiltonianSpec, field: DiscretizedField, site, new_value) -> float:
    """``H(after) - H(before)`` for a single-site update, touching incident bonds only."""
    s = _resolve_site(spec, site)
    rows = spec.rows_in(field)
    vals = field.values[rows]
    new_value = np.broadcast_to(np.asarray(new_value, dtype=float), (spec.region.dim_m,))
    ptr, idx = spec.incidence
    inc = idx[ptr[s]:ptr[s + 1]]
    b = spec.bonds
    ia, ib = b.ia[inc], b.ib[inc]
    old_d = vals[ib] - vals[ia]
    new_vals_a = np.where((ia == s)[:, None], new_value, vals[ia])
    new_vals_b = np.where((ib == s)[:, None], new_value, vals[ib])
    new_d = new_vals_b - new_vals_a
    eps = spec.region.epsilon
    scale = b.weight[inc]
    f = spec.potential.bond_energy
    delta = float(np.sum(scale * (f(np.linalg.norm(new_d, axis=1) * b.inv_len[inc], eps)
                                  - f(np.linalg.norm(old_d, axis=1) * b.inv_len[inc], eps))))
    c, q = spec.onsite
    if c:
        delta += c * (np.linalg.norm(new_value) ** q - np.linalg.norm(vals[s]) ** q)
    return delta


def interior_vs_full_gap(spec: HamiltonianSpec, field: DiscretizedField) -> float:
    """``H_inf - H`` evaluated on ``field`` (which must carry the pinned band)."""
    full = spec if spec.mode == "full" else spec.counterpart("full")
    interior = spec if spec.mode == "interior" else spec.counterpart("interior")
    return energy(full, field) - energy(interior, field)


# --------------------------------------------------------------------------- zig-zag


def zigzag_constant(d: int, p: float) -> float:
    """Certified constant of the long-range-by-nearest-neighbour bound, ``(2d)^(p+1)``."""
    return float((2 * d) ** (p + 1))


def sbv_zigzag_constant(d: int, xi) -> float:
    """Certified SBV constant ``(2d)^2 |xi|``."""
    return float((2 * d) ** 2 * np.linalg.norm(xi))


def _shrunk(region: LatticeRegion, delta: float) -> Optional[LatticeRegion]:
    boxes = []
    for b in region.domain.boxes:
        lo = np.add(b.lo, delta)
        hi = np.subtract(b.hi, delta)
        if np.all(hi > lo):
            boxes.append(Box(tuple(lo), tuple(hi), b.closed))
    if not boxes:
        return None
    return region.with_domain(Domain(tuple(boxes)))


def zigzag_sides(field: DiscretizedField, xi, cost=None) -> tuple:
    """Both sides of the zig-zag bound for direction ``xi``.

    ``cost`` maps gradient magnitudes to bond costs (``|t|^p`` for the Sobolev
    form, ``g_eps`` for the SBV form).  Returns ``(lhs, rhs)`` where the left
    side runs over the reachable set of the ``2 sqrt(d) eps``-shrunk region.
    """
    region = field.region
    xi = np.asarray(xi, dtype=np.int64)
    if cost is None:
        cost = lambda t: t ** 2
    rhs = 0.0
    for k in range(region.dim_d):
        e = np.zeros(region.dim_d, dtype=np.int64)
        e[k] = 1
        o = reachable_sites(region, e)
        ga = field.values[field.index_of(o)]
        gb = field.values[field.index_of(o + e)]
        rhs += float(np.sum(cost(np.linalg.norm(gb - ga, axis=1))))
    inner = _shrunk(region, 2 * math.sqrt(region.dim_d) * region.epsilon)
    if inner is None or len(inner) == 0:
        return 0.0, rhs
    o = reachable_sites(inner, xi)
    ga = field.values[field.index_of(o)]
    gb = field.values[field.index_of(o + xi)]
    lhs = float(np.sum(cost(np.linalg.norm(gb - ga, axis=1) / np.linalg.norm(xi))))
    return lhs, rhs
