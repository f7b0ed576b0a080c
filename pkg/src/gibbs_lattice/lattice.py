"""
Lattice regions and the bridge between macroscopic profiles and lattice fields.

A lattice region is the set of sites ``i`` in ``Z^d`` with ``eps * i`` inside a
domain; domains are finite unions of axis-aligned boxes.  Fields are stored as
arrays aligned with an explicit site array, so iteration order is always the
lexicographic order of the multi-indices.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Box",
    "Domain",
    "LatticeRegion",
    "Profile",
    "AffineProfile",
    "as_profile",
    "DiscretizedField",
    "QuadratureError",
    "reachable_sites",
    "discretize",
    "gradient",
    "interpolate",
    "discrete_sobolev_seminorm",
    "half_lattice_directions",
]

_TOL = 1e-9


class QuadratureError(RuntimeError):
    """Cell quadrature failed to produce a finite average."""


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod [lo_k, hi_k]``; open by default."""

    lo: tuple
    hi: tuple
    closed: bool = False

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lo))
        hi = tuple(float(v) for v in np.atleast_1d(self.hi))
        if len(lo) != len(hi):
            raise ValueError("lo and hi must have the same length")
        if any(h <= l for l, h in zip(lo, hi)):
            raise ValueError(f"degenerate box {lo} x {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        scale = _TOL * max(1.0, float(np.max(np.abs(np.r_[lo, hi]))))
        if self.closed:
            return np.all((x >= lo - scale) & (x <= hi + scale), axis=1)
        return np.all((x > lo + scale) & (x < hi - scale), axis=1)

    def shrink(self, delta: float) -> "Box":
        return Box(tuple(l + delta for l in self.lo), tuple(h - delta for h in self.hi), self.closed)

    def translate(self, shift) -> "Box":
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.dim,))
        return Box(tuple(np.add(self.lo, shift)), tuple(np.add(self.hi, shift)), self.closed)

    def segment_interval(self, x: np.ndarray, y: np.ndarray):
        """Parameter range ``[t0, t1]`` where ``x + t (y - x)`` lies in the closed box.

        Vectorised over rows of ``x``/``y``; empty ranges have ``t0 > t1``.
        """
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        t0 = np.zeros(len(x))
        t1 = np.ones(len(x))
        for k in range(self.dim):
            dx = y[:, k] - x[:, k]
            lo, hi = self.lo[k], self.hi[k]
            with np.errstate(divide="ignore", invalid="ignore"):
                a = (lo - x[:, k]) / dx
                b = (hi - x[:, k]) / dx
            flat = dx == 0
            inside = (x[:, k] >= lo - _TOL) & (x[:, k] <= hi + _TOL)
            lo_t = np.where(flat, np.where(inside, -np.inf, np.inf), np.minimum(a, b))
            hi_t = np.where(flat, np.where(inside, np.inf, -np.inf), np.maximum(a, b))
            t0 = np.maximum(t0, lo_t)
            t1 = np.minimum(t1, hi_t)
        return t0, t1


@dataclass(frozen=True)
class Domain:
    """Finite union of boxes of a common dimension."""

    boxes: tuple

    def __post_init__(self):
        boxes = tuple(self.boxes)
        if not boxes:
            raise ValueError("domain needs at least one box")
        if len({b.dim for b in boxes}) != 1:
            raise ValueError("all boxes must share a dimension")
        object.__setattr__(self, "boxes", boxes)

    @classmethod
    def box(cls, lo, hi, closed: bool = False) -> "Domain":
        return cls((Box(lo, hi, closed),))

    @classmethod
    def interval(cls, a: float, b: float, closed: bool = False) -> "Domain":
        return cls((Box((a,), (b,), closed),))

    @classmethod
    def unit_cube(cls, d: int, closed: bool = False) -> "Domain":
        return cls((Box((0.0,) * d, (1.0,) * d, closed),))

    def union(self, other: "Domain") -> "Domain":
        return Domain(self.boxes + other.boxes)

    @property
    def dim(self) -> int:
        return self.boxes[0].dim

    @property
    def bounds(self):
        lo = np.min([b.lo for b in self.boxes], axis=0)
        hi = np.max([b.hi for b in self.boxes], axis=0)
        return lo, hi

    @property
    def diameter(self) -> float:
        lo, hi = self.bounds
        return float(np.linalg.norm(hi - lo))

    @property
    def volume(self) -> float:
        if len(self.boxes) == 1:
            return self.boxes[0].volume
        # coordinate compression; exact for unions of boxes
        cuts = [sorted({c for b in self.boxes for c in (b.lo[k], b.hi[k])}) for k in range(self.dim)]
        total = 0.0
        for cell in itertools.product(*[range(len(c) - 1) for c in cuts]):
            lo = np.array([cuts[k][j] for k, j in enumerate(cell)])
            hi = np.array([cuts[k][j + 1] for k, j in enumerate(cell)])
            mid = 0.5 * (lo + hi)
            if any(np.all((mid > b.lo) & (mid < b.hi)) for b in self.boxes):
                total += float(np.prod(hi - lo))
        return total

    def contains(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.zeros(len(x), dtype=bool)
        for b in self.boxes:
            out |= b.contains(x)
        return out

    def contains_segment(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Whether each closed segment ``[x_r, y_r]`` lies in the domain."""
        x = np.atleast_2d(x)
        y = np.atleast_2d(y)
        ends = self.contains(x) & self.contains(y)
        if len(self.boxes) == 1:
            return ends
        intervals = [b.segment_interval(x, y) for b in self.boxes]
        out = np.zeros(len(x), dtype=bool)
        for r in np.nonzero(ends)[0]:
            spans = sorted((t0[r], t1[r]) for t0, t1 in intervals if t0[r] <= t1[r])
            reach = 0.0
            for t0, t1 in spans:
                if t0 > reach + _TOL:
                    break
                reach = max(reach, t1)
            out[r] = reach >= 1.0 - _TOL
        return out

    def translate(self, shift) -> "Domain":
        return Domain(tuple(b.translate(shift) for b in self.boxes))


def _site_range(lo: float, hi: float, eps: float, closed: bool):
    a, b = lo / eps, hi / eps
    ra, rb = round(a), round(b)
    a_int = abs(a - ra) < _TOL * max(1.0, abs(a))
    b_int = abs(b - rb) < _TOL * max(1.0, abs(b))
    if a_int:
        start = ra if closed else ra + 1
    else:
        start = math.ceil(a)
    if b_int:
        stop = rb if closed else rb - 1
    else:
        stop = math.floor(b)
    return int(start), int(stop)


class LatticeRegion:
    """Sites ``i`` of ``Z^d`` with ``eps * i`` in ``domain`` (lexicographic order)."""

    def __init__(self, epsilon: float, domain: Domain, dim_m: int = 1):
        if epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if dim_m < 1:
            raise ValueError("dim_m must be a positive integer")
        self.epsilon = float(epsilon)
        self.domain = domain
        self.dim_d = domain.dim
        self.dim_m = int(dim_m)
        chunks = []
        for b in domain.boxes:
            ranges = [_site_range(b.lo[k], b.hi[k], self.epsilon, b.closed) for k in range(b.dim)]
            if any(stop < start for start, stop in ranges):
                continue
            grids = np.meshgrid(*[np.arange(s, t + 1) for s, t in ranges], indexing="ij")
            chunks.append(np.stack([g.ravel() for g in grids], axis=1))
        if chunks:
            sites = np.unique(np.concatenate(chunks), axis=0)
        else:
            sites = np.zeros((0, self.dim_d), dtype=np.int64)
        self.sites = sites.astype(np.int64)
        self.sites.setflags(write=False)
        self._index = SiteIndex(self.sites)

    def __len__(self) -> int:
        return len(self.sites)

    def __repr__(self) -> str:
        return f"LatticeRegion(epsilon={self.epsilon}, d={self.dim_d}, m={self.dim_m}, sites={len(self)})"

    @property
    def positions(self) -> np.ndarray:
        return self.epsilon * self.sites

    @property
    def volume(self) -> float:
        return self.domain.volume

    def index_of(self, sites: np.ndarray) -> np.ndarray:
        """Row indices of ``sites`` in :attr:`sites`; ``-1`` where absent."""
        return self._index.lookup(sites)

    def boundary_strip(self, r0: float) -> np.ndarray:
        """Sites within lattice distance ``r0`` of a lattice point outside the region."""
        if len(self) == 0:
            return np.zeros(len(self), dtype=bool)
        reach = int(math.floor(r0))
        offsets = [np.array(o) for o in itertools.product(range(-reach, reach + 1), repeat=self.dim_d)
                   if 0 < np.linalg.norm(o) <= r0 + _TOL]
        mask = np.zeros(len(self), dtype=bool)
        for o in offsets:
            mask |= self.index_of(self.sites + o) < 0
        return mask

    def with_domain(self, domain: Domain) -> "LatticeRegion":
        return LatticeRegion(self.epsilon, domain, self.dim_m)


class SiteIndex:
    """Hash-free lookup of integer multi-indices via sorted mixed-radix keys."""

    def __init__(self, sites: np.ndarray, pad: int = 64):
        self.d = sites.shape[1]
        if len(sites):
            self.origin = sites.min(axis=0) - pad
            self.radix = (sites.max(axis=0) - sites.min(axis=0)) + 2 * pad + 1
        else:
            self.origin = np.zeros(self.d, dtype=np.int64)
            self.radix = np.ones(self.d, dtype=np.int64)
        self.keys = self._encode(sites)
        self.order = np.argsort(self.keys, kind="stable")
        self.sorted_keys = self.keys[self.order]

    def _encode(self, sites: np.ndarray):
        sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
        rel = sites - self.origin
        valid = np.all((rel >= 0) & (rel < self.radix), axis=1)
        key = np.zeros(len(sites), dtype=np.int64)
        for k in range(self.d):
            key = key * self.radix[k] + np.where(valid, rel[:, k], 0)
        return np.where(valid, key, -1)

    def lookup(self, sites: np.ndarray) -> np.ndarray:
        keys = self._encode(sites)
        if len(self.sorted_keys) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        pos = np.searchsorted(self.sorted_keys, keys)
        pos = np.clip(pos, 0, len(self.sorted_keys) - 1)
        hit = (self.sorted_keys[pos] == keys) & (keys >= 0)
        return np.where(hit, self.order[pos], -1)


# --------------------------------------------------------------------------- profiles


class Profile:
    """Macroscopic profile ``u: R^d -> R^m`` plus an exact constant offset.

    The offset is tracked separately so that the change of variables
    ``phi -> phi + z / eps`` induced by ``u -> u + z`` can be carried out
    symbolically: code that only needs differences of ``u`` reads
    :meth:`base` and never sees ``z``.
    """

    def __init__(self, func: Callable, dim_m: int = 1, offset=None):
        self.func = func
        self.dim_m = int(dim_m)
        self.offset = np.zeros(self.dim_m) if offset is None else np.broadcast_to(
            np.asarray(offset, dtype=float), (self.dim_m,)).copy()

    def base(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.asarray(self.func(x), dtype=float)
        return v.reshape(len(x), self.dim_m)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.base(x) + self.offset

    def shifted(self, z) -> "Profile":
        out = Profile(self.func, self.dim_m, self.offset + np.asarray(z, dtype=float))
        return out

    @property
    def is_affine(self) -> bool:
        return False


class AffineProfile(Profile):
    """``u(x) = M x + offset`` with ``M`` of shape ``(m, d)``."""

    def __init__(self, M, offset=None):
        M = np.atleast_2d(np.asarray(M, dtype=float))
        self.M = M
        super().__init__(lambda x: x @ M.T, M.shape[0], offset)

    def shifted(self, z) -> "AffineProfile":
        return AffineProfile(self.M, self.offset + np.asarray(z, dtype=float))

    @property
    def is_affine(self) -> bool:
        return True


def as_profile(u, dim_m: int = 1) -> Profile:
    if isinstance(u, Profile):
        return u
    if callable(u):
        return Profile(u, dim_m)
    return Profile(lambda x, c=np.asarray(u, float): np.broadcast_to(c, (len(x), dim_m)), dim_m)


# --------------------------------------------------------------------------- fields


@dataclass
class DiscretizedField:
    """Lattice configuration on ``region.sites`` plus an optional pinned band.

    ``values[:len(region)]`` live on the region; any further rows belong to the
    exterior sites ``band_sites`` and are read-only data for boundary terms.
    """

    region: LatticeRegion
    values: np.ndarray
    band_sites: np.ndarray = field(default=None)
    profile: Optional[Profile] = None
    residual: float = 0.0

    def __post_init__(self):
        d, m = self.region.dim_d, self.region.dim_m
        if self.band_sites is None:
            self.band_sites = np.zeros((0, d), dtype=np.int64)
        self.band_sites = np.asarray(self.band_sites, dtype=np.int64).reshape(-1, d)
        self.values = np.asarray(self.values, dtype=float).reshape(-1, m)
        expect = len(self.region) + len(self.band_sites)
        if len(self.values) != expect:
            raise ValueError(f"expected {expect} value rows, got {len(self.values)}")
        self._index = None

    @property
    def sites(self) -> np.ndarray:
        return np.concatenate([self.region.sites, self.band_sites])

    @property
    def n_free(self) -> int:
        return len(self.region)

    def index_of(self, sites: np.ndarray) -> np.ndarray:
        if self._index is None:
            self._index = SiteIndex(self.sites)
        return self._index.lookup(sites)

    def copy(self) -> "DiscretizedField":
        return DiscretizedField(self.region, self.values.copy(), self.band_sites.copy(), self.profile, self.residual)

    def with_values(self, values: np.ndarray) -> "DiscretizedField":
        return DiscretizedField(self.region, values, self.band_sites.copy(), self.profile, self.residual)


_GL5_NODES, _GL5_WEIGHTS = np.polynomial.legendre.leggauss(5)


def _cell_average(func: Callable, centers: np.ndarray, eps: float, dim_m: int, refine: int = 1) -> np.ndarray:
    d = centers.shape[1]
    sub = (np.arange(refine) + 0.5) / refine - 0.5  # subcell centres in units of eps
    nodes1 = (sub[:, None] + _GL5_NODES[None, :] / (2 * refine)).ravel()
    w1 = np.tile(_GL5_WEIGHTS / (2 * refine), refine)
    grids = np.meshgrid(*([nodes1] * d), indexing="ij")
    offsets = np.stack([g.ravel() for g in grids], axis=1) * eps
    weights = np.prod(np.meshgrid(*([w1] * d), indexing="ij"), axis=0).ravel()
    total = np.zeros((len(centers), dim_m))
    for off, w in zip(offsets, weights):
        vals = np.asarray(func(centers + off), dtype=float).reshape(len(centers), dim_m)
        total += w * vals
    return total


def discretize(u, region: LatticeRegion, band_sites: Optional[np.ndarray] = None,
               rule: str = "cell_average") -> DiscretizedField:
    """Lattice field ``phi(i) = (1/eps) * mean of u over eps*i + [-eps/2, eps/2]^d``.

    The mean uses a 5-point Gauss-Legendre tensor rule; one refinement (2 x 2
    subcells) estimates the quadrature residual, stored on the result.
    ``rule="point"`` samples ``u(eps*i)/eps`` instead, which keeps a jump that
    sits on a lattice site inside a single bond.
    """
    u = as_profile(u, region.dim_m)
    eps = region.epsilon
    sites = region.sites if band_sites is None else np.concatenate([region.sites, band_sites])
    centers = eps * sites.astype(float)
    if rule == "point":
        vals = u(centers) / eps
        residual = 0.0
    elif rule == "cell_average":
        if isinstance(u, AffineProfile):
            # exact: the cell mean of an affine map is its value at the centre
            vals = sites.astype(float) @ u.M.T + u.offset / eps
            residual = 0.0
        else:
            coarse = _cell_average(u.base, centers, eps, region.dim_m, 1)
            fine = _cell_average(u.base, centers, eps, region.dim_m, 2)
            residual = float(np.max(np.abs(fine - coarse))) / eps if len(centers) else 0.0
            vals = (coarse + u.offset) / eps
    else:
        raise ValueError(f"unknown discretization rule {rule!r}")
    if not np.all(np.isfinite(vals)):
        raise QuadratureError(f"non-finite cell average (residual estimate {residual:g})")
    return DiscretizedField(region, vals, band_sites, u, residual)


def gradient(field: DiscretizedField, xi, site) -> np.ndarray:
    """``(phi(x + eps xi) - phi(x)) / |xi|`` at lattice site ``site``."""
    xi = np.asarray(xi, dtype=np.int64)
    if not np.any(xi):
        raise ValueError("xi must be a nonzero direction")
    site = np.asarray(site, dtype=np.int64)
    idx = field.index_of(np.stack([site, site + xi]))
    if idx[0] < 0 or idx[1] < 0:
        missing = site if idx[0] < 0 else site + xi
        raise IndexError(f"site {tuple(missing)} carries no value")
    return (field.values[idx[1]] - field.values[idx[0]]) / np.linalg.norm(xi)


def reachable_sites(region: LatticeRegion, xi) -> np.ndarray:
    """Sites ``alpha`` whose segment ``[eps alpha, eps(alpha + xi)]`` stays in the domain."""
    xi = np.asarray(xi, dtype=np.int64).reshape(region.dim_d)
    if not np.any(xi):
        raise ValueError("xi = 0 is not a bond direction")
    if len(region) == 0:
        return region.sites.copy()
    eps = region.epsilon
    start = region.sites
    ok = region.domain.contains_segment(eps * start, eps * (start + xi))
    return start[ok]


def half_lattice_directions(d: int, radius: float) -> list:
    """Nonzero ``xi`` with ``|xi| <= radius`` whose first nonzero entry is positive.

    Ordered by shell ``|xi|^2`` then lexicographically.
    """
    r = int(math.floor(radius))
    out = []
    for xi in itertools.product(range(-r, r + 1), repeat=d):
        n2 = sum(v * v for v in xi)
        if n2 == 0 or n2 > radius * radius + _TOL:
            continue
        first = next(v for v in xi if v != 0)
        if first > 0:
            out.append(xi)
    out.sort(key=lambda v: (sum(c * c for c in v), v))
    return [np.array(v, dtype=np.int64) for v in out]


def interpolate(field: DiscretizedField) -> Callable:
    """Continuous piecewise-affine ``v`` with ``v(eps i) = eps phi(i)``.

    Each lattice cube is split into ``d!`` Kuhn simplices (vertices visited in
    order of decreasing fractional coordinate).
    """
    eps = field.region.epsilon
    d = field.region.dim_d
    vals = eps * field.values

    def v(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        t = x / eps
        base = np.floor(t + _TOL).astype(np.int64)
        frac = t - base
        frac = np.where(frac < 0, 0.0, frac)
        order = np.argsort(-frac, axis=1, kind="stable")
        cur = base.copy()
        idx = field.index_of(cur)
        if np.any(idx < 0):
            bad = cur[np.argmax(idx < 0)]
            raise IndexError(f"missing vertex {tuple(bad)}")
        out = vals[idx].copy()
        prev = vals[idx]
        rows = np.arange(len(x))
        for k in range(d):
            axis = order[:, k]
            f = frac[rows, axis]
            cur[rows, axis] += 1
            nidx = field.index_of(cur)
            need = f > 0
            if np.any(need & (nidx < 0)):
                bad = cur[np.argmax(need & (nidx < 0))]
                raise IndexError(f"missing vertex {tuple(bad)}")
            nxt = np.where((nidx >= 0)[:, None], vals[np.maximum(nidx, 0)], prev)
            out += f[:, None] * (nxt - prev)
            prev = nxt
        return out if field.region.dim_m > 1 else out[:, 0]

    return v


def discrete_sobolev_seminorm(field: DiscretizedField, p: float) -> float:
    """``sum_i sum_{x in R^{e_i}} eps^d |grad_{e_i} phi(x)|^p``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    region = field.region
    total = 0.0
    for k in range(region.dim_d):
        e = np.zeros(region.dim_d, dtype=np.int64)
        e[k] = 1
        orig = reachable_sites(region, e)
        ia = field.index_of(orig)
        ib = field.index_of(orig + e)
        g = np.linalg.norm(field.values[ib] - field.values[ia], axis=1)
        total += float(np.sum(g ** p))
    return region.epsilon ** region.dim_d * total
