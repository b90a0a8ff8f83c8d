"""Marked point processes on boxes.

Points are generated cell by cell with counter-based randomness, so a sample
on a box ``B1`` coincides with the restriction to ``B1`` of the sample on any
larger box ``B2`` drawn with the same seed.  Every vertex carries a 64-bit
identity key (derived from its cell and rank, or from its lattice site) and
its mark is a hash of that key, which keeps marks stable under box
enlargement as well.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import rng
from .errors import ParameterError

__all__ = [
    "BoxDomain",
    "PointCloud",
    "MarkedCloud",
    "cube",
    "sample_poisson",
    "sample_lattice",
    "attach_marks",
    "palm_condition",
    "write_cloud_csv",
    "read_cloud_csv",
    "PALM_KEY",
]

PALM_KEY = np.uint64(0xA11CE0000000000F)


@dataclass(frozen=True)
class BoxDomain:
    """Axis-parallel box ``center + (-L/2, L/2]`` per axis.

    ``closed=True`` makes both faces inclusive; used for k-neighbourhoods.
    Sides may be zero (an empty box) but not negative.
    """

    sides: tuple
    boundary: str = "free"
    center: tuple = None
    closed: bool = False

    def __post_init__(self):
        sides = tuple(float(s) for s in np.atleast_1d(self.sides))
        if len(sides) == 0:
            raise ParameterError("dimension must be at least 1")
        if any(not np.isfinite(s) or s < 0 for s in sides):
            raise ParameterError(f"side lengths must be finite and non-negative, got {sides}")
        if self.boundary not in ("free", "torus"):
            raise ParameterError(f"boundary must be 'free' or 'torus', got {self.boundary!r}")
        center = (0.0,) * len(sides) if self.center is None else tuple(float(c) for c in self.center)
        if len(center) != len(sides):
            raise ParameterError("center and sides have different dimensions")
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "center", center)

    @property
    def d(self):
        return len(self.sides)

    @property
    def lower(self):
        return np.asarray(self.center) - 0.5 * np.asarray(self.sides)

    @property
    def upper(self):
        return np.asarray(self.center) + 0.5 * np.asarray(self.sides)

    @property
    def volume(self):
        return float(np.prod(self.sides))

    def contains(self, points):
        """Boolean mask of rows of ``points`` that lie in the box."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.d)
        lo, hi = self.lower, self.upper
        if self.closed:
            return np.all((pts >= lo) & (pts <= hi), axis=1)
        return np.all((pts > lo) & (pts <= hi), axis=1)

    def contains_box(self, other, tol=1e-9):
        return bool(np.all(other.lower >= self.lower - tol) and np.all(other.upper <= self.upper + tol))

    def expand(self, k):
        """The sup-norm k-neighbourhood of the box (closed)."""
        return BoxDomain(tuple(s + 2 * k for s in self.sides), self.boundary, self.center, closed=True)

    def intersect(self, other):
        lo = np.maximum(self.lower, other.lower)
        hi = np.maximum(np.minimum(self.upper, other.upper), lo)
        return BoxDomain(tuple(hi - lo), self.boundary, tuple(0.5 * (lo + hi)), closed=self.closed and other.closed)

    def displacement(self, a, b):
        """``b - a`` with minimum-image wrapping on a torus."""
        diff = np.asarray(b, dtype=float) - np.asarray(a, dtype=float)
        if self.boundary == "torus":
            L = np.asarray(self.sides)
            diff = diff - L * np.round(diff / L)
        return diff

    def distance(self, a, b):
        return np.sqrt(np.sum(self.displacement(a, b) ** 2, axis=-1))


def cube(side, d, center=None, boundary="free"):
    """Cube of side ``side`` in dimension ``d`` (centred at the origin by default)."""
    return BoxDomain((float(side),) * d, boundary, center)


@dataclass(frozen=True)
class PointCloud:
    """A finite simple point set inside ``domain``.

    ``keys`` are the per-point identities used by every keyed random stream.
    ``source`` is ``"poisson"`` or ``"lattice"``; ``param`` is the intensity or
    the retention probability respectively.
    """

    domain: BoxDomain
    locations: np.ndarray
    keys: np.ndarray
    source: str
    param: float
    seed: int

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, self.domain.d)
        keys = np.asarray(self.keys, dtype=np.uint64).reshape(-1)
        if keys.shape[0] != loc.shape[0]:
            raise ParameterError("one key per location required")
        loc.setflags(write=False)
        keys.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "keys", keys)

    def __len__(self):
        return self.locations.shape[0]

    @property
    def d(self):
        return self.domain.d


@dataclass(frozen=True)
class MarkedCloud:
    """Point cloud with i.i.d. Uniform(0,1) vertex marks."""

    base: PointCloud
    marks: np.ndarray
    mark_seed: int = 0
    palm_index: int = None

    def __post_init__(self):
        marks = np.asarray(self.marks, dtype=float).reshape(-1)
        if marks.shape[0] != len(self.base):
            raise ParameterError("one mark per location required")
        if marks.size and not (np.all(marks > 0) and np.all(marks < 1)):
            raise ParameterError("marks must lie strictly inside (0, 1)")
        marks.setflags(write=False)
        object.__setattr__(self, "marks", marks)

    def __len__(self):
        return len(self.base)

    @property
    def locations(self):
        return self.base.locations

    @property
    def keys(self):
        return self.base.keys

    @property
    def domain(self):
        return self.base.domain

    @property
    def d(self):
        return self.base.domain.d

    def subset(self, index, domain=None):
        """Vertices ``index`` (in that order) as a new cloud on ``domain``."""
        index = np.asarray(index, dtype=np.int64)
        dom = self.domain if domain is None else domain
        base = PointCloud(dom, self.locations[index], self.keys[index], self.base.source, self.base.param, self.base.seed)
        palm = None
        if self.palm_index is not None:
            hit = np.flatnonzero(index == self.palm_index)
            palm = int(hit[0]) if hit.size else None
        return MarkedCloud(base, self.marks[index], self.mark_seed, palm)


def _canonical_order(locations):
    if locations.shape[0] == 0:
        return np.zeros(0, dtype=np.int64)
    return np.lexsort(locations.T[::-1])


def _check_seed(seed):
    seed = int(seed)
    if seed < 0 or seed >= 1 << 64:
        raise ParameterError("seed must be an unsigned 64-bit integer")
    return seed


def sample_poisson(domain, intensity, seed):
    """Homogeneous Poisson process of the given intensity on ``domain``.

    Space is tiled by cubic cells of volume ``1/intensity`` (unit cells after
    rescaling); each cell receives a Poisson(1) number of uniform points drawn
    from streams keyed by the cell's integer index.
    """
    seed = _check_seed(seed)
    if not (np.isfinite(intensity) and intensity > 0):
        raise ParameterError(f"intensity must be positive, got {intensity}")
    d = domain.d
    if domain.volume == 0:
        return PointCloud(domain, np.zeros((0, d)), np.zeros(0, dtype=np.uint64), "poisson", float(intensity), seed)
    h = float(intensity) ** (-1.0 / d)
    lo, hi = domain.lower, domain.upper
    first = np.floor(lo / h).astype(np.int64)
    last = np.ceil(hi / h).astype(np.int64)
    axes = [np.arange(a, b + (1 if domain.closed else 0)) for a, b in zip(first, last)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    cell_key = rng.coord_keys(grid)
    u = rng.uniform(seed, rng.TAG["poisson_count"], cell_key)
    counts = stats.poisson.ppf(u, 1.0).astype(np.int64)
    owner = np.repeat(np.arange(grid.shape[0]), counts)
    rank = np.arange(owner.size) - np.repeat(np.cumsum(counts) - counts, counts)
    pkey = rng.hash_parts(rng.TAG["poisson_point"], cell_key[owner], rank.astype(np.uint64))
    offsets = np.empty((owner.size, d))
    for j in range(d):
        offsets[:, j] = rng.uniform(seed, rng.TAG["poisson_coord"], pkey, np.uint64(j))
    loc = (grid[owner] + offsets) * h
    keep = domain.contains(loc)
    loc, pkey = loc[keep], pkey[keep]
    order = _canonical_order(loc)
    return PointCloud(domain, loc[order], pkey[order], "poisson", float(intensity), seed)


def sample_lattice(domain, retention, seed):
    """Sites of Z^d inside ``domain``, each kept independently w.p. ``retention``."""
    seed = _check_seed(seed)
    if not (0.0 <= retention <= 1.0):
        raise ParameterError(f"retention must lie in [0, 1], got {retention}")
    d = domain.d
    lo, hi = domain.lower, domain.upper
    first = np.ceil(lo - 1e-12).astype(np.int64)
    last = np.floor(hi + 1e-12).astype(np.int64)
    axes = [np.arange(a, b + 1) for a, b in zip(first, last)]
    if any(a.size == 0 for a in axes):
        sites = np.zeros((0, d), dtype=np.int64)
    else:
        sites = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
        sites = sites[domain.contains(sites)]
    keys = rng.coord_keys(sites)
    keep = rng.uniform(seed, rng.TAG["lattice_site"], keys) < retention
    loc = sites[keep].astype(float)
    keys = keys[keep]
    order = _canonical_order(loc)
    return PointCloud(domain, loc[order], keys[order], "lattice", float(retention), seed)


def attach_marks(cloud, seed):
    """Attach i.i.d. Uniform(0,1) marks keyed by vertex identity."""
    seed = _check_seed(seed)
    marks = rng.uniform(seed, rng.TAG["mark"], cloud.keys) if len(cloud) else np.zeros(0)
    return MarkedCloud(cloud, marks, seed)


def palm_condition(cloud):
    """Force a vertex at the origin with a fresh independent mark.

    For Poisson clouds the origin vertex is added to the sample (Slivnyak);
    for lattice clouds the origin site is made present.  The index of the
    origin vertex is recorded as ``palm_index``.
    """
    dom = cloud.domain
    origin = np.zeros((1, dom.d))
    if not dom.contains(origin)[0]:
        raise ParameterError("the origin is not inside the domain")
    base = cloud.base
    loc, keys, marks = cloud.locations, cloud.keys, cloud.marks
    fresh = float(rng.uniform(cloud.mark_seed, rng.TAG["palm"], PALM_KEY))
    if base.source == "lattice":
        at0 = np.flatnonzero(np.all(loc == 0.0, axis=1))
        if at0.size:
            loc, keys, marks = np.delete(loc, at0, axis=0), np.delete(keys, at0), np.delete(marks, at0)
        new_key = rng.coord_keys(np.zeros((1, dom.d), dtype=np.int64))[0]
    else:
        new_key = PALM_KEY
    loc = np.vstack([loc, origin])
    keys = np.append(keys, np.uint64(new_key))
    marks = np.append(marks, fresh)
    order = _canonical_order(loc)
    palm_index = int(np.flatnonzero(order == loc.shape[0] - 1)[0])
    pc = PointCloud(dom, loc[order], keys[order], base.source, base.param, base.seed)
    return MarkedCloud(pc, marks[order], cloud.mark_seed, palm_index)


def write_cloud_csv(cloud, path=None):
    """Serialize a marked cloud; returns the text when ``path`` is None.

    Comment lines record the dimension, domain, source and seeds; then one
    row ``x1,...,xd,mark`` per vertex.
    """
    buf = io.StringIO()
    dom = cloud.domain
    buf.write(f"# d={dom.d}\n")
    buf.write(f"# domain=sides:{','.join(repr(s) for s in dom.sides)};center:{','.join(repr(c) for c in dom.center)};boundary:{dom.boundary}\n")
    buf.write(f"# source={cloud.base.source}({cloud.base.param!r})\n")
    buf.write(f"# seed={cloud.base.seed};mark_seed={cloud.mark_seed}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"x{j + 1}" for j in range(dom.d)] + ["mark"])
    for x, s in zip(cloud.locations, cloud.marks):
        w.writerow([repr(float(v)) for v in x] + [repr(float(s))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_cloud_csv(path):
    """Inverse of :func:`write_cloud_csv` (identity keys are re-derived from row order)."""
    meta = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line and not line.startswith("x1"):
            rows.append([float(v) for v in line.split(",")])
    d = int(meta["d"])
    parts = dict(p.split(":", 1) for p in meta["domain"].split(";"))
    dom = BoxDomain(
        tuple(float(v) for v in parts["sides"].split(",")),
        parts["boundary"],
        tuple(float(v) for v in parts["center"].split(",")),
    )
    source, _, param = meta["source"].partition("(")
    seed_part, _, mark_part = meta["seed"].partition(";mark_seed=")
    seed, mark_seed = int(seed_part), int(mark_part or 0)
    arr = np.asarray(rows, dtype=float).reshape(-1, d + 1)
    keys = rng.hash_parts(np.uint64(0xF11E), np.arange(arr.shape[0], dtype=np.uint64))
    pc = PointCloud(dom, arr[:, :d], keys, source, float(param.rstrip(")")), seed)
    return MarkedCloud(pc, arr[:, d], mark_seed)
