"""Connected components, preclusters and finite-box cluster estimators."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import rng
from .errors import ParameterError
from .graph_builder import bond_percolate, build_graph, induced_subgraph, truncate
from .kernels import KernelSpec
from .parallel import map_ordered
from .point_process import attach_marks, cube, palm_condition, sample_lattice, sample_poisson

__all__ = [
    "Partition",
    "components",
    "largest_component_size",
    "PreclusterList",
    "preclusters",
    "maximal_precluster",
    "ModelConfig",
    "replica_seeds",
    "sample_graph",
    "ThetaEstimate",
    "Frequency",
    "ESTIMATORS",
    "theta_indicators",
    "estimate_theta",
    "theta_sweep",
    "sublinear_indicators",
    "sublinear_cluster_prob",
    "sublinear_sweep",
    "truncation_indicators",
    "truncation_sweep",
    "write_estimates_csv",
    "summarize_theta",
    "summarize_sublinear",
    "summarize_truncation",
]

ESTIMATORS = ("origin_to_boundary", "largest_component_fraction")


@numba.njit(cache=True)
def _union_find(n, ei, ej):
    parent = np.arange(n)
    size = np.ones(n, dtype=np.int64)
    for k in range(ei.shape[0]):
        a = ei[k]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        b = ej[k]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a == b:
            continue
        if size[a] < size[b]:
            a, b = b, a
        parent[b] = a
        size[a] += size[b]
    for i in range(n):
        r = i
        while parent[r] != r:
            r = parent[r]
        parent[i] = r
    # labels numbered by first appearance in vertex order
    label = np.full(n, -1, dtype=np.int64)
    vlab = np.empty(n, dtype=np.int64)
    nxt = 0
    for i in range(n):
        r = parent[i]
        if label[r] < 0:
            label[r] = nxt
            nxt += 1
        vlab[i] = label[r]
    return parent, vlab, nxt


@dataclass(frozen=True)
class Partition:
    """Components of a graph.

    ``roots`` is the fully compressed union-find forest, ``labels`` numbers
    components ``0..k-1`` by their smallest vertex, ``sizes[c]`` counts
    component ``c``.
    """

    roots: np.ndarray
    labels: np.ndarray
    sizes: np.ndarray

    @property
    def n_components(self):
        return self.sizes.size

    def members(self, c):
        return np.flatnonzero(self.labels == c)

    def component_of(self, v):
        return self.members(self.labels[v])

    def groups(self):
        """Vertex index arrays, one per component, in label order."""
        order = np.argsort(self.labels, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1]) if self.sizes.size else []


def components(graph):
    """Exact connected components by union-find (path halving, union by size)."""
    n = graph.n
    e = graph.edges
    roots, labels, k = _union_find(n, np.ascontiguousarray(e[:, 0]), np.ascontiguousarray(e[:, 1]))
    sizes = np.bincount(labels, minlength=k)
    return Partition(roots, labels, sizes)


def largest_component_size(graph, box=None):
    """Size of the largest component of the subgraph induced by ``box``."""
    g = graph if box is None else induced_subgraph(graph, box)
    if g.n == 0:
        return 0
    return int(components(g).sizes.max())


class PreclusterList(list):
    """List of vertex index arrays; ``clipped`` tells whether the
    k-neighbourhood had to be cut at the graph's domain."""

    clipped = False


def preclusters(graph, box, k):
    """Intersections with ``box`` of the components of the graph on its k-neighbourhood.

    Returned arrays hold vertex indices of ``graph``, each sorted, and the list
    is ordered by smallest member.
    """
    if k < 0:
        raise ParameterError("k must be non-negative")
    out = PreclusterList()
    dom = graph.cloud.domain
    hood = box.expand(k) if k > 0 else box
    if not dom.contains_box(hood):
        out.clipped = True
        hood = dom.intersect(hood)
    in_box = box.contains(graph.cloud.locations)
    if not in_box.any():
        return out
    sub = induced_subgraph(graph, hood)
    part = components(sub)
    inner = in_box[sub.parent_ids]
    for grp in part.groups():
        hit = grp[inner[grp]]
        if hit.size:
            out.append(np.sort(sub.parent_ids[hit]))
    out.sort(key=lambda a: int(a[0]))
    return out


def maximal_precluster(graph, box, k):
    """Largest precluster; ties go to the smallest minimal mark.

    Returns an empty array if the box holds no vertex or if the two best
    candidates agree in both size and minimal mark.
    """
    pcs = preclusters(graph, box, k)
    if not pcs:
        return np.zeros(0, dtype=np.int64)
    marks = graph.cloud.marks
    ranked = sorted(pcs, key=lambda a: (-a.size, float(marks[a].min())))
    if len(ranked) > 1:
        a, b = ranked[0], ranked[1]
        if a.size == b.size and marks[a].min() == marks[b].min():
            return np.zeros(0, dtype=np.int64)
    return ranked[0]


@dataclass(frozen=True)
class ModelConfig:
    """Everything needed to sample a replica of the graph on a box.

    ``process`` is ``"poisson"`` (``intensity`` is the intensity) or
    ``"lattice"`` (``intensity`` is the site retention).
    """

    kernel: KernelSpec
    process: str = "poisson"
    intensity: float = 1.0
    boundary: str = "free"
    builder: str = "cells"
    cell_side: float = None
    k_reach: float = 1.0

    def __post_init__(self):
        if self.process not in ("poisson", "lattice"):
            raise ParameterError(f"unknown process {self.process!r}")
        if self.builder not in ("cells", "naive"):
            raise ParameterError(f"unknown builder {self.builder!r}")
        if self.k_reach < 0:
            raise ParameterError("k_reach must be non-negative")

    @property
    def d(self):
        return self.kernel.d


def replica_seeds(seed, r):
    """Seeds for cloud, marks, edges and bond percolation of replica ``r``."""
    base = rng.derive_seed(seed, rng.TAG["replica"], r)
    return {name: rng.derive_seed(base, i) for i, name in enumerate(("cloud", "marks", "edges", "bonds"), 1)}


def sample_graph(config, n, seed, palm=True):
    """One replica of the graph on the cube of side ``n`` centred at 0."""
    s = seed if isinstance(seed, dict) else replica_seeds(seed, 0)
    dom = cube(float(n), config.d, boundary=config.boundary)
    if config.process == "poisson":
        pc = sample_poisson(dom, config.intensity, s["cloud"])
    else:
        pc = sample_lattice(dom, config.intensity, s["cloud"])
    cloud = attach_marks(pc, s["marks"])
    if palm:
        cloud = palm_condition(cloud)
    return build_graph(cloud, config.kernel, s["edges"], config.builder, config.cell_side)


def _ci(f, R):
    return 1.96 * float(np.sqrt(max(f * (1.0 - f), 0.0) / R))


@dataclass(frozen=True)
class ThetaEstimate:
    """Finite-box proxy of the infinite-cluster density."""

    p: float
    n: float
    estimator: str
    value: float
    ci: float
    replicas: int
    seed: int = 0
    ell: float = None

    def row(self):
        return [self.estimator, repr(float(self.p)), repr(float(self.n)), repr(self.value),
                repr(self.ci), self.replicas, self.seed]


@dataclass(frozen=True)
class Frequency:
    """Empirical frequency with a normal-approximation 95% half-width."""

    value: float
    ci: float
    replicas: int
    hits: int = 0
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_indicators(cls, ind, **extra):
        ind = np.asarray(ind, dtype=bool)
        R = ind.size
        f = float(ind.mean()) if R else 0.0
        return cls(f, _ci(f, R) if R else 0.0, R, int(ind.sum()), extra)


def _origin_indicator(graph, n, k_reach, estimator):
    o = graph.cloud.palm_index
    if o is None:
        raise ParameterError("graph is not Palm-conditioned")
    part = components(graph)
    lab = part.labels[o]
    if estimator == "origin_to_boundary":
        members = part.members(lab)
        depth = 0.5 * n - np.abs(graph.cloud.locations[members]).max(axis=1)
        return bool(np.any(depth <= k_reach))
    if estimator == "largest_component_fraction":
        if part.sizes[lab] < 2:
            return False
        big = np.flatnonzero(part.sizes == part.sizes.max())
        if lab not in big:
            return False
        if big.size == 1:
            return True
        # ties: the component holding the smallest mark wins
        marks = graph.cloud.marks
        best = min(big, key=lambda c: float(marks[part.labels == c].min()))
        return bool(best == lab)
    raise ParameterError(f"unknown estimator {estimator!r}; expected one of {ESTIMATORS}")


def _nested(graph, n, n_max):
    if n == n_max:
        return graph
    return induced_subgraph(graph, cube(float(n), graph.cloud.d))


def _check_common(replicas, ns):
    if int(replicas) < 1:
        raise ParameterError("replicas must be at least 1")
    ns = [float(n) for n in np.atleast_1d(ns)]
    if any(n <= 0 for n in ns):
        raise ParameterError("box sizes must be positive")
    return int(replicas), ns


def theta_indicators(config, ps, ns, replicas, seed, estimator="origin_to_boundary", k_reach=None, threads=None,
                     start=0):
    """Per-replica origin events, shape ``(replicas, len(ns), len(ps))``.

    One graph per replica is built on the largest box; smaller boxes are its
    induced subgraphs and every ``p`` uses the same edge uniforms, so the
    indicators are coupled across ``n`` and monotone in ``p``.  Replicas are
    numbered ``start, start+1, ...``, so batches can be concatenated.
    """
    replicas, ns = _check_common(replicas, ns)
    ps = [float(p) for p in np.atleast_1d(ps)]
    kr = config.k_reach if k_reach is None else float(k_reach)
    n_max = max(ns)

    def one(r):
        s = replica_seeds(seed, r)
        g = sample_graph(config, n_max, s)
        out = np.zeros((len(ns), len(ps)), dtype=bool)
        for a, n in enumerate(ns):
            gn = _nested(g, n, n_max)
            for b, p in enumerate(ps):
                gp = gn if p == 1.0 else bond_percolate(gn, p, s["bonds"])
                out[a, b] = _origin_indicator(gp, n, kr, estimator)
        return out

    return np.array(map_ordered(one, range(start, start + replicas), threads)).reshape(replicas, len(ns), len(ps))


def theta_sweep(config, ps, ns, replicas, seed, estimator="origin_to_boundary", k_reach=None, threads=None):
    """Coupled θ proxies over a grid of ``p`` and ``n``, flattened n-major."""
    ind = theta_indicators(config, ps, ns, replicas, seed, estimator, k_reach, threads)
    return summarize_theta(ind, ps, ns, seed, estimator)


def summarize_theta(ind, ps, ns, seed, estimator):
    """Estimates from a ``(replicas, len(ns), len(ps))`` indicator array, n-major."""
    out = []
    for a, n in enumerate(np.atleast_1d(ns)):
        for b, p in enumerate(np.atleast_1d(ps)):
            f = float(ind[:, a, b].mean())
            out.append(ThetaEstimate(float(p), float(n), estimator, f, _ci(f, ind.shape[0]), ind.shape[0], int(seed)))
    return out


def estimate_theta(config, p, n, replicas, seed, estimator="origin_to_boundary", k_reach=None, threads=None):
    """θ proxy at a single ``(p, n)``; see :func:`theta_indicators`."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError("p must lie in [0, 1]")
    return theta_sweep(config, [p], [n], replicas, seed, estimator, k_reach, threads)[0]


def sublinear_indicators(config, lam, ns, replicas, seed, palm=False, threads=None, start=0):
    """Per-replica events ``|C_max(G[box n])| > n^(lam d)``, shape ``(replicas, len(ns))``."""
    if not 0.0 < lam < 1.0:
        raise ParameterError("lambda must lie in (0, 1)")
    replicas, ns = _check_common(replicas, ns)
    n_max = max(ns)
    d = config.d

    def one(r):
        s = replica_seeds(seed, r)
        g = sample_graph(config, n_max, s, palm=palm)
        return [largest_component_size(_nested(g, n, n_max)) > n ** (lam * d) for n in ns]

    return np.array(map_ordered(one, range(start, start + replicas), threads), dtype=bool).reshape(replicas, len(ns))


def sublinear_sweep(config, lam, ns, replicas, seed, palm=False, threads=None):
    ind = sublinear_indicators(config, lam, ns, replicas, seed, palm, threads)
    return summarize_sublinear(ind, lam, ns)


def summarize_sublinear(ind, lam, ns):
    return [Frequency.from_indicators(ind[:, a], n=float(n), lam=float(lam)) for a, n in enumerate(np.atleast_1d(ns))]


def sublinear_cluster_prob(config, lam, n, replicas, seed, palm=False, threads=None):
    """Empirical probability that the largest cluster in the box exceeds ``n^(lam d)``."""
    return sublinear_sweep(config, lam, [n], replicas, seed, palm, threads)[0]


def truncation_indicators(config, ells, n, replicas, seed, p=1.0, estimator="origin_to_boundary", k_reach=None,
                          threads=None, start=0):
    """Per-replica origin events on truncated graphs, shape ``(replicas, len(ells))``.

    ``np.inf`` in ``ells`` means no truncation.  Truncations of one graph are
    nested, so each row is monotone in ``ell``.
    """
    replicas, _ = _check_common(replicas, [n])
    ells = [float(e) for e in np.atleast_1d(ells)]
    kr = config.k_reach if k_reach is None else float(k_reach)

    def one(r):
        s = replica_seeds(seed, r)
        g = sample_graph(config, n, s)
        if p != 1.0:
            g = bond_percolate(g, p, s["bonds"])
        return [_origin_indicator(g if np.isinf(e) else truncate(g, e), n, kr, estimator) for e in ells]

    return np.array(map_ordered(one, range(start, start + replicas), threads), dtype=bool).reshape(replicas, len(ells))


def truncation_sweep(config, ells, n, replicas, seed, p=1.0, estimator="origin_to_boundary", k_reach=None, threads=None):
    ind = truncation_indicators(config, ells, n, replicas, seed, p, estimator, k_reach, threads)
    return summarize_truncation(ind, ells, n, seed, p, estimator)


def summarize_truncation(ind, ells, n, seed, p=1.0, estimator="origin_to_boundary"):
    out = []
    for a, e in enumerate(np.atleast_1d(ells)):
        f = float(ind[:, a].mean())
        out.append(ThetaEstimate(float(p), float(n), estimator, f, _ci(f, ind.shape[0]), ind.shape[0], int(seed), float(e)))
    return out


def write_estimates_csv(estimates, path=None):
    """Rows ``estimator,p,n,value,ci,replicas,seed`` (plus ``ell`` for truncation sweeps)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    with_ell = any(e.ell is not None for e in estimates)
    w.writerow(["estimator", "p", "n", "value", "ci", "replicas", "seed"] + (["ell"] if with_ell else []))
    for e in estimates:
        w.writerow(e.row() + ([repr(float(e.ell))] if with_ell else []))
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
