"""Electrical networks on sampled graphs.

Effective conductance between a vertex ``v`` and the set of vertices beyond
graph distance ``n`` is computed by shorting that set into one vertex
``z_n`` and solving the Dirichlet problem (voltage 1 at ``v``, 0 at ``z_n``)
with preconditioned conjugate gradients.  The net current out of ``v``
equals ``pi(v)`` times the probability that the conductance-weighted walk
from ``v`` hits ``z_n`` before returning, which the walk simulator
estimates independently.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import LinearOperator, cg

from . import rng
from .errors import NumericError, ParameterError
from .parallel import map_ordered

__all__ = [
    "Network",
    "ConductanceCurve",
    "from_graph",
    "from_edges",
    "hop_distances",
    "short_beyond",
    "effective_conductance",
    "transience_probe",
    "random_walk_stats",
    "write_curve_csv",
    "SOLVER_RTOL",
    "SOLVER_MAXITER",
]

SOLVER_RTOL = 1e-10
SOLVER_MAXITER = 100_000
PLATEAU_RATIO = 0.5


@dataclass(frozen=True)
class Network:
    """Undirected network with positive edge conductances (parallel edges allowed).

    ``ids`` maps vertices to the graph they came from (``-1`` for a shorted
    vertex); ``z`` is the index of the shorted vertex, if any.
    """

    n: int
    edges: np.ndarray
    conductance: np.ndarray
    ids: np.ndarray = None
    z: int = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        c = np.asarray(self.conductance, dtype=float).reshape(-1)
        if c.shape[0] != e.shape[0]:
            raise ParameterError("one conductance per edge required")
        if c.size and not (np.all(c > 0) and np.all(np.isfinite(c))):
            raise ParameterError("conductances must be positive and finite")
        if e.size and (e.min() < 0 or e.max() >= self.n):
            raise ParameterError("edge endpoint out of range")
        if np.any(e[:, 0] == e[:, 1]):
            raise ParameterError("loops are not allowed")
        ids = np.arange(self.n) if self.ids is None else np.asarray(self.ids, dtype=np.int64)
        for a in (e, c, ids):
            a.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "conductance", c)
        object.__setattr__(self, "ids", ids)

    @property
    def m(self):
        return self.edges.shape[0]

    @property
    def pi(self):
        """Total conductance at each vertex."""
        return np.bincount(self.edges.ravel(), weights=np.repeat(self.conductance, 2), minlength=self.n)

    def weight_matrix(self):
        """Symmetric sparse matrix of summed conductances (parallel edges added)."""
        e, c = self.edges, self.conductance
        W = sparse.coo_matrix((np.r_[c, c], (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])),
                              shape=(self.n, self.n))
        return W.tocsr()


@dataclass(frozen=True)
class ConductanceCurve:
    source: int
    ns: tuple
    values: tuple
    residuals: tuple
    flag: str
    monotone: bool
    rtol: float = SOLVER_RTOL
    maxiter: int = SOLVER_MAXITER


def from_edges(n, edges, conductance=None):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    c = np.ones(edges.shape[0]) if conductance is None else np.asarray(conductance, dtype=float)
    return Network(int(n), edges, c)


def from_graph(graph, conductance="unit"):
    """Network on a graph's vertices; ``conductance`` is ``"unit"`` or a map of edge length."""
    if isinstance(conductance, str):
        if conductance != "unit":
            raise ParameterError(f"unknown conductance {conductance!r}")
        c = np.ones(graph.m)
    else:
        c = np.asarray(conductance(graph.lengths), dtype=float).reshape(-1)
        if c.shape[0] != graph.m or not (np.all(c > 0) and np.all(np.isfinite(c))):
            raise ParameterError("conductance map must give a positive finite value per edge")
    return Network(graph.n, graph.edges, c)


def _check_vertex(net, v):
    if not 0 <= int(v) < net.n:
        raise ParameterError(f"vertex {v} is not in the network")
    return int(v)


def hop_distances(net, v):
    """Graph distance from ``v`` (``inf`` where unreachable)."""
    v = _check_vertex(net, v)
    return csgraph.shortest_path(net.weight_matrix(), unweighted=True, indices=v, directed=False)


def short_beyond(net, v, n, dist=None):
    """Merge every vertex farther than ``n`` hops from ``v`` (or unreachable) into ``z_n``."""
    v = _check_vertex(net, v)
    dist = hop_distances(net, v) if dist is None else dist
    far = ~(dist <= n)
    if not far.any():
        return net
    keep = np.flatnonzero(~far)
    new = np.full(net.n, keep.size, dtype=np.int64)
    new[keep] = np.arange(keep.size)
    e = new[net.edges]
    ok = e[:, 0] != e[:, 1]
    ids = np.r_[net.ids[keep], -1]
    return Network(keep.size + 1, e[ok], net.conductance[ok], ids, keep.size)


def _solve(net, v):
    """Current out of ``v`` with ``v`` at 1 and ``net.z`` at 0, and the relative residual."""
    W = net.weight_matrix()
    pi = np.asarray(W.sum(axis=1)).ravel()
    z = net.z
    # only the component of v carries current; other vertices would make the system singular
    _, comp = csgraph.connected_components(W, directed=False)
    if comp[z] != comp[v]:
        return 0.0, 0.0
    interior = comp == comp[v]
    interior[[v, z]] = False
    I = np.flatnonzero(interior)
    if I.size == 0:
        return float(W[v, z]), 0.0
    WII = W[I][:, I]
    A = (sparse.diags(pi[I]) - WII).tocsr()
    b = np.asarray(W[I][:, [v]].todense()).ravel()
    if not np.any(b):
        return float(W[v, z]), 0.0
    dinv = 1.0 / pi[I]
    M = LinearOperator(A.shape, matvec=lambda x: dinv * x, dtype=float)
    x, info = cg(A, b, rtol=SOLVER_RTOL, atol=0.0, maxiter=SOLVER_MAXITER, M=M)
    res = float(np.linalg.norm(b - A @ x) / np.linalg.norm(b))
    if info != 0:
        raise NumericError(f"conjugate gradients did not converge (info={info})", residual=res)
    volt = np.zeros(net.n)
    volt[v] = 1.0
    volt[comp != comp[v]] = np.nan
    volt[I] = x
    row = W[v]
    current = float(np.sum(row.data * (1.0 - volt[row.indices])))
    return current, res


def effective_conductance(net, v, n=None, return_residual=False):
    """Effective conductance between ``v`` and ``z_n``; 0 when nothing lies beyond ``n``.

    With ``n=None`` the network must already contain a shorted vertex.
    """
    v = _check_vertex(net, v)
    sh = net if n is None else short_beyond(net, v, n)
    if sh.z is None:
        out = (0.0, 0.0)
    else:
        if n is not None:
            v = int(np.flatnonzero(sh.ids == net.ids[v])[0])
        out = _solve(sh, v)
    return out if return_residual else out[0]


def transience_probe(net, v, ns, threads=None):
    """Conductance curve over increasing ``ns`` with a plateau/decaying flag.

    ``plateau`` when the minimum over the last third of the curve exceeds
    half its maximum (a reporting convention, not a proof of transience).
    """
    v = _check_vertex(net, v)
    ns = [int(n) for n in ns]
    if not ns or any(b <= a for a, b in zip(ns, ns[1:])):
        raise ParameterError("n list must be non-empty and strictly increasing")
    dist = hop_distances(net, v)

    def one(n):
        sh = short_beyond(net, v, n, dist)
        if sh.z is None:
            return 0.0, 0.0
        vv = int(np.flatnonzero(sh.ids == net.ids[v])[0])
        return _solve(sh, vv)

    res = map_ordered(one, ns, threads)
    vals = np.array([r[0] for r in res])
    resid = tuple(float(r[1]) for r in res)
    tail = vals[len(vals) - max(1, len(vals) // 3):]
    flag = "plateau" if vals.max() > 0 and tail.min() > PLATEAU_RATIO * vals.max() else "decaying"
    scale = max(vals.max(), 1e-300)
    monotone = bool(np.all(np.diff(vals) <= 1e-7 * scale))
    return ConductanceCurve(v, tuple(ns), tuple(float(x) for x in vals), resid, flag, monotone)


@numba.njit(cache=True)
def _walk(indptr, indices, cum, start, u, target_mask, stamp, tag):
    """One walk; returns (first return step or -1, first target step or -1, distinct count)."""
    x = start
    ret = -1
    hit = -1
    distinct = 1
    stamp[start] = tag
    for t in range(u.shape[0]):
        a, b = indptr[x], indptr[x + 1]
        lo = cum[a - 1] if a > 0 else 0.0
        thr = lo + u[t] * (cum[b - 1] - lo)
        j = a
        hi = b - 1
        while j < hi:
            mid = (j + hi) // 2
            if cum[mid] > thr:
                hi = mid
            else:
                j = mid + 1
        x = indices[j]
        if stamp[x] != tag:
            stamp[x] = tag
            distinct += 1
        if x == start and ret < 0:
            ret = t + 1
        if target_mask[x] and hit < 0:
            hit = t + 1
    return ret, hit, distinct


def random_walk_stats(net, v, steps, walkers, seed, target=None):
    """Simulate walkers moving along edges with probability ``C(xy)/pi(x)``.

    Reports the fraction of walkers back at ``v`` within ``steps`` steps, the
    mean number of distinct vertices visited and, if ``target`` vertices are
    given, the fraction that hit the target before returning to ``v``
    (whose product with ``pi(v)`` estimates the effective conductance).
    """
    v = _check_vertex(net, v)
    if steps < 1 or walkers < 1:
        raise ParameterError("steps and walkers must be positive")
    W = net.weight_matrix()
    if W[v].nnz == 0:
        raise ParameterError("the walk is undefined from an isolated vertex")
    indptr = W.indptr.astype(np.int64)
    indices = W.indices.astype(np.int64)
    cum = np.cumsum(W.data)
    mask = np.zeros(net.n, dtype=np.bool_)
    if target is not None:
        mask[np.asarray(target, dtype=np.int64)] = True
    stamp = np.zeros(net.n, dtype=np.int64)
    rets, hits, dist = np.empty(walkers, np.int64), np.empty(walkers, np.int64), np.empty(walkers, np.int64)
    for w in range(walkers):
        u = rng.generator(seed, rng.TAG["trial"], w).random(int(steps))
        rets[w], hits[w], dist[w] = _walk(indptr, indices, cum, v, u, mask, stamp, w + 1)
    returned = rets > 0
    out = {
        "steps": int(steps),
        "walkers": int(walkers),
        "return_frequency": float(returned.mean()),
        "mean_range": float(dist.mean()),
    }
    if target is not None:
        esc = (hits > 0) & ((rets < 0) | (hits < rets))
        undecided = (hits < 0) & (rets < 0)
        f = float(esc.mean())
        out.update({
            "escape_frequency": f,
            "escape_sigma": float(np.sqrt(f * (1 - f) / walkers)),
            "undecided": int(undecided.sum()),
            "pi_v": float(np.asarray(W[v].sum())),
        })
    return out


def write_curve_csv(curve, path=None):
    """Rows ``n,conductance,residual``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n", "conductance", "residual"])
    for n, c, r in zip(curve.ns, curve.values, curve.residuals):
        w.writerow([n, repr(float(c)), repr(float(r))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
