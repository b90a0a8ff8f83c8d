"""Sampling the random geometric graph and the graph operators applied to it.

Two samplers produce the same edge distribution:

* :func:`build_graph_naive` tests every pair against its own keyed uniform
  (the edge mark), so graphs built from nested clouds, different kernels or
  different marks with one seed are monotonically coupled.
* :func:`build_graph_cells` is the fast path.  Cell pairs are split across a
  hierarchy of dyadic cell sizes (near pairs at fine scales, far pairs at
  coarse ones) and, within a cell, vertices are grouped in dyadic mark bins.
  Each block pair gets a dominating probability from its smallest marks and
  its minimal distance; candidates are thinned from that bound and accepted
  with the ratio of the true probability to the bound.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import ParameterError
from .kernels import _phi
from .point_process import BoxDomain, MarkedCloud

__all__ = [
    "GeoGraph",
    "build_graph_naive",
    "build_graph_cells",
    "build_graph",
    "bond_percolate",
    "truncate",
    "induced_subgraph",
    "write_edges_csv",
    "default_cell_side",
]

EXHAUSTIVE_ABOVE = 0.25
_MAX_BIN = 48
_CHUNK = 4_000_000


@dataclass(frozen=True)
class GeoGraph:
    """Vertices of a marked cloud plus undirected edges with cached lengths.

    ``edges`` has shape ``(m, 2)`` with ``i < j`` in every row and rows in
    lexicographic order.  ``parent_ids`` maps vertices back to the graph an
    induced subgraph was cut from.
    """

    cloud: MarkedCloud
    edges: np.ndarray
    lengths: np.ndarray
    seed: int = 0
    parent_ids: np.ndarray = None

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        ln = np.asarray(self.lengths, dtype=float).reshape(-1)
        if ln.shape[0] != e.shape[0]:
            raise ParameterError("one length per edge required")
        e.setflags(write=False)
        ln.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "lengths", ln)

    @property
    def n(self):
        return len(self.cloud)

    @property
    def m(self):
        return self.edges.shape[0]

    def degrees(self):
        return np.bincount(self.edges.ravel(), minlength=self.n)

    def with_edges(self, mask):
        return GeoGraph(self.cloud, self.edges[mask], self.lengths[mask], self.seed, self.parent_ids)


def _canonical_edges(i, j, lengths):
    a, b = np.minimum(i, j), np.maximum(i, j)
    order = np.lexsort((b, a))
    return np.stack([a[order], b[order]], axis=1), lengths[order]


def _check_dims(cloud, kernel):
    if cloud.d != kernel.d:
        raise ParameterError(f"kernel dimension {kernel.d} does not match cloud dimension {cloud.d}")


def build_graph_naive(cloud, kernel, seed):
    """Test every unordered pair with the uniform keyed by the pair's identity."""
    _check_dims(cloud, kernel)
    seed = int(seed)
    n = len(cloud)
    loc, marks, keys, dom = cloud.locations, cloud.marks, cloud.keys, cloud.domain
    out_i, out_j, out_l = [], [], []
    rows = max(1, _CHUNK // max(n, 1))
    for a in range(0, n, rows):
        b = min(n, a + rows)
        ii, jj = np.nonzero(np.arange(a, b)[:, None] < np.arange(n)[None, :])
        ii = ii + a
        if ii.size == 0:
            continue
        r = dom.distance(loc[ii], loc[jj])
        p = -np.expm1(-_phi(kernel, marks[ii], marks[jj], r))
        ki, kj = keys[ii], keys[jj]
        u = rng.uniform(seed, rng.TAG["edge"], np.minimum(ki, kj), np.maximum(ki, kj))
        hit = u < p
        out_i.append(ii[hit])
        out_j.append(jj[hit])
        out_l.append(r[hit])
    if out_i:
        edges, lengths = _canonical_edges(np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_l))
    else:
        edges, lengths = np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    return GeoGraph(cloud, edges, lengths, seed)


def default_cell_side(cloud):
    """Four times the mean inter-point spacing ``(volume / n)^(1/d)``."""
    n = max(len(cloud), 1)
    vol = cloud.domain.volume
    if vol <= 0:
        return 1.0
    return 4.0 * (vol / n) ** (1.0 / cloud.d)


class _Blocks:
    """Vertices grouped by (cell at one level, mark bin), sorted by cell then bin."""

    def __init__(self, cell, mark_bin, marks, dims):
        self.dims = dims
        lin = np.ravel_multi_index(tuple(cell.T), dims)
        order = np.lexsort((mark_bin, lin))
        self.members = order
        key = lin[order] * (_MAX_BIN + 1) + mark_bin[order]
        starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
        self.start = starts
        self.count = np.diff(np.r_[starts, key.size])
        self.cell_lin = lin[order][starts]
        self.min_mark = np.minimum.reduceat(marks[order], starts) if starts.size else np.zeros(0)
        # cells -> contiguous block ranges
        cstarts = np.flatnonzero(np.r_[True, self.cell_lin[1:] != self.cell_lin[:-1]])
        self.cells = self.cell_lin[cstarts]
        self.cell_first = cstarts
        self.cell_nblocks = np.diff(np.r_[cstarts, self.cell_lin.size])
        self.cell_coord = np.stack(np.unravel_index(self.cells, dims), axis=1) if self.cells.size else np.zeros((0, len(dims)), dtype=np.int64)

    def lookup(self, coords):
        """Index into ``self.cells`` for each coordinate row, -1 if empty/outside."""
        dims = np.asarray(self.dims)
        inside = np.all((coords >= 0) & (coords < dims), axis=1)
        out = np.full(coords.shape[0], -1, dtype=np.int64)
        if not inside.any() or self.cells.size == 0:
            return out
        lin = np.ravel_multi_index(tuple(coords[inside].T), self.dims)
        pos = np.searchsorted(self.cells, lin)
        pos = np.minimum(pos, self.cells.size - 1)
        found = self.cells[pos] == lin
        tmp = np.where(found, pos, -1)
        out[inside] = tmp
        return out


def _cell_pairs(blocks, level, top):
    """Cell pairs (indices into blocks.cells) handled at this level, a <= b."""
    d = blocks.cell_coord.shape[1]
    coords = blocks.cell_coord
    pairs_a, pairs_b = [], []
    rngs = []
    if level == 0:
        rngs.append(("near", np.arange(-1, 2)))
    if level < top:
        rngs.append(("far", np.arange(-3, 4)))
    for kind, r1 in rngs:
        offs = np.stack(np.meshgrid(*([r1] * d), indexing="ij"), axis=-1).reshape(-1, d)
        cheb = np.abs(offs).max(axis=1)
        offs = offs[cheb <= 1] if kind == "near" else offs[cheb >= 2]
        for o in offs:
            nb = coords + o
            if kind == "far":
                adj_parent = np.abs((nb >> 1) - (coords >> 1)).max(axis=1) <= 1
            else:
                adj_parent = np.ones(coords.shape[0], dtype=bool)
            idx = blocks.lookup(nb)
            ok = adj_parent & (idx >= 0)
            a = np.flatnonzero(ok)
            b = idx[ok]
            keep = a <= b
            pairs_a.append(a[keep])
            pairs_b.append(b[keep])
    if not pairs_a:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.concatenate(pairs_a), np.concatenate(pairs_b)


def _expand(first_a, n_a, first_b, n_b):
    """All (block_a, block_b) combinations for each cell pair."""
    tot = n_a * n_b
    rep = np.repeat(np.arange(tot.size), tot)
    local = np.arange(rep.size) - np.repeat(np.cumsum(tot) - tot, tot)
    ba = first_a[rep] + local // n_b[rep]
    bb = first_b[rep] + local % n_b[rep]
    return ba, bb


def _distinct_positions(gen, N, K):
    """For each segment s, K[s] distinct uniform integers in [0, N[s])."""
    seg = np.repeat(np.arange(K.size), K)
    pos = np.floor(gen.random(seg.size) * N[seg]).astype(np.int64)
    pos = np.minimum(pos, N[seg] - 1)
    while True:
        order = np.lexsort((pos, seg))
        seg, pos = seg[order], pos[order]
        dup = np.r_[False, (seg[1:] == seg[:-1]) & (pos[1:] == pos[:-1])]
        if not dup.any():
            return seg, pos
        missing = np.bincount(seg[dup], minlength=K.size)
        seg, pos = seg[~dup], pos[~dup]
        extra_seg = np.repeat(np.arange(K.size), missing)
        extra = np.floor(gen.random(extra_seg.size) * N[extra_seg]).astype(np.int64)
        extra = np.minimum(extra, N[extra_seg] - 1)
        seg = np.concatenate([seg, extra_seg])
        pos = np.concatenate([pos, extra])


def _tri_unrank(pos, n):
    """Pair (i, j), i < j, of rank ``pos`` in row-major order over n items."""
    nf = n.astype(float)
    i = np.floor((2 * nf - 1 - np.sqrt((2 * nf - 1) ** 2 - 8 * pos.astype(float))) / 2).astype(np.int64)
    i = np.clip(i, 0, np.maximum(n - 2, 0))
    base = i * n - i * (i + 1) // 2
    # float rounding can be off by one in either direction
    over = pos < base
    i[over] -= 1
    base = i * n - i * (i + 1) // 2
    nxt = (i + 1) * n - (i + 1) * (i + 2) // 2
    under = pos >= nxt
    i[under] += 1
    base = i * n - i * (i + 1) // 2
    j = pos - base + i + 1
    return i, j


def build_graph_cells(cloud, kernel, cell_side=None, seed=0):
    """Sample the graph with the hierarchical cell/mark-bin dominating scheme.

    Distributionally identical to :func:`build_graph_naive`, but the edge set
    is not coupled pair-by-pair to it.  Block pairs whose dominating
    probability exceeds 1/4 are tested exhaustively.
    """
    _check_dims(cloud, kernel)
    seed = int(seed)
    n = len(cloud)
    if n < 2:
        return GeoGraph(cloud, np.zeros((0, 2), dtype=np.int64), np.zeros(0), seed)
    c = default_cell_side(cloud) if cell_side is None else float(cell_side)
    if not c > 0:
        raise ParameterError("cell_side must be positive")
    dom = cloud.domain
    loc, marks = cloud.locations, cloud.marks
    d = cloud.d
    lo = dom.lower
    G = np.maximum(1, np.ceil(np.asarray(dom.sides) / c).astype(np.int64))
    q0 = np.clip(np.floor((loc - lo) / c).astype(np.int64), 0, G - 1)
    top = int(np.ceil(np.log2(G.max()))) if G.max() > 1 else 0
    if kernel.mark_free:
        mbin = np.zeros(n, dtype=np.int64)
    else:
        mbin = np.clip(np.floor(-np.log2(marks)).astype(np.int64), 0, _MAX_BIN)
    gen = rng.generator(seed, rng.TAG["cells"])
    out_i, out_j, out_l = [], [], []
    for level in range(top + 1):
        dims = tuple(int(g) for g in -(-G // (1 << level)))
        blocks = _Blocks(q0 >> level, mbin, marks, dims)
        ca, cb = _cell_pairs(blocks, level, top)
        if ca.size == 0:
            continue
        ba, bb = _expand(blocks.cell_first[ca], blocks.cell_nblocks[ca],
                         blocks.cell_first[cb], blocks.cell_nblocks[cb])
        same_cell = blocks.cell_lin[ba] == blocks.cell_lin[bb]
        keep = ~same_cell | (ba <= bb)
        ba, bb = ba[keep], bb[keep]
        same = ba == bb
        na, nb = blocks.count[ba], blocks.count[bb]
        N = np.where(same, na * (na - 1) // 2, na * nb)
        h = c * (1 << level)
        ctr_a = lo + (np.stack(np.unravel_index(blocks.cell_lin[ba], dims), axis=1) + 0.5) * h
        ctr_b = lo + (np.stack(np.unravel_index(blocks.cell_lin[bb], dims), axis=1) + 0.5) * h
        gap = np.maximum(0.0, np.abs(dom.displacement(ctr_a, ctr_b)) - h)
        dmin = np.sqrt(np.sum(gap ** 2, axis=1))
        pmax = -np.expm1(-_phi(kernel, blocks.min_mark[ba], blocks.min_mark[bb], dmin))
        live = (N > 0) & (pmax > 0)
        ba, bb, same, N, pmax = ba[live], bb[live], same[live], N[live], pmax[live]
        puse = np.where(pmax > EXHAUSTIVE_ABOVE, 1.0, pmax)
        K = np.where(puse >= 1.0, N, gen.binomial(N, np.minimum(puse, 1.0)))
        # process block pairs in chunks of bounded candidate count
        csum = np.cumsum(K)
        edges_at = np.searchsorted(csum, np.arange(_CHUNK, csum[-1] if csum.size else 0, _CHUNK))
        bounds = np.r_[0, edges_at, K.size]
        for s0, s1 in zip(bounds[:-1], bounds[1:]):
            if s1 <= s0:
                continue
            sl = slice(s0, s1)
            Ks, Ns = K[sl], N[sl]
            full = puse[sl] >= 1.0
            # exhaustive segments enumerate every rank; sampled ones draw distinct ranks
            seg_f = np.repeat(np.flatnonzero(full), Ks[full])
            pos_f = np.arange(seg_f.size) - np.repeat(np.cumsum(Ks[full]) - Ks[full], Ks[full])
            Kp = np.where(full, 0, Ks)
            seg_p, pos_p = _distinct_positions(gen, np.maximum(Ns, 1), Kp)
            seg = np.concatenate([seg_f, seg_p]).astype(np.int64)
            pos = np.concatenate([pos_f, pos_p]).astype(np.int64)
            if seg.size == 0:
                continue
            A, B = ba[sl][seg], bb[sl][seg]
            nA, nB = blocks.count[A], blocks.count[B]
            sm = same[sl][seg]
            ia = np.empty(seg.size, dtype=np.int64)
            ib = np.empty(seg.size, dtype=np.int64)
            ia[~sm] = pos[~sm] // nB[~sm]
            ib[~sm] = pos[~sm] % nB[~sm]
            if sm.any():
                ti, tj = _tri_unrank(pos[sm], nA[sm])
                ia[sm], ib[sm] = ti, tj
            vi = blocks.members[blocks.start[A] + ia]
            vj = blocks.members[blocks.start[B] + ib]
            r = dom.distance(loc[vi], loc[vj])
            p = -np.expm1(-_phi(kernel, marks[vi], marks[vj], r))
            hit = gen.random(seg.size) * puse[sl][seg] < p
            out_i.append(vi[hit])
            out_j.append(vj[hit])
            out_l.append(r[hit])
    if out_i:
        edges, lengths = _canonical_edges(np.concatenate(out_i), np.concatenate(out_j), np.concatenate(out_l))
    else:
        edges, lengths = np.zeros((0, 2), dtype=np.int64), np.zeros(0)
    return GeoGraph(cloud, edges, lengths, seed)


def build_graph(cloud, kernel, seed, builder="cells", cell_side=None):
    """Dispatch to the ``"naive"`` or ``"cells"`` sampler."""
    if builder == "naive":
        return build_graph_naive(cloud, kernel, seed)
    if builder == "cells":
        return build_graph_cells(cloud, kernel, cell_side, seed)
    raise ParameterError(f"unknown builder {builder!r}")


def bond_percolate(graph, p, seed):
    """Keep each edge iff its keyed uniform is below ``p``.

    One uniform per edge (keyed by the endpoint identities), so retained edge
    sets are nested in ``p`` for a fixed seed.
    """
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"retention p must lie in [0, 1], got {p}")
    keys = graph.cloud.keys
    ki, kj = keys[graph.edges[:, 0]], keys[graph.edges[:, 1]]
    u = rng.uniform(int(seed), rng.TAG["bond"], np.minimum(ki, kj), np.maximum(ki, kj)) if graph.m else np.zeros(0)
    return graph.with_edges(u < p)


def truncate(graph, ell):
    """Remove every edge longer than ``ell``."""
    if not ell > 0:
        raise ParameterError("truncation length must be positive")
    return graph.with_edges(graph.lengths <= ell)


def induced_subgraph(graph, box):
    """Vertices located in ``box`` and the edges between them.

    The returned graph's ``parent_ids`` index into ``graph``'s vertices.
    """
    if box.d != graph.cloud.d:
        raise ParameterError("box dimension does not match the graph")
    if not graph.cloud.domain.contains_box(box):
        raise ParameterError("box is not contained in the graph's domain")
    inside = box.contains(graph.cloud.locations)
    ids = np.flatnonzero(inside)
    remap = np.full(graph.n, -1, dtype=np.int64)
    remap[ids] = np.arange(ids.size)
    keep = inside[graph.edges[:, 0]] & inside[graph.edges[:, 1]]
    edges = remap[graph.edges[keep]]
    parent_dom = graph.cloud.domain
    # a proper sub-box of a torus has ordinary faces
    same = np.allclose(box.sides, parent_dom.sides) and np.allclose(box.center, parent_dom.center)
    dom = BoxDomain(box.sides, parent_dom.boundary if same else "free", box.center, box.closed)
    parent = ids if graph.parent_ids is None else graph.parent_ids[ids]
    return GeoGraph(graph.cloud.subset(ids, dom), edges, graph.lengths[keep], graph.seed, parent)


def write_edges_csv(graph, path=None):
    """Edge list ``i,j,length``; returns the text when ``path`` is None."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "length"])
    for (i, j), ln in zip(graph.edges, graph.lengths):
        w.writerow([int(i), int(j), repr(float(ln))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
