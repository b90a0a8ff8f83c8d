"""Hand-built clouds, graphs and networks for tests."""

from fractions import Fraction

import numpy as np

from perclab.graph_builder import GeoGraph, build_graph
from perclab.network import Network, from_edges
from perclab.point_process import BoxDomain, MarkedCloud, PointCloud, attach_marks, cube, sample_poisson


def make_cloud(loc, marks=None, side=None, center=None, boundary="free", palm_index=None):
    loc = np.asarray(loc, dtype=float)
    if loc.ndim == 1:
        loc = loc[:, None]
    d = loc.shape[1]
    if side is None:
        side = 2 * float(np.abs(loc).max()) + 2 if loc.size else 2.0
    dom = BoxDomain((float(side),) * d, boundary, center)
    keys = np.arange(1, loc.shape[0] + 1, dtype=np.uint64) * np.uint64(0x9E3779B97F4A7C15)
    pc = PointCloud(dom, loc, keys, "poisson", 1.0, 0)
    if marks is None:
        marks = np.linspace(0.05, 0.95, max(loc.shape[0], 1))[: loc.shape[0]]
    return MarkedCloud(pc, marks, 0, palm_index)


def make_graph(loc, edges, marks=None, side=None, palm_index=None, boundary="free"):
    cloud = make_cloud(loc, marks, side, boundary=boundary, palm_index=palm_index)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    e = np.sort(e, axis=1)
    if e.size:
        e = e[np.lexsort((e[:, 1], e[:, 0]))]
    lengths = cloud.domain.distance(cloud.locations[e[:, 0]], cloud.locations[e[:, 1]]) if e.size else np.zeros(0)
    return GeoGraph(cloud, e, lengths)


def cloud(side, d, seed, boundary="free"):
    return attach_marks(sample_poisson(cube(side, d, boundary=boundary), 1.0, seed), seed + 1)


def annulus_table(c, kernel, builds, bins):
    """Edge-length histograms (naive row, cells row) summed over ``builds`` seeds."""
    rows = []
    for name in ("naive", "cells"):
        tot = np.zeros(len(bins) - 1)
        for b in range(builds):
            g = build_graph(c, kernel, 1000 + b, builder=name)
            tot += np.histogram(g.lengths, bins)[0]
        rows.append(tot)
    table = np.array(rows)
    return table[:, table.sum(axis=0) > 0]


def binary_tree(depth):
    n = 2 ** (depth + 1) - 1
    child = np.arange(1, n)
    return from_edges(n, np.stack([(child - 1) // 2, child], axis=1))


def series_parallel(rng, depth):
    """Random series/parallel network between terminals 0 and 1 with its exact conductance."""
    edges, cond = [], []
    count = [2]

    def build(a, b, level):
        if level == 0 or rng.random() < 0.25:
            c = float(rng.uniform(0.1, 10.0))
            edges.append((a, b))
            cond.append(c)
            return Fraction(c)
        parts = int(rng.integers(2, 4))
        if rng.random() < 0.5:
            return sum(build(a, b, level - 1) for _ in range(parts))
        nodes = [a] + [count[0] + i for i in range(parts - 1)] + [b]
        count[0] += parts - 1
        inv = sum(1 / build(x, y, level - 1) for x, y in zip(nodes, nodes[1:]))
        return 1 / inv

    total = build(0, 1, depth)
    return Network(count[0], edges, cond, z=1), float(total)


ACCEPTANCE_LINES = []


def report(num, title, ok, detail=""):
    """Record one PASS/FAIL line for the acceptance summary and assert."""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {num:>2}: {title}" + (f"  [{detail}]" if detail else "")
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line
