"""Multi-scale certificates: aliveness of nested cubes and goodness of renormalised clusters.

Two hierarchies are evaluated on a sampled graph.

*Aliveness.*  Stage-0 cubes have side ``ell``; a stage-n cube is split into
``sigma_n^d`` stage-(n-1) subcubes.  A stage-0 cube is alive when one of its
preclusters (reach ``k``) has at least ``ceil(ell^d theta / 2)`` vertices.  A
stage-n cube is alive when (A) ``r_n`` subcubes are alive, (B) ``r_n`` living
subcubes hold a ``(mu, v_{n-1})``-regular precluster and (C) ``r_n`` regular
preclusters from distinct subcubes are mutually adjacent.

*Goodness.*  Stage-n cubes have side ``prod sigma_i`` with
``sigma_i = (i+1)^2`` and cluster size targets ``prod alpha_i`` with
``alpha_i = ceil((i+1)^(2 lam d))``.  The bottom stage asks for a regular
component, the next one for mutually adjacent clusters of good subcubes, and
higher stages for a family of pairwise well-connected good subcubes, where
well-connectedness is decided by the renormalised clusters two levels down.

Both certificates are increasing events: adding edges or vertices, or lowering
marks, never destroys them.  The checkers keep every inclusion-maximal
witness (rather than one canonical choice) so this holds exactly.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from scipy import sparse

from .clusters import _union_find
from .errors import NotWeakDecayError, ParameterError
from .kernels import estimate_delta_eff, geometric_grid
from .point_process import BoxDomain, cube
from .regularity import is_mu_regular

__all__ = [
    "MU_GRID",
    "RenormParams",
    "TransienceParams",
    "derive_params",
    "sigma_sequence",
    "validate_params",
    "transience_params",
    "is_mu_v_regular",
    "StageResult",
    "stage0_alive",
    "stage_alive",
    "stage_good",
    "RenormReport",
    "survey",
    "find_clique",
    "find_biclique",
]

MU_GRID = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4, 0.45)
DELTA_MARGIN = 0.05
OMEGA_MARGIN = 0.05
RHO_C = 2.0
PREFIX = 64
CLIQUE_BUDGET = 20000
BICLIQUE_BUDGET = 200000
_EPS = 1e-12


def _ceil(x):
    # ceil that ignores representation noise such as 2/9 * 9 = 2.0000000000000004
    return int(math.ceil(x * (1.0 - _EPS) - _EPS))


@dataclass(frozen=True)
class RenormParams:
    """Parameters of the aliveness hierarchy.

    ``rho[n-1]`` and ``sigma[n-1]`` hold the stage-n density and scale
    factor.  The derived quantities are ``m(n) = ell * prod(sigma[:n])``,
    ``v(n) = theta/2 * m(n)^d * prod(rho[:n])`` and
    ``r(n) = ceil(rho[n-1] * sigma[n-1]^d)``.  Fields describing how the
    sequences were chosen are ``None`` for hand-built parameters.
    """

    d: int
    ell: float
    k: float
    theta: float
    mu: float
    rho: tuple
    sigma: tuple
    mu_star: float = None
    delta_eff_star: float = None
    nu: float = None
    omega: float = None
    lam: float = None
    rho_c: float = None
    sigma_window_from: int = None

    def __post_init__(self):
        object.__setattr__(self, "rho", tuple(float(x) for x in self.rho))
        object.__setattr__(self, "sigma", tuple(int(x) for x in self.sigma))
        if len(self.rho) != len(self.sigma):
            raise ParameterError("rho and sigma prefixes must have equal length")
        if not self.ell > 0 or self.k < 0 or not 0 < self.theta <= 1:
            raise ParameterError("need ell > 0, k >= 0 and theta in (0, 1]")
        if not 0 < self.mu < 0.5:
            raise ParameterError("mu must lie in (0, 1/2)")

    @property
    def stages(self):
        return len(self.sigma)

    def m(self, n):
        return float(self.ell) * float(np.prod(self.sigma[:n], dtype=float))

    def v(self, n):
        return 0.5 * self.theta * self.m(n) ** self.d * float(np.prod(self.rho[:n], dtype=float))

    def r(self, n):
        if n < 1:
            raise ParameterError("r_n is defined for n >= 1")
        return max(1, _ceil(self.rho[n - 1] * self.sigma[n - 1] ** self.d))

    def stage0_threshold(self):
        return _ceil(self.ell ** self.d * self.theta / 2.0)

    def as_dict(self, stages=None):
        S = self.stages if stages is None else min(stages, self.stages)
        out = {k: getattr(self, k) for k in ("d", "ell", "k", "theta", "mu", "mu_star", "delta_eff_star",
                                              "nu", "omega", "lam", "rho_c", "sigma_window_from")}
        out["rho"] = list(self.rho[:S])
        out["sigma"] = list(self.sigma[:S])
        out["m"] = [self.m(n) for n in range(S + 1)]
        out["v"] = [self.v(n) for n in range(S + 1)]
        out["r"] = [self.r(n) for n in range(1, S + 1)]
        return out


def _nu_upper(mu_star, delta_star):
    up = 1.0 / (1.0 - mu_star)
    if delta_star > 0:
        up = min(up, 2.0 / delta_star)
    return up


def validate_params(p):
    """Named violations of the parameter constraints (empty list when valid).

    Checks that apply only to derived parameters are skipped when the
    corresponding fields are ``None``.
    """
    out = []
    rho = np.asarray(p.rho)
    if np.any(rho >= 0.25) or np.any(rho <= 0):
        out.append(("density_bound", "every rho_n must lie in (0, 1/4)"))
    if p.rho_c is not None and rho.size:
        N = rho.size
        tail = rho[-1] * N ** 2
        if not 1.0 < tail < np.inf:
            out.append(("density_decay", f"rho_n n^2 = {tail} at n={N} is not in (1, inf)"))
    if any(s < 1 or s % 2 == 0 for s in p.sigma) and p.omega is not None:
        out.append(("scale_window", "sigma_n must be odd"))
    if p.nu is not None and p.mu_star is not None and p.delta_eff_star is not None:
        if not 1.0 < p.nu < _nu_upper(p.mu_star, p.delta_eff_star):
            out.append(("nu_window", f"nu={p.nu} outside (1, {_nu_upper(p.mu_star, p.delta_eff_star)})"))
        if p.delta_eff_star >= 2:
            out.append(("nu_window", "effective decay at mu* is not below 2"))
    if p.nu is not None and p.mu_star is not None:
        target = 1.0 - p.nu * (1.0 - p.mu_star)
        if abs(p.mu - target) > 1e-12 or not 0 < p.mu < p.mu_star:
            out.append(("mu_relation", f"mu={p.mu} but 1 - nu(1 - mu*) = {target}"))
    if p.omega is not None and p.nu is not None:
        lower = 2 * p.nu / (p.d * (p.nu - 1))
        if p.lam is not None:
            lower = max(lower, 2.0 / (p.d * (1.0 - p.lam)))
        if not p.omega > lower:
            out.append(("omega_bound", f"omega={p.omega} not above {lower}"))
    if p.omega is not None and p.sigma_window_from is not None:
        for n in range(max(1, p.sigma_window_from), p.stages + 1):
            s, base = p.sigma[n - 1], n ** p.omega
            if not base * (1 - _EPS) <= s <= (1 + n ** -2.0) ** (1.0 / p.d) * base * (1 + _EPS):
                out.append(("scale_window", f"sigma_{n}={s} outside the window around n^omega={base}"))
                break
    return out


def sigma_sequence(omega, d, N):
    """Smallest odd integers ``sigma_n >= n^omega`` for ``n = 1..N``.

    Also returns the first stage from which every ``sigma_n`` stays below
    ``(1 + n^-2)^(1/d) n^omega`` (``N + 1`` when the last one does not).
    """
    sigma = []
    for n in range(1, N + 1):
        s = int(math.ceil(n ** omega * (1 - _EPS)))
        sigma.append(s + 1 if s % 2 == 0 else s)
    window_from = N + 1
    for n in range(N, 0, -1):
        if (1 + n ** -2.0) ** (1.0 / d) * n ** omega * (1 + _EPS) < sigma[n - 1]:
            break
        window_from = n
    return tuple(sigma), window_from


def derive_params(kernel, d, theta, lam, ell, k, max_stage=2, mu_grid=MU_GRID, r_grid=None,
                  prefix=PREFIX, rho_c=RHO_C):
    """Choose the aliveness parameters for ``kernel``.

    ``mu*`` is the smallest grid value with estimated effective decay below
    ``2 - 0.05``; ``nu`` is the midpoint of its admissible interval;
    ``omega`` exceeds both of its lower bounds by 0.05;
    ``rho_n = rho_c / (n+2)^2`` and ``sigma_n`` is the smallest odd integer
    ``>= n^omega``.  Sequences are stored on a prefix of length
    ``max(prefix, max_stage)``.
    """
    if int(d) != kernel.d:
        raise ParameterError("d does not match the kernel dimension")
    if not 0 < lam < 1:
        raise ParameterError("lambda must lie in (0, 1)")
    if not (float(ell) == int(ell) and int(ell) > 0 and int(ell) % 2 == 0):
        raise ParameterError("ell must be a positive even integer")
    r_grid = geometric_grid(1e2, 1e2 * 4.0 ** 6, 7) if r_grid is None else r_grid
    mu_star = delta_star = None
    for mu_c in mu_grid:
        est = estimate_delta_eff(kernel, mu_c, r_grid)
        if est.slope < 2.0 - DELTA_MARGIN:
            mu_star, delta_star = float(mu_c), float(est.slope)
            break
    if mu_star is None:
        raise NotWeakDecayError("effective decay is not below 2 for any mu on the grid (not in the weak decay regime)")
    nu = 0.5 * (1.0 + _nu_upper(mu_star, delta_star))
    mu = 1.0 - nu * (1.0 - mu_star)
    omega = max(2 * nu / (d * (nu - 1)), 2.0 / (d * (1.0 - lam))) + OMEGA_MARGIN
    N = max(int(prefix), int(max_stage))
    rho = [rho_c / (n + 2) ** 2 for n in range(1, N + 1)]
    sigma, window_from = sigma_sequence(omega, d, N)
    p = RenormParams(int(d), float(ell), float(k), float(theta), float(mu), tuple(rho), tuple(sigma),
                     mu_star, delta_star, float(nu), float(omega), float(lam), float(rho_c), int(window_from))
    bad = validate_params(p)
    if bad:
        raise ParameterError("derived parameters violate: " + "; ".join(f"{a}: {b}" for a, b in bad))
    return p


@dataclass(frozen=True)
class TransienceParams:
    """Parameters of the goodness hierarchy.

    ``alpha`` and ``sigma`` override the default sequences
    ``ceil((n+1)^(2 lam d))`` and ``(n+1)^2`` (callables or tuples indexed
    from stage 1).
    """

    d: int
    n1: int
    lam: float
    mu: float
    nu: float = None
    alpha: object = None
    sigma: object = None

    def __post_init__(self):
        if int(self.n1) < 1:
            raise ParameterError("n1 must be at least 1")
        if not 0 < self.mu < 0.5:
            raise ParameterError("mu must lie in (0, 1/2)")
        lo = 0.5 if self.nu is None else max(0.5, 1.0 / self.nu)
        if self.alpha is None and not lo < self.lam < 1:
            raise ParameterError(f"lambda must lie in ({lo}, 1), got {self.lam}")

    def _seq(self, seq, n, default):
        if seq is None:
            return default(n)
        if callable(seq):
            return seq(n)
        return seq[n - 1]

    def alpha_n(self, n):
        return int(self._seq(self.alpha, n, lambda i: _ceil((i + 1) ** (2 * self.lam * self.d))))

    def sigma_n(self, n):
        return int(self._seq(self.sigma, n, lambda i: (i + 1) ** 2))

    def side(self, n):
        return float(np.prod([self.sigma_n(i) for i in range(1, n + 1)], dtype=float))

    def need(self, n):
        return float(np.prod([self.alpha_n(i) for i in range(1, n + 1)], dtype=float))

    def as_dict(self, stages=3):
        top = self.n1 + stages
        return {"d": self.d, "n1": self.n1, "lam": self.lam, "mu": self.mu, "nu": self.nu,
                "alpha": [self.alpha_n(n) for n in range(1, top + 1)],
                "sigma": [self.sigma_n(n) for n in range(1, top + 1)]}


def transience_params(params, lam=None, n1=1):
    """Goodness parameters reusing ``mu`` and ``nu`` of an aliveness derivation.

    ``lam`` defaults to the midpoint of ``(max(1/2, 1/nu), 1)``.
    """
    lo = max(0.5, 1.0 / params.nu)
    lam = 0.5 * (lo + 1.0) if lam is None else float(lam)
    return TransienceParams(params.d, int(n1), lam, params.mu, params.nu)


def is_mu_v_regular(marks, mu, v):
    """Whether some ``ceil(v)`` of ``marks`` form a mu-regular collection.

    The ``ceil(v)`` smallest marks maximise every quantile count, so testing
    them alone is exact.
    """
    need = max(1, _ceil(v))
    marks = np.asarray(marks, dtype=float)
    if marks.size < need:
        return False
    return is_mu_regular(np.partition(marks, need - 1)[:need], mu)


# --- combinatorial search ----------------------------------------------------

def find_clique(adj, r, accept=None, budget=CLIQUE_BUDGET, collect=False):
    """A clique of size ``>= r`` on which the monotone predicate ``accept`` holds.

    Greedy growth from every vertex (by decreasing degree) is tried first;
    then maximal cliques are enumerated.  Returns ``(clique, exact)`` where
    ``exact`` is False if the enumeration budget ran out before a decision.
    With ``collect=True`` returns ``(list_of_cliques, exact)`` holding every
    qualifying maximal clique.
    """
    adj = np.asarray(adj, dtype=bool)
    K = adj.shape[0]
    ok = (lambda c: True) if accept is None else accept
    if K < r or r < 1:
        return ([] if collect else None), True
    if not collect:
        deg = adj.sum(axis=1)
        for start in np.argsort(-deg, kind="stable"):
            if deg[start] + 1 < r:
                break
            cl = [int(start)]
            cand = adj[start].copy()
            while cand.any():
                idx = np.flatnonzero(cand)
                nxt = int(idx[np.argmax(adj[np.ix_(idx, idx)].sum(axis=1))])
                cl.append(nxt)
                cand &= adj[nxt]
            if len(cl) >= r and ok(sorted(cl)):
                return sorted(cl), True
    G = nx.from_numpy_array(adj.astype(np.int8))
    G.remove_edges_from(nx.selfloop_edges(G))
    found = []
    for count, cl in enumerate(nx.find_cliques(G)):
        if count >= budget:
            return (found if collect else None), False
        if len(cl) >= r and ok(sorted(cl)):
            if not collect:
                return sorted(cl), True
            found.append(sorted(cl))
    return (found if collect else None), True


def find_biclique(B, row_groups, col_groups, a, budget=BICLIQUE_BUDGET):
    """Rows and columns, ``a`` each from distinct groups, with all entries of ``B`` true.

    Returns ``((rows, cols), exact)``; ``(None, exact)`` when none was found.
    """
    B = np.asarray(B, dtype=bool)
    rg = np.asarray(row_groups)
    cg = np.asarray(col_groups)
    if a < 1:
        return ((np.zeros(0, int), np.zeros(0, int))), True

    def groups_in(mask):
        return np.unique(cg[mask]).size

    rows = [i for i in range(B.shape[0]) if groups_in(B[i]) >= a]
    rows.sort(key=lambda i: -B[i].sum())
    if not rows or np.unique(rg[rows]).size < a:
        return None, True
    steps = [0]

    def pick_cols(mask):
        idx = np.flatnonzero(mask)
        _, first = np.unique(cg[idx], return_index=True)
        return idx[np.sort(first)][:a]

    def dfs(pos, chosen, used, common):
        steps[0] += 1
        if steps[0] > budget:
            raise _Budget
        if len(chosen) == a:
            return list(chosen), pick_cols(common)
        for t in range(pos, len(rows)):
            i = rows[t]
            if rg[i] in used:
                continue
            new = common & B[i]
            if groups_in(new) < a:
                continue
            remaining = {rg[j] for j in rows[t:] if rg[j] not in used}
            if len(remaining) < a - len(chosen):
                break
            res = dfs(t + 1, chosen + [i], used | {rg[i]}, new)
            if res is not None:
                return res
        return None

    try:
        res = dfs(0, [], frozenset(), np.ones(B.shape[1], dtype=bool))
    except _Budget:
        return None, False
    if res is None:
        return None, True
    return (np.array(sorted(res[0])), np.array(sorted(res[1]))), True


class _Budget(Exception):
    pass


# --- local graph access ------------------------------------------------------

class _Local:
    """Bucketed vertex lookup and CSR adjacency for repeated sub-box queries."""

    def __init__(self, graph, bucket):
        self.graph = graph
        cl = graph.cloud
        self.loc = cl.locations
        self.marks = cl.marks
        self.domain = cl.domain
        n = graph.n
        e = graph.edges
        A = sparse.coo_matrix((np.ones(2 * e.shape[0], dtype=np.int8),
                               (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)).tocsr()
        self.adj = A
        self.h = float(bucket)
        self.lo = self.domain.lower
        dims = np.maximum(1, np.ceil(np.asarray(self.domain.sides) / self.h).astype(np.int64))
        self.dims = dims
        q = np.clip(np.floor((self.loc - self.lo) / self.h).astype(np.int64), 0, dims - 1)
        lin = np.ravel_multi_index(tuple(q.T), tuple(dims)) if n else np.zeros(0, dtype=np.int64)
        self.order = np.argsort(lin, kind="stable")
        self.lin_sorted = lin[self.order]

    def vertices_in(self, box):
        lo = np.clip(np.floor((box.lower - self.lo) / self.h).astype(np.int64) - 1, 0, self.dims - 1)
        hi = np.clip(np.floor((box.upper - self.lo) / self.h).astype(np.int64) + 1, 0, self.dims - 1)
        ncell = int(np.prod(hi - lo + 1))
        if ncell * 4 > self.dims.prod():
            cand = np.arange(self.loc.shape[0])
        else:
            axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
            cells = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
            lin = np.ravel_multi_index(tuple(cells.T), tuple(self.dims))
            s = np.searchsorted(self.lin_sorted, lin, "left")
            t = np.searchsorted(self.lin_sorted, lin, "right")
            cand = self.order[np.concatenate([np.arange(a, b) for a, b in zip(s, t)])] if lin.size else np.zeros(0, int)
        return np.sort(cand[box.contains(self.loc[cand])])

    def components(self, verts):
        """Labels of the components of the subgraph induced on ``verts``."""
        sub = self.adj[verts][:, verts].tocoo()
        keep = sub.row < sub.col
        _, labels, k = _union_find(verts.size, sub.row[keep].astype(np.int64), sub.col[keep].astype(np.int64))
        return labels, k

    def groups(self, verts):
        if verts.size == 0:
            return []
        labels, k = self.components(verts)
        order = np.argsort(labels, kind="stable")
        sizes = np.bincount(labels, minlength=k)
        return [verts[g] for g in np.split(order, np.cumsum(sizes)[:-1])]

    def preclusters(self, box, k):
        """Preclusters of ``box`` with reach ``k`` and whether the reach was clipped."""
        hood = box.expand(k) if k > 0 else box
        clipped = not self.domain.contains_box(hood)
        if clipped:
            hood = self.domain.intersect(hood)
        inner = self.vertices_in(box)
        if inner.size == 0:
            return [], clipped
        verts = self.vertices_in(hood)
        verts = np.union1d(verts, inner)
        mask = np.zeros(self.loc.shape[0], dtype=bool)
        mask[inner] = True
        out = []
        for g in self.groups(verts):
            hit = g[mask[g]]
            if hit.size:
                out.append(hit)
        out.sort(key=lambda a: int(a[0]))
        return out, clipped

    def set_adjacency(self, sets):
        """Boolean matrix: is there an edge between set i and set j."""
        K = len(sets)
        if K == 0:
            return np.zeros((0, 0), dtype=bool)
        rows = np.concatenate([np.full(s.size, i) for i, s in enumerate(sets)])
        cols = np.concatenate(sets)
        P = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(K, self.loc.shape[0]))
        M = (P @ self.adj @ P.T).toarray() > 0
        np.fill_diagonal(M, False)
        return M


def _sub_centers(center, side, factor, d):
    off = (np.arange(factor) - (factor - 1) / 2.0) * side
    grid = np.stack(np.meshgrid(*([off] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return [tuple(float(c) for c in np.asarray(center) + g) for g in grid]


def _key(center):
    return tuple(round(float(c), 9) for c in center)


@dataclass
class StageResult:
    """Outcome for one cube.

    ``ok`` is alive/good; ``witness`` the certifying cluster (vertex indices);
    ``clusters`` the regular preclusters (aliveness) or the inclusion-maximal
    renormalised clusters (goodness) made available to the next stage.
    """

    stage: int
    center: tuple
    ok: bool
    witness: np.ndarray
    clusters: list
    conditions: dict
    clipped: bool = False
    exact: bool = True
    children: list = field(default=None, repr=False)

    @property
    def witness_size(self):
        return int(self.witness.size) if self.witness is not None else 0

    def record(self, kind):
        return {"stage": self.stage, "center": list(self.center), kind: bool(self.ok),
                "witness_size": self.witness_size, "conditions": {k: bool(v) for k, v in self.conditions.items()},
                "clipped": bool(self.clipped), "exact": bool(self.exact)}


class _AliveEngine:
    def __init__(self, graph, params):
        if graph.cloud.d != params.d:
            raise ParameterError("graph and parameters have different dimensions")
        self.p = params
        self.L = _Local(graph, max(params.ell, 1.0))
        self.memo = {}

    def eval(self, n, center):
        key = (n, _key(center))
        if key not in self.memo:
            self.memo[key] = self._stage0(center) if n == 0 else self._stage(n, center)
        return self.memo[key]

    def _regular(self, pcs, n):
        return [c for c in pcs if is_mu_v_regular(self.L.marks[c], self.p.mu, self.p.v(n))]

    def _stage0(self, center):
        p = self.p
        box = cube(p.ell, p.d, center)
        pcs, clipped = self.L.preclusters(box, p.k)
        thr = p.stage0_threshold()
        best = max(pcs, key=lambda c: c.size) if pcs else np.zeros(0, dtype=np.int64)
        ok = best.size >= thr and best.size > 0
        return StageResult(0, tuple(center), bool(ok), best if ok else None, self._regular(pcs, 0),
                           {"size": ok}, clipped)

    def _stage(self, n, center):
        p = self.p
        if n > p.stages:
            raise ParameterError(f"stage {n} exceeds the stored prefix of {p.stages}")
        subs = [self.eval(n - 1, c) for c in _sub_centers(center, p.m(n - 1), p.sigma[n - 1], p.d)]
        r = p.r(n)
        clipped = any(s.clipped for s in subs)
        exact = all(s.exact for s in subs)
        A = sum(s.ok for s in subs) >= r
        B = sum(1 for s in subs if s.ok and s.clusters) >= r
        C = False
        clique_sets = None
        if A and B:
            nodes, owner = [], []
            for i, s in enumerate(subs):
                for c in s.clusters:
                    nodes.append(c)
                    owner.append(i)
            owner = np.asarray(owner)
            adj = self.L.set_adjacency(nodes) & (owner[:, None] != owner[None, :])
            cl, ex = find_clique(adj, r)
            exact = exact and ex
            if cl is not None:
                C = True
                clique_sets = [nodes[i] for i in cl]
        ok = A and B and C
        box = cube(p.m(n), p.d, center)
        pcs, clip_here = self.L.preclusters(box, p.k)
        witness = None
        if ok:
            v0 = clique_sets[0][0]
            witness = next(c for c in pcs if np.isin(v0, c))
        return StageResult(n, tuple(center), bool(ok), witness, self._regular(pcs, n),
                           {"A": A, "B": B, "C": C}, clipped or clip_here, exact, subs)


def stage0_alive(graph, box, params):
    """Stage-0 aliveness of ``box`` (side must equal ``ell``)."""
    if not np.allclose(box.sides, params.ell):
        raise ParameterError("stage-0 cubes have side ell")
    return _AliveEngine(graph, params).eval(0, box.center)


def stage_alive(graph, box, n, params, engine=None):
    """Aliveness of a stage-``n`` cube, evaluating all subcubes recursively."""
    if not np.allclose(box.sides, params.m(n)):
        raise ParameterError(f"stage-{n} cubes have side {params.m(n)}")
    eng = engine or _AliveEngine(graph, params)
    return eng.eval(n, box.center)


class _GoodEngine:
    def __init__(self, graph, tp):
        if graph.cloud.d != tp.d:
            raise ParameterError("graph and parameters have different dimensions")
        self.tp = tp
        self.L = _Local(graph, max(tp.side(tp.n1), 1.0))
        self.memo = {}

    def eval(self, n, center):
        if n < self.tp.n1:
            raise ParameterError("goodness starts at stage n1")
        key = (n, _key(center))
        if key not in self.memo:
            if n == self.tp.n1:
                self.memo[key] = self._bottom(center)
            elif n == self.tp.n1 + 1:
                self.memo[key] = self._second(n, center)
            else:
                self.memo[key] = self._upper(n, center)
        return self.memo[key]

    def _regular(self, verts, n):
        return is_mu_v_regular(self.L.marks[verts], self.tp.mu, self.tp.need(n))

    def _subs(self, n, center):
        tp = self.tp
        return [self.eval(n - 1, c) for c in _sub_centers(center, tp.side(n - 1), tp.sigma_n(n), tp.d)]

    def _bottom(self, center):
        tp, n = self.tp, self.tp.n1
        verts = self.L.vertices_in(cube(tp.side(n), tp.d, center))
        comps = [c for c in self.L.groups(verts) if self._regular(c, n)]
        ok = bool(comps)
        witness = max(comps, key=lambda c: c.size) if ok else None
        return StageResult(n, tuple(center), ok, witness, comps, {"E": ok})

    def _second(self, n, center):
        tp = self.tp
        subs = self._subs(n, center)
        a = tp.alpha_n(n)
        E1 = sum(s.ok for s in subs) >= a
        E2 = E3 = False
        clusters, exact = [], True
        if E1:
            nodes, owner = _nodes(subs)
            adj = self.L.set_adjacency(nodes) & (owner[:, None] != owner[None, :])
            E2 = find_clique(adj, a)[0] is not None

            def accept(cl):
                return self._regular(np.concatenate([nodes[i] for i in cl]), n)

            cliques, exact = find_clique(adj, a, accept, collect=True)
            clusters = _maximal_sets([np.unique(np.concatenate([nodes[i] for i in cl])) for cl in cliques])
            E3 = bool(clusters)
        ok = E1 and E2 and E3
        witness = max(clusters, key=lambda c: c.size) if ok else None
        return StageResult(n, tuple(center), ok, witness, clusters, {"E1": E1, "E2": E2, "E3": E3},
                           exact=exact, children=subs)

    def _upper(self, n, center):
        tp = self.tp
        subs = self._subs(n, center)
        a_n = tp.alpha_n(n)
        a_low = tp.alpha_n(n - 2)
        good = [i for i, s in enumerate(subs) if s.ok]
        exact = all(s.exact for s in subs)
        F1 = len(good) >= a_n
        F2 = F3 = False
        clusters = []
        if F1:
            # renormalised clusters two levels down, grouped by grandchild
            gnodes, gchild, gparent = [], [], []
            for i in good:
                for j, gc in enumerate(subs[i].children):
                    if gc.ok:
                        for c in gc.clusters:
                            gnodes.append(c)
                            gchild.append((i, j))
                            gparent.append(i)
            gparent = np.asarray(gparent)
            gid = np.asarray([i * 10 ** 6 + j for i, j in gchild]) if gchild else np.zeros(0, int)
            gadj = self.L.set_adjacency(gnodes)
            W = np.zeros((len(subs), len(subs)), dtype=bool)
            for x, y in itertools.combinations(good, 2):
                rx, cy = np.flatnonzero(gparent == x), np.flatnonzero(gparent == y)
                res, ex = find_biclique(gadj[np.ix_(rx, cy)], gid[rx], gid[cy], a_low)
                exact = exact and ex
                if res is not None:
                    W[x, y] = W[y, x] = True

            def formed(fam):
                # components of the cluster graph over the family's grandchildren that
                # span at least two family members (a single member when |fam| = 1)
                sel = np.flatnonzero(np.isin(gparent, fam))
                if sel.size == 0:
                    return []
                lab = _labels(gadj[np.ix_(sel, sel)])
                out = []
                for c in np.unique(lab):
                    comp = sel[lab == c]
                    if len(fam) == 1 or np.unique(gparent[comp]).size >= 2:
                        out.append(np.unique(np.concatenate([gnodes[t] for t in comp])))
                return out

            def regular_formed(fam):
                return [u for u in formed(fam) if self._regular(u, n)]

            Wg = W[np.ix_(good, good)]
            F2 = find_clique(Wg, a_n)[0] is not None
            cliques, ex = find_clique(Wg, a_n, lambda cl: bool(regular_formed([good[i] for i in cl])), collect=True)
            exact = exact and ex
            clusters = _maximal_sets([u for cl in cliques for u in regular_formed([good[i] for i in cl])])
            F3 = bool(clusters)
        ok = F1 and F2 and F3
        witness = max(clusters, key=lambda c: c.size) if ok else None
        return StageResult(n, tuple(center), ok, witness, clusters, {"F1": F1, "F2": F2, "F3": F3},
                           exact=exact, children=subs)


def _nodes(subs):
    nodes, owner = [], []
    for i, s in enumerate(subs):
        if s.ok:
            for c in s.clusters:
                nodes.append(c)
                owner.append(i)
    return nodes, np.asarray(owner, dtype=np.int64)


def _labels(adj):
    iu, ju = np.nonzero(np.triu(adj, 1))
    _, lab, _ = _union_find(adj.shape[0], iu.astype(np.int64), ju.astype(np.int64))
    return lab


def _maximal_sets(sets):
    """Drop duplicates and sets contained in another one."""
    sets = sorted({tuple(s.tolist()) for s in sets if s is not None}, key=len, reverse=True)
    out = []
    for s in sets:
        ss = set(s)
        if not any(ss <= set(t) for t in out):
            out.append(s)
    return [np.asarray(s, dtype=np.int64) for s in out]


def stage_good(graph, box, n, tparams, engine=None):
    """Goodness of a stage-``n`` cube (side ``prod_{i<=n} sigma_i``)."""
    if not np.allclose(box.sides, tparams.side(n)):
        raise ParameterError(f"stage-{n} cubes have side {tparams.side(n)}")
    eng = engine or _GoodEngine(graph, tparams)
    return eng.eval(n, box.center)


@dataclass
class RenormReport:
    """Per-stage summaries plus one record per evaluated cube."""

    kind: str
    stages: list
    records: list
    params: dict

    def fraction(self, stage):
        for s in self.stages:
            if s["stage"] == stage:
                return s["fraction"]
        raise KeyError(stage)

    def to_jsonl(self):
        lines = [json.dumps({"summary": s}, sort_keys=True) for s in self.stages]
        lines += [json.dumps(r, sort_keys=True) for r in self.records]
        return "\n".join(lines) + "\n"


def _cube_centers(domain, side, d):
    """Centers ``x in side * Z^d`` whose cube lies inside ``domain``."""
    lo, hi = domain.lower, domain.upper
    axes = []
    for j in range(d):
        a = math.ceil((lo[j] + side / 2) / side - 1e-9)
        b = math.floor((hi[j] - side / 2) / side + 1e-9)
        axes.append(np.arange(a, b + 1) * side)
    if any(ax.size == 0 for ax in axes):
        return []
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return [tuple(float(c) for c in g) for g in grid]


def survey(graph, params, max_stage):
    """Evaluate every stage cube inside the graph's domain up to ``max_stage``.

    ``params`` is a :class:`RenormParams` (aliveness, stages ``0..max_stage``)
    or a :class:`TransienceParams` (goodness, stages ``n1..max_stage``).
    """
    if isinstance(params, RenormParams):
        eng, kind, first = _AliveEngine(graph, params), "alive", 0
        side = params.m
        pdict = params.as_dict(max_stage)
    elif isinstance(params, TransienceParams):
        eng, kind, first = _GoodEngine(graph, params), "good", params.n1
        side = params.side
        pdict = params.as_dict(max(0, max_stage - params.n1))
    else:
        raise ParameterError("params must be RenormParams or TransienceParams")
    if max_stage < first:
        raise ParameterError(f"max_stage must be at least {first}")
    stages, records = [], []
    for n in range(first, max_stage + 1):
        centers = _cube_centers(graph.cloud.domain, side(n), graph.cloud.d)
        res = [eng.eval(n, c) for c in centers]
        okc = sum(r.ok for r in res)
        stages.append({
            "stage": n,
            "side": side(n),
            "cubes": len(res),
            kind: okc,
            "fraction": okc / len(res) if res else 0.0,
            "witness_sizes": [r.witness_size for r in res if r.ok],
            "clipped": sum(r.clipped for r in res),
            "exact": all(r.exact for r in res),
        })
        records += [r.record(kind) for r in res]
    return RenormReport(kind, stages, records, pdict)
