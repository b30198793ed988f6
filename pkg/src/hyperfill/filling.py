"""Truncated hyperbolic fillings and their graph geometry.

A filling over a space is a layered incidence graph: level-n vertices are
the points of a greedy s**-n net, each carrying the open ball of radius
2 * s**-n around its center, and two vertices are adjacent when their
levels differ by at most one and their balls share a sample point.  The
level-0 net is a single vertex (the root) because the space has diameter 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from hyperfill.spaces import DeltaContinuum, SpaceError


class FillingError(ValueError):
    """Invalid filling construction or query."""


def _greedy_net(space, eps, seed_pid=0):
    """Farthest-point net: insert while the farthest point is > eps away.

    Yields separation > eps and covering <= eps, deterministically in the
    host point order (ties resolved to the smallest id by argmax).
    """
    mind = space.dist_row(seed_pid)
    net = [seed_pid]
    while True:
        nxt = int(np.argmax(mind))
        if mind[nxt] <= eps:
            break
        net.append(nxt)
        mind = np.minimum(mind, space.dist_row(nxt))
    return np.asarray(net, dtype=np.int64)


class Filling:
    """Layered net graph over a host space at scale s, truncated at level N."""

    def __init__(self, space, s, N, level, center, adj, level_vertices):
        self.space = space
        self.s = float(s)
        self.N = int(N)
        self.level = level          # (V,) int level per vertex
        self.center = center        # (V,) host point id per vertex
        self.adj = adj              # symmetric CSR adjacency
        self.level_vertices = level_vertices  # list of vertex-id arrays per level
        self.root = 0
        self._ball_cache = [None] * len(level)
        self._dist = None

    @property
    def n_vertices(self):
        return len(self.level)

    @property
    def A_s(self):
        return 8.0 * self.s / (self.s - 1.0)

    def radius(self, v):
        """Nominal ball radius 2 * s**-level(v)."""
        return 2.0 * self.s ** (-float(self.level[v]))

    def ball_points(self, v):
        """Host sample points inside the open vertex ball."""
        cached = self._ball_cache[v]
        if cached is None:
            cached = self.space.neighbors_within(
                int(self.center[v]), self.radius(v), strict=True)
            self._ball_cache[v] = cached
        return cached

    def neighbors(self, v):
        return self.adj.indices[self.adj.indptr[v]:self.adj.indptr[v + 1]]

    def dist_matrix(self):
        """All-pairs BFS distances (cached)."""
        if self._dist is None:
            d = shortest_path(self.adj, method="D", unweighted=True, directed=False)
            self._dist = d.astype(np.int32)
        return self._dist

    def level_centers(self, n):
        """Host coords / ids of level-n net centers, in vertex order."""
        return self.center[self.level_vertices[n]]

    def vertex_at(self, n, rank):
        return int(self.level_vertices[n][rank])


def build_filling(space, s, N):
    """Build the truncated filling; deterministic in the host point order."""
    s = float(s)
    N = int(N)
    if s <= 1.0:
        raise FillingError("scale s must exceed 1")
    if N < 1:
        raise FillingError("depth N must be >= 1")
    if s ** (-N) < 2.0 * space.rho - 1e-12:
        raise FillingError(
            f"depth {N} too deep for resolution rho={space.rho}: "
            f"needs s**-N >= 2*rho")
    nets = [_greedy_net(space, s ** (-n)) for n in range(N + 1)]
    if len(nets[0]) != 1:
        raise FillingError("level-0 net is not a single root")
    level = np.concatenate([np.full(len(nets[n]), n, dtype=np.int64)
                            for n in range(N + 1)])
    center = np.concatenate(nets)
    offsets = np.cumsum([0] + [len(nets[n]) for n in range(N + 1)])
    level_vertices = [np.arange(offsets[n], offsets[n + 1]) for n in range(N + 1)]

    # sparse point-membership per level, then edges via shared sample points
    n_pts = space.n_points
    memberships = []
    for n in range(N + 1):
        rows, cols = [], []
        r = 2.0 * s ** (-n)
        for rank, pid in enumerate(nets[n]):
            ids = space.neighbors_within(int(pid), r, strict=True)
            rows.append(np.full(len(ids), rank, dtype=np.int64))
            cols.append(ids)
        m = csr_matrix((np.ones(sum(len(c) for c in cols), dtype=np.int32),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(len(nets[n]), n_pts))
        memberships.append(m)

    erows, ecols = [], []
    for n in range(N + 1):
        for m in (n, n + 1):
            if m > N:
                continue
            inter = (memberships[n] @ memberships[m].T).tocoo()
            a = inter.row + offsets[n]
            b = inter.col + offsets[m]
            keep = a < b if m == n else np.ones(len(a), dtype=bool)
            erows.append(a[keep])
            ecols.append(b[keep])
    a = np.concatenate(erows)
    b = np.concatenate(ecols)
    v_count = offsets[-1]
    adj = csr_matrix((np.ones(2 * len(a), dtype=np.int8),
                      (np.concatenate([a, b]), np.concatenate([b, a]))),
                     shape=(v_count, v_count))
    adj.data[:] = 1
    return Filling(space, s, N, level, center, adj, level_vertices)


@dataclass
class VerticalGeodesic:
    """Root-based geodesic: the vertex at step k sits at level k."""

    vertices: np.ndarray
    anchor: int | None = None

    def __len__(self):
        return len(self.vertices)

    def __getitem__(self, k):
        return int(self.vertices[k])


def _check_geodesic(filling, vertices):
    if filling.level[vertices[0]] != 0:
        raise FillingError("vertical geodesic must start at the root")
    for k in range(len(vertices) - 1):
        v, w = vertices[k], vertices[k + 1]
        if filling.level[w] != k + 1:
            raise FillingError("levels along a vertical geodesic must increase by 1")
        if w not in filling.neighbors(v):
            raise FillingError("consecutive geodesic vertices must be adjacent")


@dataclass(frozen=True)
class HyperbolicityReport:
    """Worst four-point defect with the base point fixed at the root."""

    delta_hat: float
    quadruples_checked: int
    mode: str


def graph_dist(filling, v, w):
    """BFS shortest-path length between vertices."""
    return int(filling.dist_matrix()[v, w])


def gromov_product(filling, v, w):
    """(v|w) at the root; root distances equal levels in a filling."""
    d = graph_dist(filling, v, w)
    return 0.5 * (float(filling.level[v]) + float(filling.level[w]) - d)


def gromov_product_comparison(filling, max_pairs=None, rng=None):
    """Range of s**-(v|w) / diam(B_v u B_w) over vertex pairs.

    Exhaustive when the filling has at most 5000 vertices and no sampling
    budget is given; otherwise samples ``max_pairs`` pairs.
    """
    V = filling.n_vertices
    if max_pairs is None and V > 5000:
        raise FillingError("exhaustive comparison capped at 5000 vertices; "
                           "pass max_pairs to sample")
    if max_pairs is None:
        pairs = [(v, w) for v in range(V) for w in range(v, V)]
    else:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        pairs = [tuple(rng.integers(0, V, size=2)) for _ in range(max_pairs)]
    space = filling.space
    ball_diam = {}
    ratio_min, ratio_max = math.inf, -math.inf
    for v, w in pairs:
        ids = np.union1d(filling.ball_points(v), filling.ball_points(w))
        d_union = space.diam(ids)
        if d_union <= 0:
            continue
        ratio = filling.s ** (-gromov_product(filling, v, w)) / d_union
        ratio_min = min(ratio_min, ratio)
        ratio_max = max(ratio_max, ratio)
        ball_diam[(v, w)] = d_union
    return {"ratio_min": float(ratio_min), "ratio_max": float(ratio_max),
            "pairs": len(pairs)}


def hyperbolicity(filling, mode="exhaustive", num_triples=200_000, rng=None):
    """Root-based four-point defect, exhaustive (<= 300 vertices) or sampled."""
    V = filling.n_vertices
    D = filling.dist_matrix().astype(float)
    lev = filling.level.astype(float)
    G = 0.5 * (lev[:, None] + lev[None, :] - D)
    if mode == "exhaustive":
        if V > 300:
            raise FillingError("exhaustive hyperbolicity capped at 300 vertices")
        worst = 0.0
        for u in range(V):
            m = np.minimum(G[:, u][:, None], G[u, :][None, :])
            worst = max(worst, float((m - G).max()))
        return HyperbolicityReport(delta_hat=max(worst, 0.0),
                                   quadruples_checked=V ** 3, mode="exhaustive")
    if mode != "sampled":
        raise FillingError(f"unknown mode {mode!r}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    idx = rng.integers(0, V, size=(num_triples, 3))
    vals = np.minimum(G[idx[:, 0], idx[:, 2]], G[idx[:, 2], idx[:, 1]]) \
        - G[idx[:, 0], idx[:, 1]]
    return HyperbolicityReport(delta_hat=float(max(vals.max(), 0.0)),
                               quadruples_checked=num_triples, mode="sampled")


def _nearest_level_vertex(filling, n, z):
    """Level-n vertex whose center is nearest z (ties: smallest vertex id)."""
    row = filling.space.dist_cross([z], filling.level_centers(n))[0]
    return filling.vertex_at(n, int(np.argmin(row))), float(row.min())


def centered_geodesic(filling, z):
    """Vertical geodesic through the nearest net center to z at every level."""
    verts = np.empty(filling.N + 1, dtype=np.int64)
    for k in range(filling.N + 1):
        v, d = _nearest_level_vertex(filling, k, z)
        if d > filling.s ** (-k) + 1e-12:
            raise FillingError(
                f"net density violated at level {k}: nearest center {d} away")
        verts[k] = v
    _check_geodesic(filling, verts)
    return VerticalGeodesic(vertices=verts, anchor=int(z))


def geodesic_fan(filling, v, z):
    """Vertical geodesic visiting ``v`` whose tail descends toward ``z``."""
    v = int(v)
    space = filling.space
    if space.dist(int(filling.center[v]), z) >= filling.radius(v):
        raise FillingError(f"anchor {z} lies outside the ball of vertex {v}")
    lv = int(filling.level[v])
    verts = np.empty(filling.N + 1, dtype=np.int64)
    verts[lv] = v
    # ascend: nearest adjacent parent to our own center, ties smallest id
    cur = v
    for k in range(lv - 1, -1, -1):
        nbrs = filling.neighbors(cur)
        parents = nbrs[filling.level[nbrs] == k]
        if parents.size == 0:
            raise FillingError("vertex has no parent; filling is malformed")
        row = space.dist_cross([int(filling.center[v])],
                               filling.center[parents])[0]
        cur = int(parents[int(np.argmin(row))])
        verts[k] = cur
    # descend: nearest center to the anchor
    for k in range(lv + 1, filling.N + 1):
        verts[k], _ = _nearest_level_vertex(filling, k, z)
    _check_geodesic(filling, verts)
    return VerticalGeodesic(vertices=verts, anchor=int(z))


def shadow(filling, z, n):
    """Level-n vertices with center within 2*(A_s + 1)*s**-n of z (closed)."""
    if not 0 <= n <= filling.N:
        raise FillingError("shadow level out of range")
    r = 2.0 * (filling.A_s + 1.0) * filling.s ** (-n)
    row = filling.space.dist_cross([z], filling.level_centers(n))[0]
    return filling.level_vertices[n][row <= r + 1e-12]


def shadow_bound(filling, sample_points=None, max_level=None):
    """Max shadow cardinality over sampled anchors and levels."""
    if sample_points is None:
        sample_points = filling.level_centers(filling.N)
    top = filling.N if max_level is None else min(max_level, filling.N)
    m = 0
    for n in range(top + 1):
        r = 2.0 * (filling.A_s + 1.0) * filling.s ** (-n)
        centers = filling.level_centers(n)
        d = filling.space.dist_cross(sample_points, centers)
        m = max(m, int((d <= r + 1e-12).sum(axis=1).max()))
    return m


def max_enclosing_vertex(filling, E):
    """Deepest vertex whose ball contains E (ties: smallest vertex id).

    Checks the two-sided diameter comparison s**-(l+1) <= diam E <= 4*s**-l
    afterwards; the lower bound is only meaningful below the truncation
    level, where a deeper net actually exists.
    """
    ids = E.support if isinstance(E, DeltaContinuum) else np.asarray(E)
    if ids.size == 0:
        raise FillingError("empty subset")
    space = filling.space
    diam_e = space.diam(ids)
    for n in range(filling.N, -1, -1):
        r = 2.0 * filling.s ** (-n)
        if diam_e >= 2.0 * r:
            continue
        d = space.dist_cross(filling.level_centers(n), ids)
        hit = np.nonzero((d < r).all(axis=1))[0]
        if hit.size:
            v = filling.vertex_at(n, int(hit[0]))
            lv = int(filling.level[v])
            if diam_e > 4.0 * filling.s ** (-lv) + 1e-12:
                raise FillingError("enclosing-vertex upper diameter bound violated")
            if lv < filling.N and diam_e < filling.s ** (-(lv + 1)) - 1e-12:
                raise FillingError("enclosing-vertex lower diameter bound violated")
            return v
    raise FillingError("root ball does not contain the subset; malformed filling")


@dataclass
class SeparatedGeodesics:
    """Fan of centered geodesics through one vertex with a split level."""

    geodesics: list
    k0: int
    k0_bound: int
    vertex: int


def separated_geodesics(filling, E, J):
    """J geodesics through the deepest vertex over E, anchored at separated points.

    Anchors are a greedy maximal-separated subset of E at the scale where
    at least J separated points must exist; ``k0`` is the smallest observed
    offset after which all J geodesics are pairwise distinct, checked
    against the structural bound ceil(log_s(2J) + 2 + m0) with m0 minimal
    such that 4 * s**-m0 < 1.
    """
    if J < 1:
        raise FillingError("J must be >= 1")
    ids = E.support if isinstance(E, DeltaContinuum) else np.asarray(E)
    s = filling.s
    v = max_enclosing_vertex(filling, ids)
    lv = int(filling.level[v])
    if J == 1:
        z = int(ids[0])
        return SeparatedGeodesics([geodesic_fan(filling, v, z)], 0, 0, v)
    # smallest n with s**(n - l(v) - 1) > 2J
    n = lv + 1 + max(0, math.floor(math.log(2 * J, s)) + 1)
    while s ** (n - lv - 1) <= 2 * J:
        n += 1
    space = filling.space
    sub = space.dist_cross(ids, ids)
    sep = [0]
    mind = sub[0].copy()
    while True:
        nxt = int(np.argmax(mind))
        if mind[nxt] <= s ** (-n):
            break
        sep.append(nxt)
        mind = np.minimum(mind, sub[nxt])
    if len(sep) < J:
        raise FillingError(
            f"continuum too small to host {J} separated anchors at scale s**-{n}")
    anchors = [int(ids[i]) for i in sep[:J]]
    geos = [geodesic_fan(filling, v, z) for z in anchors]
    m0 = 0
    while 4.0 * s ** (-m0) >= 1.0:
        m0 += 1
    k0_bound = math.ceil(math.log(2 * J, s) + 2 + m0 - 1e-12)
    max_k = filling.N - lv
    distinct = np.zeros(max_k + 1, dtype=bool)
    for k in range(max_k + 1):
        at = {g[lv + k] for g in geos}
        distinct[k] = len(at) == J
    k0 = max_k + 1
    for k in range(max_k, -1, -1):
        if distinct[k]:
            k0 = k
        else:
            break
    if k0 > min(k0_bound, max_k):
        raise FillingError(
            f"geodesics failed to separate by offset {min(k0_bound, max_k)}")
    return SeparatedGeodesics(geos, int(k0), int(k0_bound), v)


# ---------------------------------------------------------------------------
# exports
# ---------------------------------------------------------------------------


def filling_to_dot(filling):
    """Graphviz dump, one node per vertex labeled level:center-id."""
    lines = ["graph filling {", "  rankdir=TB;"]
    for v in range(filling.n_vertices):
        lines.append(f'  v{v} [label="{filling.level[v]}:{filling.center[v]}"];')
    for n in range(filling.N + 1):
        members = " ".join(f"v{v};" for v in filling.level_vertices[n])
        lines.append(f"  {{rank=same; {members}}}")
    coo = filling.adj.tocoo()
    for a, b in sorted(zip(coo.row, coo.col)):
        if a < b:
            lines.append(f"  v{a} -- v{b};")
    lines.append("}")
    return "\n".join(lines) + "\n"


def filling_report(filling, hyperbolicity_mode="auto", seed=0):
    """Summary dict: scale, depth, level sizes, hyperbolicity, shadow bound."""
    if hyperbolicity_mode == "auto":
        hyperbolicity_mode = "exhaustive" if filling.n_vertices <= 300 else "sampled"
    hyp = hyperbolicity(filling, mode=hyperbolicity_mode,
                        rng=np.random.default_rng(seed))
    return {
        "schema": 1,
        "s": filling.s,
        "N": filling.N,
        "level_sizes": [int(len(lv)) for lv in filling.level_vertices],
        "delta_hat": float(hyp.delta_hat),
        "hyperbolicity_mode": hyp.mode,
        "A_s": filling.A_s,
        "shadow_bound": int(shadow_bound(filling)),
    }
