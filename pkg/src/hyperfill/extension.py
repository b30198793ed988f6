"""Lifting point maps to vertex maps between fillings.

The lift of f sends a source vertex v to the deepest target vertex whose
ball contains the sampled image f(B_v); ties break to the smallest target
vertex id.  On top of the lift: vertical-quasi-isometry constant fitting,
fiber counting, coboundedness radii, and the eventual-to-global promotion
that reroutes shallow levels through the target root.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import dijkstra

from hyperfill.filling import Filling, FillingError, VerticalGeodesic, centered_geodesic, geodesic_fan


@dataclass
class FillingMap:
    """Vertex-level map between two fillings."""

    source: Filling
    target: Filling
    assignment: np.ndarray
    provenance: str  # "built-from-map" | "loaded" | "promoted"
    point_map: object = None       # MetricMap the lift was built from, if any
    collapsed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if len(self.assignment) != self.source.n_vertices:
            raise FillingError("assignment must be total on source vertices")
        if self.assignment.min() < 0 or self.assignment.max() >= self.target.n_vertices:
            raise FillingError("assignment hits invalid target vertices")

    def __call__(self, v):
        return int(self.assignment[v])

    def image_levels(self):
        return self.target.level[self.assignment]

    def is_constant(self):
        return len(np.unique(self.assignment)) == 1


def _deepest_containing_vertex(target, image_ids, start_level=None):
    """Deepest target vertex whose open ball contains all image points."""
    space = target.space
    i0 = int(image_ids[0])
    if len(image_ids) > 1:
        r_img = float(space.dist_cross([i0], image_ids)[0].max())
    else:
        r_img = 0.0
    top = target.N
    if r_img > 0:
        # containment needs ball diameter 4*s**-m above the image spread
        top = min(top, int(math.floor(math.log(4.0 / r_img, target.s))))
    if start_level is not None:
        top = min(top, start_level)
    for m in range(max(top, 0), -1, -1):
        r = 2.0 * target.s ** (-m)
        cand_ranks = np.nonzero(
            space.dist_cross(target.level_centers(m), [i0])[:, 0] < r)[0]
        if cand_ranks.size == 0:
            continue
        if len(image_ids) > 1:
            far = space.dist_cross(target.center[target.level_vertices[m][cand_ranks]],
                                   image_ids).max(axis=1)
            cand_ranks = cand_ranks[far < r]
        if cand_ranks.size:
            return target.vertex_at(m, int(cand_ranks[0]))
    raise FillingError("no containing vertex; root ball should cover everything")


def fill_map(metric_map, source_filling, target_filling):
    """Lift a point map: v goes to the deepest vertex ball containing f(B_v).

    Vertices whose sampled ball image is a single point below the deepest
    level are flagged as collapsed (the map is not resolved there) but
    still assigned.
    """
    if metric_map.source is not source_filling.space:
        raise FillingError("metric map source does not match the source filling")
    if metric_map.target is not target_filling.space:
        raise FillingError("metric map target does not match the target filling")
    V = source_filling.n_vertices
    assignment = np.empty(V, dtype=np.int64)
    collapsed = []
    for v in range(V):
        ball = source_filling.ball_points(v)
        image_ids = metric_map.image_ids(ball)
        if len(image_ids) < 2 and source_filling.level[v] < source_filling.N:
            collapsed.append(v)
        assignment[v] = _deepest_containing_vertex(target_filling, image_ids)
    return FillingMap(source=source_filling, target=target_filling,
                      assignment=assignment, provenance="built-from-map",
                      point_map=metric_map,
                      collapsed=np.asarray(collapsed, dtype=np.int64))


def pushforward_map(metric_map, source_filling, target_filling):
    """Level-preserving lift: v goes to the level-l(v) vertex nearest f(c(v)).

    Realizes matched-net constructions (e.g. coordinate projections on
    aligned dyadic nets) where the lift keeps levels instead of maximizing
    them.  Requires the target at least as deep as the source.
    """
    if target_filling.N < source_filling.N:
        raise FillingError("pushforward needs target depth >= source depth")
    tgt = target_filling
    assignment = np.empty(source_filling.n_vertices, dtype=np.int64)
    for v in range(source_filling.n_vertices):
        n = int(source_filling.level[v])
        fc = int(metric_map.assignment[source_filling.center[v]])
        row = tgt.space.dist_cross([fc], tgt.level_centers(n))[0]
        assignment[v] = tgt.vertex_at(n, int(np.argmin(row)))
    return FillingMap(source=source_filling, target=target_filling,
                      assignment=assignment, provenance="loaded",
                      point_map=metric_map)


def compose_filling_maps(psi, phi):
    """psi after phi at the vertex level."""
    if psi.source is not phi.target:
        raise FillingError("incompatible chain: psi.source must be phi.target")
    return FillingMap(source=phi.source, target=psi.target,
                      assignment=psi.assignment[phi.assignment],
                      provenance="loaded")


def verify_fill_map(filling_map, sample=None, rng=None):
    """Re-check the defining property: no strictly deeper vertex contains f(B_v)."""
    if filling_map.point_map is None:
        raise FillingError("only lifts built from a point map can be re-checked")
    src, tgt, f = filling_map.source, filling_map.target, filling_map.point_map
    vs = range(src.n_vertices) if sample is None else sample
    for v in vs:
        image_ids = f.image_ids(src.ball_points(v))
        w = filling_map(v)
        lw = int(tgt.level[w])
        r = 2.0 * tgt.s ** (-lw)
        if tgt.space.dist_cross([tgt.center[w]], image_ids).max() >= r:
            return False
        if lw < tgt.N:
            deeper = _deepest_containing_vertex(tgt, image_ids)
            if int(tgt.level[deeper]) > lw:
                return False
    return True


# ---------------------------------------------------------------------------
# vertical quasi-isometry constants
# ---------------------------------------------------------------------------


@dataclass
class VqiReport:
    """Pareto curve beta -> smallest admissible alpha over sampled geodesics."""

    pareto: list                      # [(beta, alpha_min)]
    geodesics_sampled: int
    worst_pair: tuple                 # (geodesic index, j, j')
    eventual_cutoff: int | None = None
    alpha_cap: float = 8.0

    def alpha_at(self, beta):
        for b, a in self.pareto:
            if b == beta:
                return a
        raise KeyError(f"beta={beta} not on the fitted grid")


def default_geodesic_sample(filling, fans=0, rng=None):
    """Centered geodesics at every finest-net point, plus random fans."""
    geos = [centered_geodesic(filling, int(z))
            for z in filling.level_centers(filling.N)]
    if fans:
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        V = filling.n_vertices
        made = 0
        while made < fans:
            v = int(rng.integers(0, V))
            ball = filling.ball_points(v)
            if len(ball) == 0:
                continue
            z = int(ball[rng.integers(0, len(ball))])
            geos.append(geodesic_fan(filling, v, z))
            made += 1
    return geos


def _target_distance_lookup(filling_map, geodesics):
    """Graph distances in the target between all image vertices."""
    tgt = filling_map.target
    img = np.unique(np.concatenate(
        [filling_map.assignment[g.vertices] for g in geodesics]))
    if tgt.n_vertices <= 6000:
        D = tgt.dist_matrix()
        return {int(w): D[w] for w in img}
    D = dijkstra(tgt.adj, directed=False, unweighted=True, indices=img)
    return {int(w): D[k] for k, w in enumerate(img)}


def estimate_vqi(filling_map, geodesics=None, beta_grid=None, alpha_cap=8.0):
    """Fit (alpha, beta) envelopes over sampled vertical geodesics.

    For each beta, alpha_min(beta) is the smallest alpha (clamped at 1)
    with (1/alpha)|j-j'| - beta <= |phi(g(j)) - phi(g(j'))| <= alpha|j-j'| + beta
    over every sampled geodesic pair; values above ``alpha_cap`` are
    reported as inf (vacuous at truncation depth).
    """
    if geodesics is None:
        geodesics = default_geodesic_sample(filling_map.source)
    if not geodesics:
        raise FillingError("empty geodesic sample")
    N = filling_map.source.N
    if beta_grid is None:
        beta_grid = list(range(0, 2 * N + 1))
    rows = _target_distance_lookup(filling_map, geodesics)
    needs = []   # (delta_j, target_dist, geod idx, j, j')
    for gi, g in enumerate(geodesics):
        img = filling_map.assignment[g.vertices]
        for j in range(len(g) - 1):
            row = rows[int(img[j])]
            for jp in range(j + 1, len(g)):
                needs.append((jp - j, float(row[int(img[jp])]), gi, j, jp))
    deltas = np.array([x[0] for x in needs], dtype=float)
    dists = np.array([x[1] for x in needs], dtype=float)
    pareto = []
    worst_pair = (0, 0, 1)
    for beta in beta_grid:
        upper = (dists - beta) / deltas
        denom = dists + beta
        lower = np.full_like(deltas, np.inf)
        np.divide(deltas, denom, out=lower, where=denom > 0)
        alphas = np.maximum(np.maximum(upper, lower), 1.0)
        k = int(np.argmax(alphas))
        a = float(alphas[k])
        if beta == beta_grid[-1]:
            worst_pair = (needs[k][2], needs[k][3], needs[k][4])
        pareto.append((int(beta), a if a <= alpha_cap else math.inf))
    return VqiReport(pareto=pareto, geodesics_sampled=len(geodesics),
                     worst_pair=worst_pair, alpha_cap=alpha_cap)


def fitted_beta(report, alpha_cap):
    """Smallest beta whose fitted alpha stays below the cap."""
    for b, a in report.pareto:
        if math.isfinite(a) and a <= alpha_cap:
            return b
    return None


def eventual_cutoff(filling_map, geodesics, alpha, beta):
    """Smallest J such that all sampled pairs with j, j' >= J fit (alpha, beta)."""
    rows = _target_distance_lookup(filling_map, geodesics)
    N = filling_map.source.N
    for J in range(0, N + 1):
        ok = True
        for g in geodesics:
            img = filling_map.assignment[g.vertices]
            for j in range(J, len(g) - 1):
                row = rows[int(img[j])]
                for jp in range(j + 1, len(g)):
                    d = float(row[int(img[jp])])
                    dj = jp - j
                    if d > alpha * dj + beta or d < dj / alpha - beta:
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            return J
    return None


def check_lipschitz_on_edges(filling_map, alpha, beta):
    """Edge-level check |phi(v) - phi(v')| <= 2 (alpha + beta) |v - v'|."""
    src, tgt = filling_map.source, filling_map.target
    coo = src.adj.tocoo()
    bound = 2.0 * (alpha + beta)
    D = tgt.dist_matrix()
    worst = 0.0
    for a, b in zip(coo.row, coo.col):
        if a < b:
            worst = max(worst, float(D[filling_map(a), filling_map(b)]))
    return worst <= bound, worst, bound


# ---------------------------------------------------------------------------
# multiplicity / coboundedness / promotion
# ---------------------------------------------------------------------------


@dataclass
class MultiplicityReport:
    N_phi: int
    argmax_vertex: int
    per_level: dict  # source level -> max fiber size within that level


def multiplicity(filling_map):
    """Exact fiber maxima of the vertex assignment on the truncation."""
    tgt_count = filling_map.target.n_vertices
    fibers = np.bincount(filling_map.assignment, minlength=tgt_count)
    per_level = {}
    src = filling_map.source
    for n in range(src.N + 1):
        idx = src.level_vertices[n]
        counts = np.bincount(filling_map.assignment[idx], minlength=tgt_count)
        per_level[n] = int(counts.max())
    return MultiplicityReport(N_phi=int(fibers.max()),
                              argmax_vertex=int(np.argmax(fibers)),
                              per_level=per_level)


def cobounded_radius(filling_map, depth=None):
    """Max target-graph distance from any vertex to the image set.

    ``depth`` restricts both fillings to levels <= depth.  For lifts built
    from a point map the capped assignment is recomputed (the deepest
    containing vertex at level <= depth), matching what a separately built
    depth-restricted lift would produce.
    """
    src, tgt = filling_map.source, filling_map.target
    if depth is None or depth >= tgt.N:
        img = np.unique(filling_map.assignment)
        d = dijkstra(tgt.adj, directed=False, unweighted=True, indices=img,
                     min_only=True)
        return int(d.max())
    if filling_map.point_map is None:
        raise FillingError("depth-restricted radius needs a lift built from a point map")
    f = filling_map.point_map
    keep_src = np.nonzero(src.level <= depth)[0]
    img = set()
    for v in keep_src:
        image_ids = f.image_ids(src.ball_points(int(v)))
        img.add(_deepest_containing_vertex(tgt, image_ids, start_level=depth))
    keep_tgt = np.nonzero(tgt.level <= depth)[0]
    sub = tgt.adj[keep_tgt][:, keep_tgt]
    pos = {int(w): i for i, w in enumerate(keep_tgt)}
    sources = np.asarray(sorted(pos[int(w)] for w in img))
    d = dijkstra(sub, directed=False, unweighted=True, indices=sources,
                 min_only=True)
    return int(d.max())


def promote_eventual(filling_map, J):
    """Send levels <= J to the target root, keep the rest; provenance 'promoted'."""
    if J < 0:
        raise FillingError("cutoff J must be >= 0")
    assignment = filling_map.assignment.copy()
    assignment[filling_map.source.level <= J] = filling_map.target.root
    return FillingMap(source=filling_map.source, target=filling_map.target,
                      assignment=assignment, provenance="promoted",
                      point_map=filling_map.point_map,
                      collapsed=filling_map.collapsed)


@dataclass
class LevelDisplacement:
    pairs: list           # (source level, image level)
    slope: float
    intercept: float
    degenerate: bool      # flat profile: the lift collapses levels


def cobounded_radius_series(filling_map, depths):
    return [cobounded_radius(filling_map, depth=d) for d in depths]


def level_displacement(filling_map):
    """Least-squares slope of image level against source level."""
    lv = filling_map.source.level.astype(float)
    lw = filling_map.image_levels().astype(float)
    slope, intercept = np.polyfit(lv, lw, 1)
    return LevelDisplacement(pairs=list(zip(lv.astype(int).tolist(),
                                            lw.astype(int).tolist())),
                             slope=float(slope), intercept=float(intercept),
                             degenerate=abs(slope) < 0.05)
