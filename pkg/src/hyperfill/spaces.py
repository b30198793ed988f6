"""Discretized compact metric spaces and continuum surrogates.

A space is a finite point cloud with an exact metric oracle, normalized so
the maximum pairwise distance is 1.  The resolution ``rho`` bounds how far
any point of the intended underlying space can be from a sample point.
Connected subsets ("continua") are modeled as delta-connected point sets
with ``delta >= 2 * rho``: any rho-dense sample of a true connected set is
(2*rho)-chain-connected, so diameter-based definitions transfer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist


class SpaceError(ValueError):
    """Invalid construction parameters for a space."""


class DisconnectedError(RuntimeError):
    """Two points lie in different delta-components of the space."""


GENERATORS = (
    "interval",
    "square",
    "circle",
    "snowflake",
    "parabola_union",
    "strip",
    "disk",
    "cantor",
)

# Growth factor of the diameter grid used by hull_between.
_HULL_GRID = 1.05


class FiniteMetricSpace:
    """Finite point cloud with an exact, diameter-normalized metric.

    Two backends: ``coords`` (metric = euclidean**exponent / scale, with
    exponent in (0, 1] so the snowflake transform stays a metric) or an
    explicit normalized distance matrix ``dmat``.
    """

    def __init__(self, *, label, rho, coords=None, exponent=1.0, scale=1.0,
                 dmat=None, spec=None):
        if (coords is None) == (dmat is None):
            raise SpaceError("exactly one of coords/dmat must be given")
        if coords is not None:
            coords = np.asarray(coords, dtype=float)
            n = coords.shape[0]
            if not 0.0 < exponent <= 1.0:
                raise SpaceError("exponent must lie in (0, 1]")
        else:
            dmat = np.asarray(dmat, dtype=float)
            n = dmat.shape[0]
        if n < 4:
            raise SpaceError(f"space needs at least 4 points, got {n}")
        if not 0.0 < rho < 0.25:
            raise SpaceError(f"resolution rho={rho} must lie in (0, 1/4)")
        self.label = label
        self.rho = float(rho)
        self.coords = coords
        self.exponent = float(exponent)
        self.scale = float(scale)
        self.dmat = dmat
        self.spec = spec or {}
        self._kdtree = None
        self._delta_graphs = {}
        if coords is not None and n <= 4096:
            # duplicate points break the metric axioms; cheap to catch here
            d = cdist(coords, coords)
            np.fill_diagonal(d, np.inf)
            if d.min() <= 0.0:
                raise SpaceError("duplicate points in sample")

    # -- basic oracle -------------------------------------------------

    @property
    def n_points(self):
        return self.coords.shape[0] if self.coords is not None else self.dmat.shape[0]

    @property
    def points(self):
        return np.arange(self.n_points)

    def _euclid_to_metric(self, e):
        return (e ** self.exponent) / self.scale

    def metric_to_euclid(self, r):
        """Euclidean radius equivalent to metric radius ``r``."""
        if self.coords is None:
            raise SpaceError("matrix-backed space has no euclidean structure")
        return (r * self.scale) ** (1.0 / self.exponent)

    def dist(self, p, q):
        if self.dmat is not None:
            return float(self.dmat[p, q])
        return float(self._euclid_to_metric(np.linalg.norm(self.coords[p] - self.coords[q])))

    def dist_row(self, p):
        """Distances from point ``p`` to every point."""
        if self.dmat is not None:
            return self.dmat[p].copy()
        e = np.linalg.norm(self.coords - self.coords[p], axis=1)
        return self._euclid_to_metric(e)

    def dist_cross(self, ids_a, ids_b):
        """Distance matrix between two id arrays."""
        ids_a = np.atleast_1d(ids_a)
        ids_b = np.atleast_1d(ids_b)
        if self.dmat is not None:
            return self.dmat[np.ix_(ids_a, ids_b)]
        e = cdist(self.coords[ids_a], self.coords[ids_b])
        return self._euclid_to_metric(e)

    def diam(self, ids):
        """Exact max pairwise distance over a point id subset."""
        ids = np.asarray(ids)
        if ids.size < 2:
            return 0.0
        if self.dmat is not None:
            return float(self.dmat[np.ix_(ids, ids)].max())
        sub = self.coords[ids]
        if sub.shape[1] == 1:
            best = float(sub.max() - sub.min())
            return float(self._euclid_to_metric(best))
        if len(ids) > 2000:
            # the euclidean diameter pair lies on the convex hull
            from scipy.spatial import ConvexHull, QhullError
            try:
                sub = sub[ConvexHull(sub).vertices]
            except QhullError:
                pass  # degenerate hull; fall through to pairwise
        best = 0.0
        step = max(1, int(2.0e6 / max(len(sub), 1)))
        for lo in range(0, len(sub), step):
            best = max(best, cdist(sub[lo:lo + step], sub).max())
        return float(self._euclid_to_metric(best))

    # -- neighborhood structure ---------------------------------------

    def kdtree(self):
        if self.coords is None:
            return None
        if self._kdtree is None:
            self._kdtree = cKDTree(self.coords)
        return self._kdtree

    def neighbors_within(self, p, r, strict=False):
        """Ids at metric distance <= r (or < r) from point ``p``."""
        if self.dmat is not None:
            row = self.dmat[p]
            ids = np.nonzero(row < r if strict else row <= r)[0]
            return ids
        e = self.metric_to_euclid(r)
        ids = np.asarray(self.kdtree().query_ball_point(self.coords[p], e), dtype=np.int64)
        if strict:
            row = self._euclid_to_metric(
                np.linalg.norm(self.coords[ids] - self.coords[p], axis=1))
            ids = ids[row < r]
        return np.sort(ids)

    def delta_graph(self, delta):
        """Symmetric CSR adjacency of the graph with edges d(p,q) <= delta."""
        key = round(float(delta), 15)
        g = self._delta_graphs.get(key)
        if g is not None:
            return g
        n = self.n_points
        if self.dmat is not None:
            iu, ju = np.nonzero(np.triu(self.dmat <= delta, k=1))
            pairs = np.column_stack([iu, ju])
        else:
            pairs = self.kdtree().query_pairs(self.metric_to_euclid(delta),
                                              output_type="ndarray")
        if len(pairs):
            rows = np.concatenate([pairs[:, 0], pairs[:, 1]])
            cols = np.concatenate([pairs[:, 1], pairs[:, 0]])
            data = np.ones(len(rows), dtype=np.int8)
            g = csr_matrix((data, (rows, cols)), shape=(n, n))
        else:
            g = csr_matrix((n, n), dtype=np.int8)
        self._delta_graphs[key] = g
        return g

    def delta_labels(self, delta):
        """Connected-component labels of the delta graph."""
        _, labels = connected_components(self.delta_graph(delta), directed=False)
        return labels

    def to_spec(self):
        return dict(self.spec)


@dataclass(frozen=True)
class DeltaContinuum:
    """Delta-connected point set standing in for a continuum."""

    support: np.ndarray
    delta: float
    diam: float

    def __post_init__(self):
        if self.support.size < 2:
            raise SpaceError("a continuum surrogate needs at least 2 points")


def delta_continuum(space, ids, delta):
    """Validated DeltaContinuum over ``ids`` at scale ``delta``."""
    ids = np.unique(np.asarray(ids, dtype=np.int64))
    if delta < 2.0 * space.rho:
        raise SpaceError(f"delta={delta} below 2*rho={2 * space.rho}")
    parts = delta_components(space, ids, delta)
    if len(parts) != 1:
        raise SpaceError("support is not delta-connected")
    return DeltaContinuum(support=ids, delta=float(delta), diam=space.diam(ids))


@dataclass(frozen=True)
class BoundedTurningEstimate:
    """Sampled worst ratio hull-diameter / distance."""

    lambda_hat: float
    pairs_sampled: int
    worst_pair: tuple[int, int]
    unbounded_suspected: bool


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def _grid_coords_2d(xs, ys):
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.column_stack([gx.ravel(), gy.ravel()])


def _coords_space(label, coords, raw_diam, rho_raw, spec, exponent=1.0):
    scale = raw_diam ** exponent
    rho = (rho_raw ** exponent) / scale
    return FiniteMetricSpace(label=label, rho=rho, coords=coords,
                             exponent=exponent, scale=scale, spec=spec)


def _gen_interval(n=65):
    n = int(n)
    if n < 4:
        raise SpaceError("interval needs n >= 4")
    h = 1.0 / (n - 1)
    coords = np.linspace(0.0, 1.0, n).reshape(-1, 1)
    return _coords_space(f"interval(n={n})", coords, 1.0, h / 2.0,
                         {"generator": "interval", "params": {"n": n}})


def _gen_snowflake(n=65, epsilon=0.5):
    n = int(n)
    epsilon = float(epsilon)
    if n < 4:
        raise SpaceError("snowflake needs n >= 4")
    if not 0.0 < epsilon <= 1.0:
        raise SpaceError("snowflake exponent must lie in (0, 1]")
    h = 1.0 / (n - 1)
    coords = np.linspace(0.0, 1.0, n).reshape(-1, 1)
    return _coords_space(f"snowflake(e={epsilon},n={n})", coords, 1.0, h / 2.0,
                         {"generator": "snowflake", "params": {"n": n, "epsilon": epsilon}},
                         exponent=epsilon)


def _gen_square(n=33):
    n = int(n)
    if n < 2:
        raise SpaceError("square needs n >= 2 per side")
    h = 1.0 / (n - 1)
    xs = np.linspace(0.0, 1.0, n)
    coords = _grid_coords_2d(xs, xs)
    return _coords_space(f"square({n}x{n})", coords, math.sqrt(2.0), h / math.sqrt(2.0),
                         {"generator": "square", "params": {"n": n}})


def _gen_circle(n=64):
    n = int(n)
    if n < 7:
        raise SpaceError("circle needs n >= 7 for rho < 1/4")
    th = 2.0 * math.pi * np.arange(n) / n
    coords = np.column_stack([np.cos(th), np.sin(th)])
    raw_diam = 2.0 * math.sin(math.pi * (n // 2) / n)
    rho_raw = 2.0 * math.sin(math.pi / (2 * n))
    return _coords_space(f"circle(n={n})", coords, raw_diam, rho_raw,
                         {"generator": "circle", "params": {"n": n}})


def _gen_parabola_union(n=101):
    # flat branch [0,1] x {0} plus the arc {(x, x^2)}; they meet at the origin
    n = int(n)
    if n < 4:
        raise SpaceError("parabola_union needs n >= 4 per branch")
    xs = np.linspace(0.0, 1.0, n)
    flat = np.column_stack([xs, np.zeros(n)])
    arc = np.column_stack([xs[1:], xs[1:] ** 2])
    coords = np.vstack([flat, arc])
    h = 1.0 / (n - 1)
    rho_raw = h * math.sqrt(5.0) / 2.0  # arc chord length <= h * sqrt(5)
    return _coords_space(f"parabola_union(n={n})", coords, math.sqrt(2.0), rho_raw,
                         {"generator": "parabola_union", "params": {"n": n}})


def _gen_strip(nx=41, ny=21, x0=-1.0, x1=1.0):
    nx, ny = int(nx), int(ny)
    x0, x1 = float(x0), float(x1)
    if nx < 2 or ny < 2 or x1 <= x0:
        raise SpaceError("strip needs nx, ny >= 2 and x1 > x0")
    xs = np.linspace(x0, x1, nx)
    ys = np.linspace(0.0, 1.0, ny)
    coords = _grid_coords_2d(xs, ys)
    hx = (x1 - x0) / (nx - 1)
    hy = 1.0 / (ny - 1)
    raw_diam = math.hypot(x1 - x0, 1.0)
    rho_raw = math.hypot(hx, hy) / 2.0
    return _coords_space(f"strip([{x0},{x1}]x[0,1],{nx}x{ny})", coords, raw_diam, rho_raw,
                         {"generator": "strip",
                          "params": {"nx": nx, "ny": ny, "x0": x0, "x1": x1}})


def _gen_disk(n=65):
    n = int(n)
    if n < 5:
        raise SpaceError("disk needs n >= 5 per axis")
    xs = np.linspace(-1.0, 1.0, n)
    coords = _grid_coords_2d(xs, xs)
    coords = coords[np.einsum("ij,ij->i", coords, coords) <= 1.0 + 1e-12]
    h = 2.0 / (n - 1)
    return _coords_space(f"disk(n={n})", coords, 2.0, h / math.sqrt(2.0),
                         {"generator": "disk", "params": {"n": n}})


def _gen_cantor(levels=6, branching=2, ratio=4.0):
    # ultrametric d(u, v) = ratio**-lcp(u, v) over all words of the given length;
    # at scale ratio**-n the balls are exactly the prefix cylinders, so fillings
    # built at s = ratio are trees
    levels, branching, ratio = int(levels), int(branching), float(ratio)
    if levels < 2 or branching < 2 or ratio <= 1.0:
        raise SpaceError("cantor needs levels >= 2, branching >= 2, ratio > 1")
    n = branching ** levels
    if n > 4096:
        raise SpaceError("cantor sample too large")
    digits = np.zeros((n, levels), dtype=np.int64)
    idx = np.arange(n)
    for k in range(levels):
        digits[:, k] = (idx // branching ** (levels - 1 - k)) % branching
    eq = digits[:, None, :] == digits[None, :, :]
    lcp = np.where(eq.all(axis=2), levels, eq.argmin(axis=2))
    dmat = ratio ** (-lcp.astype(float))
    np.fill_diagonal(dmat, 0.0)
    return FiniteMetricSpace(label=f"cantor({branching}^{levels},r={ratio})",
                             rho=ratio ** (-levels), dmat=dmat,
                             spec={"generator": "cantor",
                                   "params": {"levels": levels, "branching": branching,
                                              "ratio": ratio}})


_GEN_FUNCS = {
    "interval": _gen_interval,
    "snowflake": _gen_snowflake,
    "square": _gen_square,
    "circle": _gen_circle,
    "parabola_union": _gen_parabola_union,
    "strip": _gen_strip,
    "disk": _gen_disk,
    "cantor": _gen_cantor,
}


def make_space(generator, **params):
    """Build a named sample space; deterministic for fixed params."""
    fn = _GEN_FUNCS.get(generator)
    if fn is None:
        raise SpaceError(f"unknown generator {generator!r}; known: {sorted(_GEN_FUNCS)}")
    return fn(**params)


def space_from_spec(spec):
    """Build a space from a ``{"generator", "params", "seed"}`` dict."""
    if "generator" not in spec:
        raise SpaceError("space spec needs a 'generator' field")
    return make_space(spec["generator"], **spec.get("params", {}))


def space_to_csv(space):
    """CSV dump: coordinates when embeddable, else the distance matrix."""
    lines = []
    if space.coords is not None:
        dim = space.coords.shape[1]
        lines.append("id," + ",".join(f"x{i}" for i in range(dim)))
        for pid, row in enumerate(space.coords):
            lines.append(f"{pid}," + ",".join(f"{v:.12g}" for v in row))
    else:
        if space.n_points > 512:
            raise SpaceError("distance-matrix export capped at 512 points")
        lines.append("id," + ",".join(str(i) for i in range(space.n_points)))
        for pid in range(space.n_points):
            lines.append(f"{pid}," + ",".join(f"{v:.12g}" for v in space.dmat[pid]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# delta-connectivity operations
# ---------------------------------------------------------------------------


def delta_components(space, subset, delta):
    """Connected components of the delta graph restricted to ``subset``."""
    subset = np.unique(np.asarray(subset, dtype=np.int64))
    if subset.size == 0:
        raise SpaceError("empty subset")
    if delta <= 0:
        raise SpaceError("delta must be positive")
    g = space.delta_graph(delta)[subset][:, subset]
    k, labels = connected_components(g, directed=False)
    return [subset[labels == i] for i in range(k)]


def _masked_component(graph, start, mask):
    """Points reachable from ``start`` inside the masked node set."""
    ids = np.nonzero(mask)[0]
    sub = graph[ids][:, ids]
    _, labels = connected_components(sub, directed=False)
    pos = np.searchsorted(ids, start)
    visited = np.zeros(mask.shape[0], dtype=bool)
    visited[ids[labels == labels[pos]]] = True
    return visited


def _minimax_radius(graph, bi, x, y):
    """Smallest B with x, y connected inside {z : bi[z] <= B} (bottleneck path)."""
    import heapq

    indptr, indices = graph.indptr, graph.indices
    best = np.full(bi.shape[0], np.inf)
    best[x] = bi[x]
    heap = [(float(bi[x]), x)]
    while heap:
        b, u = heapq.heappop(heap)
        if u == y:
            return b
        if b > best[u]:
            continue
        for v in indices[indptr[u]:indptr[u + 1]]:
            nb = b if b >= bi[v] else float(bi[v])
            if nb < best[v]:
                best[v] = nb
                heapq.heappush(heap, (nb, v))
    return math.inf


def hull_between(space, x, y, delta):
    """Near-minimal-diameter delta-connected set containing ``x`` and ``y``.

    Finds the smallest D on the grid d(x,y) * 1.05**k such that x and y
    connect inside the bi-ball {z : max(d(z,x), d(z,y)) <= D}, and returns
    the delta-component of x there.  Any connecting set of diameter D lies
    in that bi-ball and the returned set has diameter <= 2D, so the result
    is within a factor ~2 of the optimal connecting-set diameter.
    """
    if x == y:
        raise SpaceError("hull endpoints must differ")
    if delta < 2.0 * space.rho:
        raise SpaceError(f"delta={delta} below 2*rho={2 * space.rho}")
    graph = space.delta_graph(delta)
    bi = np.maximum(space.dist_row(x), space.dist_row(y))
    d_star = _minimax_radius(graph, bi, x, y)
    if not math.isfinite(d_star):
        raise DisconnectedError(
            f"points {x} and {y} lie in different delta-components")
    d0 = space.dist(x, y)
    steps = max(0, math.ceil(math.log(max(d_star / d0, 1.0)) / math.log(_HULL_GRID) - 1e-12))
    D = d0 * _HULL_GRID ** steps
    visited = _masked_component(graph, x, bi <= D + 1e-15)
    ids = np.nonzero(visited)[0]
    return DeltaContinuum(support=ids, delta=float(delta), diam=space.diam(ids))


def mazurkiewicz_dist(space, x, y, delta):
    """Approximate infimal diameter of a delta-connected set joining x, y.

    Satisfies d(x,y) <= result, and result is within a factor ~2 of the
    true infimum over delta-connected sets.
    """
    return hull_between(space, x, y, delta).diam


def estimate_bounded_turning(space, delta, num_pairs, rng=None, pairs=None):
    """Worst sampled ratio diam(hull(x,y)) / d(x,y).

    Half the budget goes to uniform pairs, half to short-range pairs
    (anchor plus k-th nearest neighbor beyond delta), since turning
    distortion concentrates at small scales.  ``pairs`` adds explicit
    probes.  Exhaustive over all pairs when num_pairs >= n**2.
    """
    if num_pairs < 1:
        raise SpaceError("num_pairs must be >= 1")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    n = space.n_points
    todo = []
    if pairs is not None:
        todo.extend((int(a), int(b)) for a, b in pairs)
    if num_pairs >= n * n:
        todo.extend((a, b) for a in range(n) for b in range(a + 1, n))
    else:
        n_local = num_pairs // 2
        n_uniform = num_pairs - n_local
        for _ in range(n_uniform):
            a, b = rng.choice(n, size=2, replace=False)
            todo.append((int(a), int(b)))
        anchors = rng.choice(n, size=max(1, n_local // 4 + 1), replace=False)
        ks = [1, 2, 4, 8, 16, 32, 64]
        for a in anchors:
            row = space.dist_row(int(a))
            order = np.argsort(row, kind="stable")
            near = [int(q) for q in order if row[q] > delta][: max(ks)]
            for k in ks:
                if len(todo) - (0 if pairs is None else len(pairs)) >= num_pairs:
                    break
                if k - 1 < len(near):
                    todo.append((int(a), near[k - 1]))
    lam, worst, count = 1.0, (0, 0), 0
    for a, b in todo:
        if a == b:
            continue
        d = space.dist(a, b)
        if d <= 0:
            continue
        try:
            hull = hull_between(space, a, b, delta)
        except DisconnectedError:
            raise
        count += 1
        ratio = hull.diam / d
        if ratio > lam:
            lam, worst = ratio, (a, b)
    return BoundedTurningEstimate(lambda_hat=float(lam), pairs_sampled=count,
                                  worst_pair=worst, unbounded_suspected=lam > 100.0)
