"""Distortion gauges for point maps between sample spaces.

The central ratio data: for intersecting delta-connected sets E, E' the
pair (t, u) = (diam E / diam E', diam fE / diam fE').  A map admits a
gauge eta when u <= eta(t) over all sampled pairs; power gauges have the
form eta(t) = C * max(t**q, t**(1/q)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from hyperfill.spaces import (
    DisconnectedError,
    FiniteMetricSpace,
    SpaceError,
    hull_between,
    delta_components,
)


class MapError(ValueError):
    """Incompatible spaces or invalid map parameters."""


@dataclass
class MetricMap:
    """Point-level map: assignment[i] is the target sample id of source i."""

    source: FiniteMetricSpace
    target: FiniteMetricSpace
    assignment: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.assignment = np.asarray(self.assignment, dtype=np.int64)
        if len(self.assignment) != self.source.n_points:
            raise MapError("assignment must be total on source points")
        if self.assignment.min() < 0 or self.assignment.max() >= self.target.n_points:
            raise MapError("assignment hits invalid target ids")

    def image_ids(self, ids):
        return np.unique(self.assignment[np.asarray(ids)])

    def image_diam(self, ids):
        return self.target.diam(self.image_ids(ids))


@dataclass
class DistortionProfile:
    """Sampled (t, u) ratios; u = inf marks a collapsed image."""

    samples: list
    generator: str
    delta: float
    seed: int | None
    label: str = ""

    @property
    def finite_samples(self):
        return [(t, u) for t, u in self.samples if math.isfinite(u)]

    @property
    def degenerate_count(self):
        return sum(1 for _, u in self.samples if not math.isfinite(u))


@dataclass(frozen=True)
class PowerGauge:
    """eta(t) = C * max(t**q, t**(1/q)) with C >= 1 and q in (0, 1]."""

    C: float
    q: float

    def __post_init__(self):
        if self.C < 1.0 - 1e-9:
            raise MapError("gauge constant C must be >= 1 (take E = E')")
        if not 0.0 < self.q <= 1.0:
            raise MapError("gauge exponent must lie in (0, 1]")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.C * np.maximum(t ** self.q, t ** (1.0 / self.q))


@dataclass
class GaugeFit:
    """Per-exponent minimal constants and the best power gauge, if any."""

    c_of_q: list
    best: PowerGauge | None
    verdict: str  # "bqs" | "not-bqs-evidence"


# ---------------------------------------------------------------------------
# builtin analytic maps
# ---------------------------------------------------------------------------


def _raw(space, ids=None):
    if space.coords is None:
        raise MapError("builtin maps need coordinate-backed spaces")
    return space.coords if ids is None else space.coords[ids]


def _snap(target, raw_pts):
    """Nearest target sample to each analytic image point."""
    _, idx = target.kdtree().query(raw_pts)
    return np.asarray(idx, dtype=np.int64)


def _require(cond, msg):
    if not cond:
        raise MapError(msg)


def _fold_h(t):
    out = np.where(t <= -0.5, 3.0 * (t + 1.0) - 1.0, np.where(np.abs(t) <= 0.5, np.abs(t), t))
    return out


def _accordion_g(x):
    # teeth a_k = 3 - 2**(1-k) accumulate at 3; each tooth rises then falls
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 1.0, 1.0 - x, 0.0)
    rest = x > 1.0
    xr = x[rest]
    k = np.maximum(0, np.ceil(1.0 - np.log2(np.maximum(3.0 - xr, 1e-300))).astype(int) - 1)
    a_k = 3.0 - 2.0 ** (1.0 - k)
    mid = a_k + 2.0 ** (-k - 1.0)
    a_next = 3.0 - 2.0 ** (-k.astype(float))
    vals = np.where(xr <= mid, xr - a_k, a_next - xr)
    res = out.copy()
    res[rest] = np.maximum(vals, 0.0)
    return res


def builtin_map(name, source, target, **params):
    """Named analytic map realized by snapping images to target samples."""
    gen_s = source.spec.get("generator")
    gen_t = target.spec.get("generator")
    if name == "identity":
        imgs = _raw(source)
    elif name == "snowflake_identity":
        _require(gen_s in ("interval", "snowflake") and gen_t in ("interval", "snowflake"),
                 "snowflake_identity runs between [0,1] line samples")
        imgs = _raw(source)
    elif name == "winding":
        _require(gen_s == "disk" and gen_t == "disk", "winding needs disk spaces")
        xy = _raw(source)
        r = np.hypot(xy[:, 0], xy[:, 1])
        th = np.arctan2(xy[:, 1], xy[:, 0])
        imgs = np.column_stack([r * np.cos(2 * th), r * np.sin(2 * th)])
    elif name == "folding":
        _require(gen_s == "strip" and gen_t == "strip", "folding needs strip spaces")
        xy = _raw(source)
        imgs = np.column_stack([_fold_h(xy[:, 0]), xy[:, 1]])
    elif name == "accordion":
        _require(gen_s == "strip" and gen_t == "square",
                 "accordion maps the [0,3] strip onto the square")
        xy = _raw(source)
        imgs = np.column_stack([_accordion_g(xy[:, 0]), xy[:, 1]])
    elif name == "projection":
        _require(gen_s == "square" and gen_t in ("interval", "snowflake"),
                 "projection maps the square onto a line sample")
        imgs = _raw(source)[:, 1:2]
    elif name == "inclusion":
        _require(gen_s in ("interval", "snowflake") and gen_t in ("interval", "snowflake"),
                 "inclusion runs between line samples")
        lo, hi = params.get("subrange", (0.0, 0.25))
        imgs = lo + (hi - lo) * _raw(source)
    else:
        raise MapError(f"unknown builtin map {name!r}")
    return MetricMap(source=source, target=target,
                     assignment=_snap(target, imgs), label=name)


# ---------------------------------------------------------------------------
# profile sampling
# ---------------------------------------------------------------------------


def _ball_component(space, anchor, radius, delta):
    """Delta-component of ``anchor`` inside the closed ball around it."""
    ids = space.neighbors_within(anchor, radius)
    parts = delta_components(space, ids, delta)
    for part in parts:
        if anchor in part:
            return part
    return np.asarray([anchor])


def _pair_hull(space, anchor, other, delta):
    try:
        return hull_between(space, anchor, other, delta).support
    except DisconnectedError:
        return None


def generate_pair_family(space, delta, count, generator="chain_pairs",
                         seed=None, max_diam=None):
    """Intersecting delta-connected pair supports for distortion sampling.

    Generators: ``hull_pairs`` (nested anchored ball components),
    ``chain_pairs`` (two connecting hulls from a shared anchor),
    ``ball_pairs`` (components of two balls through a shared anchor).
    ``max_diam`` keeps only pairs of sets below that diameter, for
    locality-restricted fitting.
    """
    if count < 1:
        raise SpaceError("count must be >= 1")
    if generator not in ("hull_pairs", "chain_pairs", "ball_pairs"):
        raise SpaceError(f"unknown pair generator {generator!r}")
    rng = np.random.default_rng(seed)
    n = space.n_points
    pairs = []
    attempts = 0
    while len(pairs) < count and attempts < 20 * count:
        attempts += 1
        anchor = int(rng.integers(0, n))
        if generator == "chain_pairs":
            p, q = rng.integers(0, n, size=2)
            if p == anchor or q == anchor or p == q:
                continue
            e1 = _pair_hull(space, anchor, int(p), delta)
            e2 = _pair_hull(space, anchor, int(q), delta)
        else:
            r1, r2 = np.exp(rng.uniform(np.log(2.0 * delta), np.log(0.5), size=2))
            e1 = _ball_component(space, anchor, float(r1), delta)
            if generator == "hull_pairs":
                e2 = _ball_component(space, anchor, float(r2), delta)
            else:
                row = space.dist_row(anchor)
                near = np.nonzero(row <= r2)[0]
                c2 = int(near[rng.integers(0, len(near))])
                e2 = _ball_component(space, c2, float(r2), delta)
                if anchor not in e2:
                    continue
        if e1 is None or e2 is None or len(e1) < 2 or len(e2) < 2:
            continue
        d1, d2 = space.diam(e1), space.diam(e2)
        if d1 <= 0 or d2 <= 0:
            continue
        if max_diam is not None and (d1 > max_diam or d2 > max_diam):
            continue
        pairs.append((e1, e2))
    return pairs


def measure_pairs(metric_map, pairs, generator="explicit", delta=0.0, seed=None):
    """Ratio profile of a map over explicit pair supports.

    Profiles are closed under swapping the two sets; collapsed images are
    flagged as u = inf, not dropped.  The trivial pair E = E' is always
    included, anchoring eta(1) >= 1.
    """
    space = metric_map.source
    samples = [(1.0, 1.0)]
    for e1, e2 in pairs:
        d1, d2 = space.diam(e1), space.diam(e2)
        if d1 <= 0 or d2 <= 0:
            continue
        f1, f2 = metric_map.image_diam(e1), metric_map.image_diam(e2)
        for (da, db, fa, fb) in ((d1, d2, f1, f2), (d2, d1, f2, f1)):
            t = da / db
            if fb <= 0.0:
                samples.append((t, math.inf))
            elif fa <= 0.0:
                continue  # the swapped twin carries the evidence
            else:
                samples.append((t, fa / fb))
    return DistortionProfile(samples=samples, generator=generator,
                             delta=float(delta),
                             seed=None if seed is None else int(seed),
                             label=metric_map.label)


def sample_continuum_pairs(space, metric_map, delta, count,
                           generator="chain_pairs", seed=None, max_diam=None):
    """Sample intersecting delta-connected pairs and their image ratios."""
    pairs = generate_pair_family(space, delta, count, generator=generator,
                                 seed=seed, max_diam=max_diam)
    return measure_pairs(metric_map, pairs, generator=generator,
                         delta=delta, seed=seed)


DEFAULT_Q_GRID = tuple(round(0.05 * k, 2) for k in range(1, 21))


def fit_power_gauge(profile, q_grid=DEFAULT_Q_GRID):
    """Minimal power-gauge constants over an exponent grid.

    C(q) is the smallest constant covering every finite sample at exponent
    q; the best gauge takes the largest exponent among (near-)minimizers,
    so exact data recovers its exponent instead of an arbitrary tie.  Any
    collapsed image (u = inf) yields not-BQS evidence instead of a gauge.
    """
    finite = profile.finite_samples
    if not profile.samples:
        raise SpaceError("empty profile")
    ts = np.array([t for t, _ in finite])
    us = np.array([u for _, u in finite])
    c_of_q = []
    for q in q_grid:
        if not 0.0 < q <= 1.0:
            raise SpaceError("q grid must lie in (0, 1]")
        denom = np.maximum(ts ** q, ts ** (1.0 / q))
        c_of_q.append((float(q), float(np.max(us / denom)) if len(us) else 1.0))
    if profile.degenerate_count > 0:
        return GaugeFit(c_of_q=c_of_q, best=None, verdict="not-bqs-evidence")
    c_min = min(c for _, c in c_of_q)
    best_q, best_c = max((q, c) for q, c in c_of_q if c <= c_min * (1.0 + 1e-9))
    gauge = PowerGauge(C=max(best_c, 1.0), q=best_q)
    # the fitted constant must cover its own samples
    assert np.all(us <= gauge(ts) * (1.0 + 1e-9))
    return GaugeFit(c_of_q=c_of_q, best=gauge, verdict="bqs")


# ---------------------------------------------------------------------------
# Koebe-type containment check
# ---------------------------------------------------------------------------


@dataclass
class KoebeBall:
    center: int
    radius: float
    passed: bool
    vacuous: bool
    margin: float


@dataclass
class KoebeReport:
    c0: float
    balls: list
    pass_fraction: float
    worst_margin: float


def koebe_check(metric_map, ball_samples, eta_gauge, lam):
    """Image-ball containment test with c0 = 1 / (7*eta(2*lam^2)*eta(2)*lam).

    For each sampled ball B(x, r), every target sample within
    c0 * diam(fB) - 2*rho_target of f(x) must be matched by an image of B;
    matching allows 2*rho_target since sample-level containment cannot be
    sharper than resolution.  Meaningful for maps that are discrete and
    open on the sampled region; the caller vouches for that.
    """
    if eta_gauge.C < 1.0:
        raise MapError("gauge constant below 1")
    src, tgt = metric_map.source, metric_map.target
    c0 = 1.0 / (7.0 * float(eta_gauge(2.0 * lam * lam)) * float(eta_gauge(2.0)) * lam)
    tol = 2.0 * tgt.rho
    balls = []
    for x, r in ball_samples:
        x = int(x)
        ids = src.neighbors_within(x, r, strict=True)
        img = metric_map.image_ids(ids)
        dfb = tgt.diam(img)
        fx = int(metric_map.assignment[x])
        r_req = c0 * dfb - tol
        if r_req <= 0.0 or len(img) < 2:
            balls.append(KoebeBall(x, float(r), True, True, float(-r_req)))
            continue
        cand = tgt.neighbors_within(fx, r_req)
        d = tgt.dist_cross(cand, img).min(axis=1)
        margin = float((tol - d).min()) if len(cand) else tol
        balls.append(KoebeBall(x, float(r), bool((d <= tol).all()), False, margin))
    n_pass = sum(b.passed for b in balls)
    return KoebeReport(c0=float(c0), balls=balls,
                       pass_fraction=n_pass / max(len(balls), 1),
                       worst_margin=min((b.margin for b in balls), default=0.0))


# ---------------------------------------------------------------------------
# composition check
# ---------------------------------------------------------------------------


def compose_metric_maps(g, f):
    """g after f at the sample level."""
    if g.source is not f.target:
        raise MapError("incompatible map chain: g.source must be f.target")
    return MetricMap(source=f.source, target=g.target,
                     assignment=g.assignment[f.assignment],
                     label=f"{g.label}*{f.label}")


def compose_check(f, g, delta, count, seed=None, generator="chain_pairs"):
    """Check the fitted gauge of g∘f against the composition of gauges.

    One shared family of pairs is sampled on the source of f.  The gauge
    of f is fitted on the source ratios (t, u_f); the gauge of g on the
    image ratios (u_f, u_h) of the same pairs; and every composite sample
    must satisfy u_h <= eta_g(eta_f(t)) pointwise.
    """
    h = compose_metric_maps(g, f)
    pairs = generate_pair_family(f.source, delta, count, generator=generator,
                                 seed=seed)
    prof_f = measure_pairs(f, pairs, generator=generator, delta=delta, seed=seed)
    prof_h = measure_pairs(h, pairs, generator=generator, delta=delta, seed=seed)
    # g sees the f-images of the same pair family
    g_samples = []
    space = f.source
    for e1, e2 in pairs:
        d1, d2 = f.image_diam(e1), f.image_diam(e2)
        h1, h2 = h.image_diam(e1), h.image_diam(e2)
        for (da, db, ha, hb) in ((d1, d2, h1, h2), (d2, d1, h2, h1)):
            if db <= 0 or da <= 0:
                continue
            g_samples.append((da / db, ha / hb if hb > 0 else math.inf))
    prof_g = DistortionProfile(samples=[(1.0, 1.0)] + g_samples,
                               generator=generator, delta=float(delta),
                               seed=None if seed is None else int(seed),
                               label=g.label)
    fit_f, fit_g, fit_h = (fit_power_gauge(p) for p in (prof_f, prof_g, prof_h))
    if None in (fit_f.best, fit_g.best, fit_h.best):
        return {"dominated": False, "max_ratio": math.inf,
                "fits": (fit_f, fit_g, fit_h),
                "verdicts": (fit_f.verdict, fit_g.verdict, fit_h.verdict)}
    ratios = [u / float(fit_g.best(fit_f.best(t)))
              for t, u in prof_h.finite_samples]
    return {"dominated": max(ratios) <= 1.0 + 1e-9,
            "max_ratio": float(max(ratios)),
            "fits": (fit_f, fit_g, fit_h),
            "verdicts": (fit_f.verdict, fit_g.verdict, fit_h.verdict)}


def profile_to_csv(profile):
    lines = ["t,u,generator,seed"]
    seed = "" if profile.seed is None else profile.seed
    for t, u in profile.samples:
        u_str = "inf" if not math.isfinite(u) else f"{u:.12g}"
        lines.append(f"{t:.12g},{u_str},{profile.generator},{seed}")
    return "\n".join(lines) + "\n"
