"""Boundary traces of filling maps.

The trace follows the centered geodesic of each finest-net source point
through the vertex map and reads off the center of the deepest image
vertex.  The per-point residual 3*(A_t + 1) * t**(H - l) + rho_target
bounds how far that truncated read-off can sit from the true limit, with
H the observed stability constant of image paths against centered target
geodesics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hyperfill.filling import FillingError, centered_geodesic
from hyperfill.distortion import MetricMap, fit_power_gauge, sample_continuum_pairs
from hyperfill.extension import estimate_vqi, level_displacement
from hyperfill.spaces import FiniteMetricSpace, delta_components


class DegenerateMapError(RuntimeError):
    """The filling map does not descend; no boundary trace exists."""


@dataclass
class TraceReport:
    source_points: np.ndarray      # finest-net source sample ids
    assignment: np.ndarray         # matched target sample ids
    residual: np.ndarray           # per-point localization bound
    H_hat: float
    image_levels: np.ndarray       # level of the deepest image vertex per point
    round_trip_error: float | None = None

    def lookup(self):
        return dict(zip(self.source_points.tolist(), self.assignment.tolist()))


def _image_path(filling_map, geod):
    return filling_map.assignment[geod.vertices]


def _hausdorff(D, a_ids, b_ids):
    sub = D[np.ix_(a_ids, b_ids)]
    return float(max(sub.min(axis=1).max(), sub.min(axis=0).max()))


def estimate_H(filling_map, geodesics):
    """Worst Hausdorff distance between image paths and centered geodesics.

    Each sampled source geodesic is pushed through the map; the comparison
    geodesic is centered at the deepest image vertex's center and truncated
    at that vertex's level, since deeper levels are unreachable through the
    map at this truncation.
    """
    if not geodesics:
        raise FillingError("empty geodesic sample")
    tgt = filling_map.target
    D = tgt.dist_matrix()
    worst = 0.0
    per_geod = []
    for g in geodesics:
        img = _image_path(filling_map, g)
        end = int(img[-1])
        anchor = int(tgt.center[end])
        sigma = centered_geodesic(tgt, anchor)
        cut = int(tgt.level[end])
        h = _hausdorff(D, np.unique(img), np.unique(sigma.vertices[:cut + 1]))
        per_geod.append(h)
        worst = max(worst, h)
    return float(worst), per_geod


def trace(filling_map, geodesics=None):
    """Boundary trace over the finest source net.

    Requires a non-degenerate map: the fitted level slope must be positive
    and the VQI fit must stay finite at the widest beta.
    """
    src, tgt = filling_map.source, filling_map.target
    disp = level_displacement(filling_map)
    if disp.degenerate:
        raise DegenerateMapError("image levels do not grow along the source")
    points = src.level_centers(src.N).astype(np.int64)
    if geodesics is None:
        geodesics = [centered_geodesic(src, int(z)) for z in points]
    vqi = estimate_vqi(filling_map, geodesics)
    if not math.isfinite(vqi.pareto[-1][1]):
        raise DegenerateMapError("no finite quasi-isometry envelope at max beta")
    H_hat, _ = estimate_H(filling_map, geodesics)
    assignment = np.empty(len(points), dtype=np.int64)
    residual = np.empty(len(points), dtype=float)
    image_levels = np.empty(len(points), dtype=np.int64)
    A_t = tgt.A_s
    t = tgt.s
    for i, g in enumerate(geodesics):
        end = int(filling_map.assignment[g[src.N]])
        lw = int(tgt.level[end])
        assignment[i] = int(tgt.center[end])  # centers are target samples
        image_levels[i] = lw
        residual[i] = 3.0 * (A_t + 1.0) * t ** (H_hat - lw) + tgt.space.rho
    return TraceReport(source_points=points, assignment=assignment,
                       residual=residual, H_hat=H_hat,
                       image_levels=image_levels)


def round_trip_report(metric_map, source_filling, target_filling):
    """Lift a point map, trace it back, and compare against the original."""
    from hyperfill.extension import fill_map

    phi = fill_map(metric_map, source_filling, target_filling)
    rep = trace(phi)
    tgt_space = target_filling.space
    errs = np.array([
        tgt_space.dist(int(rep.assignment[i]),
                       int(metric_map.assignment[int(p)]))
        for i, p in enumerate(rep.source_points)])
    rep.round_trip_error = float(errs.max())
    return rep.round_trip_error, errs, rep, phi


def round_trip(metric_map, source_filling, target_filling):
    """Max distance between the trace of the lift and the original map."""
    err, _, _, _ = round_trip_report(metric_map, source_filling, target_filling)
    return err


def trace_multiplicity(report, source_space, target_space, tolerance=None,
                       target_points=None, per_target=False):
    """Max number of tolerance-separated source clusters over one target point.

    The default tolerance 4 * max(residual) is resolution-honest but very
    conservative at shallow depths; callers probing specific geometry
    should pass a scale-matched tolerance.
    """
    if tolerance is None:
        tolerance = 4.0 * float(report.residual.max())
    if target_points is None:
        target_points = np.unique(report.assignment)
    best, per = 0, {}
    for y in target_points:
        d = target_space.dist_cross([int(y)], report.assignment)[0]
        hit = report.source_points[d <= tolerance]
        if hit.size == 0:
            continue
        if hit.size == 1:
            count = 1
        else:
            count = len(delta_components(source_space, hit, tolerance))
        per[int(y)] = count
        best = max(best, count)
    if per_target:
        return best, per
    return best


def _restricted_space(space, ids, label):
    ids = np.asarray(ids, dtype=np.int64)
    if space.coords is not None:
        sub_e = space.coords[ids]
        from scipy.spatial.distance import cdist as _cdist
        raw = _cdist(sub_e, sub_e).max()
        return FiniteMetricSpace(label=label, rho=min(0.249, space.rho * 2 + 1e-9),
                                 coords=sub_e, exponent=space.exponent,
                                 scale=raw ** space.exponent,
                                 spec={"generator": "restricted"}), ids
    sub = space.dmat[np.ix_(ids, ids)]
    return FiniteMetricSpace(label=label, rho=min(0.249, space.rho * 2 + 1e-9),
                             dmat=sub / sub.max(),
                             spec={"generator": "restricted"}), ids


def trace_as_metric_map(report, source_space, target_space):
    """The trace as a point map between net-restricted spaces.

    Both restrictions renormalize their own diameters; distortion ratios
    are scale-free so gauge fitting is unaffected.
    """
    src_ids = report.source_points
    tgt_ids = np.unique(report.assignment)
    sub_src, _ = _restricted_space(source_space, src_ids, "trace-source")
    sub_tgt, _ = _restricted_space(target_space, tgt_ids, "trace-target")
    pos = {int(p): i for i, p in enumerate(tgt_ids)}
    assignment = np.array([pos[int(a)] for a in report.assignment], dtype=np.int64)
    return MetricMap(source=sub_src, target=sub_tgt, assignment=assignment,
                     label="trace")


def trace_bqs(report, source_space, target_space, delta=None, count=200,
              seed=0, generator="chain_pairs"):
    """Gauge-fit the trace assignment; inf ratios give not-BQS evidence."""
    m = trace_as_metric_map(report, source_space, target_space)
    if delta is None:
        delta = 2.0 * m.source.rho
    profile = sample_continuum_pairs(m.source, m, delta, count,
                                     generator=generator, seed=seed)
    return fit_power_gauge(profile), profile


@dataclass
class SurjectivityReport:
    radii: list
    deficiency: float
    radius_growing: bool
    deficiency_small: bool
    verdict: str


def surjectivity_vs_coboundedness(filling_map, report=None, depths=None,
                                  small_deficiency=0.1):
    """Pair the coboundedness radii with the trace-image covering deficiency.

    Verdict "consistent-surjective" when radii are depth-stable and the
    trace image is dense; "consistent-non-surjective" when radii grow and
    the image leaves a gap; "inconsistent" otherwise.
    """
    from hyperfill.extension import cobounded_radius_series

    if report is None:
        report = trace(filling_map)
    tgt = filling_map.target
    if depths is None:
        depths = list(range(1, tgt.N + 1))
    radii = cobounded_radius_series(filling_map, depths)
    finest = tgt.level_centers(tgt.N)
    d = tgt.space.dist_cross(finest, np.unique(report.assignment))
    deficiency = float(d.min(axis=1).max())
    growing = len(radii) >= 3 and radii[-1] > radii[-2] > radii[-3]
    stable = radii[-1] <= radii[max(len(radii) - 3, 0)] + 1
    # the trace cannot cover finer than its deepest image scale
    scale_floor = 2.0 * tgt.s ** (-float(report.image_levels.min()))
    small = deficiency <= max(small_deficiency, scale_floor)
    if stable and small:
        verdict = "consistent-surjective"
    elif growing and not small:
        verdict = "consistent-non-surjective"
    else:
        verdict = "inconsistent"
    return SurjectivityReport(radii=radii, deficiency=deficiency,
                              radius_growing=growing, deficiency_small=small,
                              verdict=verdict)


@dataclass
class OpennessBall:
    center: int
    radius: float
    verified_radius: float
    image_diam: float
    ratio: float


def openness_probe(report, source_space, target_space, ball_samples,
                   tolerance=None, target_points=None):
    """Largest image-ball radius verified to be covered by trace images.

    For each source ball, finds the distance to the first target net point
    near trace(x) that is not within tolerance of trace(B); a ratio
    r' / diam(trace B) collapsing under refinement is evidence against
    openness.  Whether this ratio criterion converges to topological
    openness under refinement is an open conjecture; nothing asserts it.

    ``target_points`` are the candidate net points (default: the trace
    image); the tolerance defaults to the resolution floor 2 * rho so the
    trace localization error itself stays visible in the probe.
    """
    if tolerance is None:
        tolerance = 2.0 * target_space.rho
    if target_points is None:
        target_points = np.unique(report.assignment)
    target_points = np.asarray(target_points, dtype=np.int64)
    lut = report.lookup()
    balls = []
    for x, r in ball_samples:
        x = int(x)
        if x not in lut:
            raise FillingError(f"ball center {x} is not a finest-net point")
        d_src = source_space.dist_cross([x], report.source_points)[0]
        members = report.source_points[d_src <= r]
        timg = np.unique([lut[int(p)] for p in members])
        diam_t = target_space.diam(timg)
        fx = lut[x]
        d_t = target_space.dist_cross([fx], target_points)[0]
        order = np.argsort(d_t, kind="stable")
        cover = target_space.dist_cross(target_points, timg).min(axis=1)
        r_prime = float(d_t[order[-1]])
        for k in order:
            if cover[k] > tolerance:
                r_prime = float(d_t[k])
                break
        ratio = r_prime / diam_t if diam_t > 0 else 0.0
        balls.append(OpennessBall(center=x, radius=float(r),
                                  verified_radius=r_prime,
                                  image_diam=float(diam_t), ratio=float(ratio)))
    return balls
