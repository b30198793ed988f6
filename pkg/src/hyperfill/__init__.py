"""Truncated hyperbolic fillings of discretized compact metric spaces.

The package builds layered incidence graphs over multi-scale nets of a
finite metric sample, lifts point maps between two such samples to vertex
maps between their fillings, and pushes filling maps back down to boundary
traces.  Everything is deterministic for fixed inputs and seeds.
"""

from hyperfill.spaces import (
    FiniteMetricSpace,
    DeltaContinuum,
    BoundedTurningEstimate,
    make_space,
    space_from_spec,
    delta_components,
    hull_between,
    mazurkiewicz_dist,
    estimate_bounded_turning,
)
from hyperfill.filling import (
    Filling,
    VerticalGeodesic,
    HyperbolicityReport,
    build_filling,
    graph_dist,
    gromov_product,
    gromov_product_comparison,
    hyperbolicity,
    centered_geodesic,
    geodesic_fan,
    shadow,
    shadow_bound,
    separated_geodesics,
    max_enclosing_vertex,
)
from hyperfill.distortion import (
    MetricMap,
    DistortionProfile,
    PowerGauge,
    GaugeFit,
    builtin_map,
    sample_continuum_pairs,
    fit_power_gauge,
    koebe_check,
    compose_check,
)
from hyperfill.extension import (
    FillingMap,
    VqiReport,
    MultiplicityReport,
    fill_map,
    pushforward_map,
    compose_filling_maps,
    default_geodesic_sample,
    estimate_vqi,
    multiplicity,
    cobounded_radius,
    promote_eventual,
    level_displacement,
)
from hyperfill.trace import (
    TraceReport,
    DegenerateMapError,
    estimate_H,
    trace,
    round_trip,
    round_trip_report,
    trace_multiplicity,
    trace_bqs,
    trace_as_metric_map,
    surjectivity_vs_coboundedness,
    openness_probe,
)

__version__ = "0.1.0"
