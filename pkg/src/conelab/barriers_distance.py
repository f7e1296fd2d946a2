"""Neighborhoods adapted to the Hardt-Simon foliation, the distance D, and barriers.

Every surface here is invariant under the isometries of the cone and is handled
through its generating curves in the slices {y = const}. Inside a slice the
leaf lam^{1/W} H is written as a graph over the cone ray, so that barriers can
be evaluated on (y, R) product grids, R the coordinate along the ray.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import singer
from scipy import interpolate

from conelab.geometry_core import (
    ConeParams,
    GeometryError,
    ProfileCurve,
    generating_surface_mean_curvature,
    grid_derivatives,
    profile_to_graph,
    smoothstep_cutoff,
)
from conelab.hardt_simon import (
    HardtSimonError,
    HardtSimonProfile,
    SupersolutionField,
    build_F_a,
    foliation_leaf,
    graph_expansion_fit,
    homothety_field,
)
from conelab.jacobi_spectrum import indicial_polynomial
from conelab.link_smoothing import Leaves, hardt_simon_leaves, sigma0_curve
from conelab.log_perturbation import LogPerturbedSurface

logger = singer.get_logger()

DEFAULT_BETA = 0.1
BETA_CANDIDATES = (0.2, 0.1, 0.05, 0.025)
G_EXPONENT = 2.1
REGION = (0.25, 1.0)
SLICE_RANGE = (0.5, 1.0)
DISTANCE_RTOL = 1e-3
D_FLOOR = 1e-14
D_MAX = 1.0
PHI_LAMBDA_RANGE = 0.25
FOLIATION_C0 = 0.01
EPS0_SMALLNESS = 0.2
TIP_CLEARANCE = 1.2
TAIL_TERMS = 4
WIDTH = 5

Slices = Sequence[Tuple[float, ProfileCurve]]


@dataclass(frozen=True)
class YProfile:
    """A C^2 function of y, stored as samples and read through a cubic spline."""

    y: np.ndarray
    values: np.ndarray
    name: str = "samples"

    def __post_init__(self) -> None:
        if len(self.y) < 4 or len(self.y) != len(self.values):
            raise BarrierError("y-profile needs at least 4 matching samples")

        if np.any(np.diff(self.y) <= 0):
            raise BarrierError("y-profile samples must be increasing in y")

    def __call__(self, y: Union[float, np.ndarray], derivative: int = 0) -> np.ndarray:
        spline = interpolate.CubicSpline(self.y, self.values)
        return spline(np.asarray(y, dtype=float), derivative)

    @property
    def y_range(self) -> Tuple[float, float]:
        return float(self.y[0]), float(self.y[-1])

    @property
    def c2_norm(self) -> float:
        return max(float(np.max(np.abs(self(self.y, k)))) for k in range(3))

    @classmethod
    def constant(
        cls, value: float = 1.0, y_range: Tuple[float, float] = SLICE_RANGE, n: int = 64
    ) -> "YProfile":
        y = np.linspace(y_range[0], y_range[1], n)
        return cls(y=y, values=np.full(n, float(value)), name="constant")

    @classmethod
    def from_callable(
        cls,
        func: Callable[[np.ndarray], np.ndarray],
        y_range: Tuple[float, float],
        n: int = 257,
        name: str = "callable",
    ) -> "YProfile":
        y = np.linspace(y_range[0], y_range[1], n)
        return cls(y=y, values=np.asarray(func(y), dtype=float), name=name)

    @classmethod
    def from_mapping(cls, context: Mapping[str, Any]) -> "YProfile":
        kind = context.get("kind", "samples")
        if kind == "constant":
            y_range = tuple(context.get("y_range", SLICE_RANGE))
            return cls.constant(float(context.get("value", 1.0)), y_range)

        if kind == "samples":
            return cls(
                y=np.asarray(context["y"], dtype=float),
                values=np.asarray(context["f"], dtype=float),
            )

        if kind == "nonconcentration":
            return nonconcentration_profile(
                gamma=float(context.get("gamma", 0.1)),
                ratio=float(context.get("ratio", 1.0)),
            )

        raise BarrierError("unknown y-profile kind [{}]".format(kind))


def nonconcentration_profile(gamma: float = 0.1, ratio: float = 1.0) -> YProfile:
    """ratio^{1/9} y^{1/3} + (y - 1/2)^-1 + (1 - y)^-1 on (1/2 + gamma, 1 - gamma).

    `ratio` is delta / eps; the poles at both ends keep the barrier away from
    the slices bounding the region.
    """
    if not 0 < gamma < 0.25:
        raise BarrierError("gamma [{}] must lie in (0, 1/4)".format(gamma))

    def f(y: np.ndarray) -> np.ndarray:
        return ratio ** (1 / 9) * np.cbrt(y) + 1 / (y - 0.5) + 1 / (1 - y)

    return YProfile.from_callable(f, (0.5 + gamma, 1 - gamma), name="nonconcentration")


class _LeafChart:
    """A unit leaf H or H_- as a graph over the cone ray, with its fitted tail."""

    def __init__(self, profile: HardtSimonProfile, params: ConeParams) -> None:
        self.a, self.b = params.link_radii
        curve = profile.curve
        R = curve.u * self.a + curve.v * self.b
        if np.any(np.diff(R) <= 0):
            raise BarrierError("leaf is not a graph over the cone ray")

        self.profile = profile
        self.side = profile.side
        self.W = params.w_exponent
        self.mu = params.mu
        self.gamma = 2 * math.sqrt(params.indicial_radicand)
        fit = graph_expansion_fit(profile, extra_terms=TAIL_TERMS - 2)
        self.tail = np.array(fit.coefficients)
        self.x = np.log(R)
        self.rho_min = float(R[0])
        self.rho_blend = float(R[-1]) / 4
        offset = curve.u * self.b - curve.v * self.a
        self.spline = interpolate.CubicSpline(self.x, offset)
        self.decay = float(indicial_polynomial(params, "normal").roots[1])
        self.fields: Dict[float, interpolate.CubicSpline] = {}
        self.tails: Dict[float, float] = {}

    def add_field(self, F: SupersolutionField) -> None:
        # past its forcing, F_a - r^a is the decaying Jacobi field B r^decay
        self.fields[F.a] = interpolate.CubicSpline(self.x, F.values)
        self.tails[F.a] = float((F.values[-1] - F.r[-1] ** F.a) / F.r[-1] ** self.decay)

    def _data_x(self, rho: np.ndarray) -> np.ndarray:
        return np.log(np.clip(rho, self.rho_min, math.exp(self.x[-1])))

    def _unit(self, rho: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        x = self._data_x(rho)
        G0, G1, G2 = (self.spline(x, k) for k in range(3))
        data = (G0, G1 / rho, (G2 - G1) / rho**2)

        tail = [np.zeros_like(rho) for _ in range(3)]
        for k, c in enumerate(self.tail):
            e = self.mu - k * self.gamma
            tail[0] += c * rho**e
            tail[1] += c * e * rho ** (e - 1)
            tail[2] += c * e * (e - 1) * rho ** (e - 2)
        tail = [self.side * t for t in tail]

        chi = [
            smoothstep_cutoff(rho / self.rho_blend, k) / self.rho_blend**k
            for k in range(3)
        ]
        jump = [d - t for d, t in zip(data, tail)]
        return (
            tail[0] + chi[0] * jump[0],
            tail[1] + chi[0] * jump[1] + chi[1] * jump[0],
            tail[2] + chi[0] * jump[2] + 2 * chi[1] * jump[1] + chi[2] * jump[0],
        )

    def scale(self, lam: float) -> float:
        return abs(lam) ** (1 / self.W)

    def graph(
        self, lam: float, R: np.ndarray
    ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Offset over the ray of the leaf with parameter lam, and its R-derivatives."""
        s = self.scale(lam)
        g = np.zeros_like(R)
        dg = np.zeros_like(R)
        ddg = np.zeros_like(R)
        for k, c in enumerate(self.tail):
            e = self.mu - k * self.gamma
            weight = self.side * c * s ** (self.W + k * self.gamma)
            g += weight * R**e
            dg += weight * e * R ** (e - 1)
            ddg += weight * e * (e - 1) * R ** (e - 2)

        if s == 0:
            return g, dg, ddg

        rho = R / s
        near = rho < 2 * self.rho_blend
        if np.any(near):
            u0, u1, u2 = self._unit(rho[near])
            g[near] = s * u0
            dg[near] = u1
            ddg[near] = u2 / s
        return g, dg, ddg

    def field(self, a: float, lam: float, R: np.ndarray, g: np.ndarray) -> np.ndarray:
        """F_a on the leaf with parameter lam, continued past the data by its tail.

        Far out F_a = r^a + B s^(a - decay) r^decay on s H.
        """
        r = np.hypot(R, g)
        s = self.scale(lam)
        if s == 0:
            return r**a

        out = r**a + self.tails[a] * s ** (a - self.decay) * r**self.decay

        rho = R / s
        near = rho < 2 * self.rho_blend
        if np.any(near):
            chi = smoothstep_cutoff(rho[near] / self.rho_blend)
            inner = s**a * self.fields[a](self._data_x(rho[near]))
            out[near] = chi * inner + (1 - chi) * out[near]
        return out

    def tip_radius(self, lam: float) -> float:
        return TIP_CLEARANCE * self.rho_min * self.scale(lam)


def _charts(
    leaves: Leaves, exponents: Sequence[float], sides: Sequence[int], **kwargs: Any
) -> Dict[int, _LeafChart]:
    charts = {}
    for side, profile in zip((1, -1), leaves):
        if side not in sides:
            continue
        chart = _LeafChart(profile, leaves[0].params)
        for a in exponents:
            chart.add_field(build_F_a(a, profile, **kwargs))
        charts[side] = chart
    return charts


def leaf_parameter(points: np.ndarray, leaves: Leaves) -> np.ndarray:
    """lam with the point on lam^{1/W} H (lam > 0) or |lam|^{1/W} H_- (lam < 0).

    Points of the cone get lam = 0.
    """
    plus, minus = leaves
    params = plus.params
    points = np.atleast_2d(points)
    radius = np.hypot(points[:, 0], points[:, 1])
    gap = params.cone_angle - np.arctan2(points[:, 1], points[:, 0])

    lam = np.zeros(len(points))
    try:
        for profile, mask, sign in ((plus, gap > 0, 1.0), (minus, gap < 0, -1.0)):
            if np.any(mask):
                ratio = radius[mask] / profile.radius_at(np.abs(gap[mask]))
                lam[mask] = sign * ratio**params.w_exponent
    except HardtSimonError as exc:
        raise BarrierError(
            "point outside the foliated quadrant: {}".format(exc)
        ) from exc
    return lam


@dataclass(frozen=True)
class PhiLambda:
    lam: float
    s: np.ndarray
    r: np.ndarray
    values: np.ndarray
    linear: np.ndarray
    error: float
    bounds: Tuple[float, float]


def phi_lambda(
    lam: float, profile: HardtSimonProfile, stride: int = 20, window: float = 0.9
) -> PhiLambda:
    """(1 + lam) H as a normal graph over H, against lam X.n."""
    if abs(lam) > PHI_LAMBDA_RANGE:
        raise BarrierError(
            "|lam| [{}] beyond the graph range [{}]".format(abs(lam), PHI_LAMBDA_RANGE)
        )

    curve = profile.curve
    if lam == 0:
        zero = np.zeros(len(curve))
        return PhiLambda(
            lam=0.0,
            s=curve.s,
            r=curve.r,
            values=zero,
            linear=zero,
            error=0.0,
            bounds=(0.0, 0.0),
        )

    nodes = np.arange(stride, len(curve), stride)
    nodes = nodes[curve.r[nodes] <= window * curve.r[-1] / (1 + abs(lam))]
    scaled = ProfileCurve.from_points(
        (1 + lam) * curve.points[nodes], params=curve.params
    )
    try:
        graph = profile_to_graph(scaled, base=curve, tag="curve")
    except GeometryError as exc:
        raise BarrierError("(1 + lam) H is not a graph over H: {}".format(exc)) from exc

    homothety = interpolate.CubicSpline(curve.s, homothety_field(profile))
    linear = lam * homothety(graph.grid)
    r = np.interp(graph.grid, curve.s, curve.r)
    weighted = graph.values / lam * r**2
    return PhiLambda(
        lam=lam,
        s=graph.grid,
        r=r,
        values=graph.values,
        linear=linear,
        error=float(np.max(r**2 * np.abs(graph.values - linear))),
        bounds=(float(np.min(weighted)), float(np.max(weighted))),
    )


@dataclass(frozen=True)
class FoliationContainment:
    a: float
    lam: float
    c0: float
    c0_measured: float
    r: np.ndarray
    offsets: np.ndarray

    @property
    def holds(self) -> bool:
        return self.c0_measured >= self.c0


def foliation_containment(
    a: float,
    lam: float,
    leaves: Leaves,
    c0: float = FOLIATION_C0,
    stride: int = 20,
    window: float = 0.9,
) -> FoliationContainment:
    """Offsets of the leaf a + lam over the leaf a, against c0 min(lam r^-2, r)."""
    if lam <= 0:
        raise BarrierError("foliation step lam must be positive, got [{}]".format(lam))

    if a + lam == 0:
        raise BarrierError("leaf parameter a + lam = 0 is the cone itself")

    plus, minus = leaves
    outer = foliation_leaf(a + lam, plus, minus).curve
    inner = outer if a == 0 else foliation_leaf(a, plus, minus).curve
    nodes = np.arange(stride, len(outer), stride)
    nodes = nodes[outer.r[nodes] <= window * inner.r[-1]]
    sample = ProfileCurve.from_points(outer.points[nodes], params=outer.params)

    try:
        if a == 0:
            graph = profile_to_graph(sample, reach=2.0)
            r = graph.grid
            offsets = graph.values
        else:
            graph = profile_to_graph(sample, base=inner, tag="curve")
            r = np.interp(graph.grid, inner.s, inner.r)
            offsets = graph.values if a > 0 else -graph.values
    except GeometryError as exc:
        raise BarrierError(
            "leaf [{}] is not a graph over leaf [{}]: {}".format(a + lam, a, exc)
        ) from exc

    envelope = np.minimum(lam * r**-2.0, r)
    return FoliationContainment(
        a=a,
        lam=lam,
        c0=c0,
        c0_measured=float(np.min(offsets / envelope)),
        r=r,
        offsets=offsets,
    )


@dataclass(frozen=True)
class BaseSurface:
    """Comparison surface sampled along rays; points[i, j] lies on ray j."""

    points: np.ndarray
    delta: float
    params: ConeParams = field(default_factory=ConeParams)
    name: str = "cone"

    @classmethod
    def cone_over(
        cls, link: ProfileCurve, delta: float = 0.0, name: str = "V"
    ) -> "BaseSurface":
        if not link.is_link:
            raise BarrierError("a cone needs a link curve on the sphere")
        points = np.stack([0.1 * link.points, 2.0 * link.points])
        return cls(points=points, delta=delta, params=link.params, name=name)

    @classmethod
    def from_log_surface(
        cls, T: LogPerturbedSurface, log_lambda: float = 0.0
    ) -> "BaseSurface":
        return cls(
            points=math.exp(log_lambda) * T.points(),
            delta=T.link.delta,
            params=T.link.profile.params,
            name="Lambda T",
        )

    def scaled(self, factor: float) -> "BaseSurface":
        if factor <= 0:
            raise BarrierError("scale factor must be positive, got [{}]".format(factor))
        return replace(self, points=factor * self.points)

    def rotated(self, angle: float) -> "BaseSurface":
        """Rotation by angle in the (e1, e9) plane, applied on the e1 meridian.

        A point (u, v, y) is read as u e1 + v e5 + y e9; rays leaving the
        quadrant u > 0 are dropped.
        """
        u, v, y = np.moveaxis(self.points, -1, 0)
        c, s = math.cos(angle), math.sin(angle)
        points = np.stack((c * u - s * y, v, s * u + c * y), axis=-1)
        keep = np.all(points[..., 0] > 0, axis=0)
        return replace(
            self, points=points[:, keep], name="{} rotated".format(self.name)
        )

    def slice_delta(self, y: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        """The slice at height y is close to (delta y^3)^{1/W} H."""
        return self.delta * np.power(y, 3)

    def slice(self, y0: float) -> ProfileCurve:
        heights = self.points[:, :, 2]
        rising = np.all(np.diff(heights, axis=0) > 0, axis=0)
        cols = np.flatnonzero(rising & (heights[0] <= y0) & (heights[-1] >= y0))
        if len(cols) < 3:
            raise BarrierError("base [{}] has no slice at y [{}]".format(self.name, y0))

        pts = np.array(
            [
                [np.interp(y0, heights[:, j], self.points[:, j, k]) for k in (0, 1)]
                for j in cols
            ]
        )
        a, b = self.params.link_radii
        R = pts @ np.array([a, b])
        order = np.argsort(R)
        keep = np.concatenate(([True], np.diff(R[order]) > 1e-13))
        return ProfileCurve.from_points(pts[order][keep], params=self.params)


@dataclass(frozen=True)
class NeighborhoodSpec:
    beta: float
    d: float
    base: BaseSurface
    exponent: float = G_EXPONENT

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise BarrierError("beta must be positive, got [{}]".format(self.beta))

        if self.d < 0:
            raise BarrierError(
                "neighborhood size d must be >= 0, got [{}]".format(self.d)
            )

    def foliation_case(self, y: float) -> bool:
        return self.d >= self.beta * abs(self.base.slice_delta(y))

    def envelope(self, r: np.ndarray, y: float) -> np.ndarray:
        band = self.beta * abs(self.base.slice_delta(y))
        return np.minimum((band + self.d) * r**-2.0, self.d * r**-self.exponent)

    def bounding_leaves(
        self, y: float, leaves: Leaves
    ) -> Optional[Tuple[HardtSimonProfile, HardtSimonProfile]]:
        """The leaves +-(beta^-2 d)^{1/W} H bounding a foliation-case slice."""
        if not self.foliation_case(y) or self.d == 0:
            return None
        lam = self.d / self.beta**2
        plus, minus = leaves
        return foliation_leaf(lam, plus, minus), foliation_leaf(-lam, plus, minus)


@dataclass(frozen=True)
class _Samples:
    y: np.ndarray
    u: np.ndarray
    v: np.ndarray
    r: np.ndarray
    lam: np.ndarray
    offset: np.ndarray
    slice_delta: np.ndarray


def _samples(
    test: Slices, base: BaseSurface, leaves: Leaves, region: Tuple[float, float]
) -> _Samples:
    a, b = base.params.link_radii
    columns: Dict[str, List[np.ndarray]] = {
        k: [] for k in ("y", "u", "v", "r", "offset")
    }
    for y0, curve in test:
        if not SLICE_RANGE[0] < y0 < SLICE_RANGE[1]:
            raise BarrierError("slice y [{}] outside (1/2, 1)".format(y0))

        if curve.is_link:
            raise BarrierError("test slices must be planar profiles")

        full = np.hypot(curve.r, y0)
        keep = (full > region[0]) & (full < region[1])
        if not np.any(keep):
            continue

        u, v = curve.u[keep], curve.v[keep]
        R = u * a + v * b
        base_curve = base.slice(y0)
        base_R = base_curve.u * a + base_curve.v * b
        base_g = base_curve.u * b - base_curve.v * a
        inside = (R >= base_R[0]) & (R <= base_R[-1])
        offset = np.full(len(R), np.nan)
        offset[inside] = (
            u[inside] * b - v[inside] * a - np.interp(R[inside], base_R, base_g)
        )

        columns["y"].append(np.full(len(R), y0))
        columns["u"].append(u)
        columns["v"].append(v)
        columns["r"].append(R)
        columns["offset"].append(offset)

    if not columns["y"]:
        raise BarrierError(
            "test surface has no samples in the region {}".format(region)
        )

    data = {k: np.concatenate(v) for k, v in columns.items()}
    return _Samples(
        lam=leaf_parameter(np.column_stack((data["u"], data["v"])), leaves),
        slice_delta=np.asarray(base.slice_delta(data["y"])),
        **data,
    )


def _clearance(samples: _Samples, beta: float, d: float, exponent: float) -> np.ndarray:
    band = beta * np.abs(samples.slice_delta)
    foliation = d >= band
    out = np.empty(len(band))
    out[foliation] = d / beta**2 - np.abs(samples.lam[foliation])

    graph = ~foliation
    r = samples.r[graph]
    envelope = np.minimum((band[graph] + d) * r**-2.0, d * r**-exponent)
    gap = envelope - np.abs(samples.offset[graph])
    out[graph] = np.where(np.isnan(gap), -np.inf, gap)
    return out


@dataclass(frozen=True)
class Containment:
    contained: bool
    margin: float
    worst: Tuple[float, float, float]


def _containment(
    samples: _Samples, beta: float, d: float, exponent: float
) -> Containment:
    clearance = _clearance(samples, beta, d, exponent)
    k = int(np.argmin(clearance))
    return Containment(
        contained=bool(clearance[k] >= 0),
        margin=float(clearance[k]),
        worst=(float(samples.y[k]), float(samples.u[k]), float(samples.v[k])),
    )


def neighborhood_contains(
    spec: NeighborhoodSpec,
    test: Slices,
    leaves: Optional[Leaves] = None,
    region: Tuple[float, float] = REGION,
) -> Containment:
    leaves = leaves or hardt_simon_leaves(spec.base.params)
    samples = _samples(test, spec.base, leaves, region)
    return _containment(samples, spec.beta, spec.d, spec.exponent)


def foliation_neighborhood(d: float, test: Slices, leaves: Leaves) -> Containment:
    """Containment between the leaves +-d^{1/W} H in every slice."""
    if d < 0:
        raise BarrierError("neighborhood size d must be >= 0, got [{}]".format(d))

    points = np.concatenate([np.column_stack((c.u, c.v)) for _, c in test])
    heights = np.concatenate([np.full(len(c), y0) for y0, c in test])
    clearance = d - np.abs(leaf_parameter(points, leaves))
    k = int(np.argmin(clearance))
    return Containment(
        contained=bool(clearance[k] >= 0),
        margin=float(clearance[k]),
        worst=(float(heights[k]), float(points[k, 0]), float(points[k, 1])),
    )


@dataclass(frozen=True)
class DistanceResult:
    value: float
    achieved_at: Tuple[float, float, float]
    region: Tuple[float, float]
    iterations: int


def distance_D(
    test: Slices,
    base: BaseSurface,
    beta: float = DEFAULT_BETA,
    region: Tuple[float, float] = REGION,
    leaves: Optional[Leaves] = None,
    d_max: float = D_MAX,
    rtol: float = DISTANCE_RTOL,
    exponent: float = G_EXPONENT,
) -> DistanceResult:
    """Smallest d with the test slices inside N_{beta, d}(base), by log bisection."""
    leaves = leaves or hardt_simon_leaves(base.params)
    samples = _samples(test, base, leaves, region)

    top = _containment(samples, beta, d_max, exponent)
    if not top.contained:
        raise BarrierError(
            "out of range: test not contained in N_d for d <= [{}] "
            "(worst at {})".format(d_max, top.worst)
        )

    floor = _containment(samples, beta, D_FLOOR, exponent)
    if floor.contained:
        return DistanceResult(
            value=0.0, achieved_at=floor.worst, region=region, iterations=0
        )

    lo, hi = D_FLOOR, d_max
    iterations = 0
    while hi > lo * (1 + rtol):
        mid = math.sqrt(lo * hi)
        if _containment(samples, beta, mid, exponent).contained:
            hi = mid
        else:
            lo = mid
        iterations += 1

    worst = _containment(samples, beta, lo, exponent).worst
    logger.debug(
        "distance to [%s]: [%s] after [%s] bisections", base.name, hi, iterations
    )
    return DistanceResult(
        value=hi, achieved_at=worst, region=region, iterations=iterations
    )


@dataclass(frozen=True)
class TriangleCheck:
    distance: float
    moved_distance: float
    delta_gap: float
    angle: float

    @property
    def constant(self) -> float:
        """C in D(moved) <= C (D + |delta - delta'| + |angle|)."""
        scale = self.distance + self.delta_gap + abs(self.angle)
        return self.moved_distance / scale if scale > 0 else 0.0


def triangle_check(
    test: Slices,
    base: BaseSurface,
    delta: float,
    angle: float,
    beta: float = DEFAULT_BETA,
    leaves: Optional[Leaves] = None,
    region: Tuple[float, float] = REGION,
) -> TriangleCheck:
    """D to base against D to base moved to delta and rotated by angle."""
    leaves = leaves or hardt_simon_leaves(base.params)
    moved = replace(base, delta=delta).rotated(angle)
    check = TriangleCheck(
        distance=distance_D(test, base, beta, region, leaves).value,
        moved_distance=distance_D(test, moved, beta, region, leaves).value,
        delta_gap=abs(delta - base.delta),
        angle=angle,
    )
    logger.debug(
        "triangle check for delta [%s], angle [%s]: constant [%s]",
        delta,
        angle,
        check.constant,
    )
    return check


@dataclass(frozen=True)
class LawCheck:
    law: str
    passed: bool
    value: float


def graph_slices(
    d0: float,
    params: Optional[ConeParams] = None,
    heights: Sequence[float] = (0.6, 0.7, 0.8),
    exponent: float = G_EXPONENT,
) -> List[Tuple[float, ProfileCurve]]:
    """Slices of the graph of d0 R^-exponent over the cone."""
    params = params or ConeParams()
    a, b = params.link_radii
    R = np.geomspace(0.05, 0.8, 200)
    g = d0 * R**-exponent
    curve = ProfileCurve.from_points(
        np.column_stack((R * a + g * b, R * b - g * a)), params=params
    )
    return [(y, curve) for y in heights]


def foliation_laws(
    leaves: Optional[Leaves] = None,
    params: Optional[ConeParams] = None,
    beta: float = DEFAULT_BETA,
) -> List[LawCheck]:
    """Foliation, neighborhood and distance laws on a fixed set of sampled cases."""
    params = params or ConeParams()
    leaves = leaves or hardt_simon_leaves(params)
    checks = []

    for a, lam in ((0.0, 0.2), (1.0, 0.2)):
        report = foliation_containment(a, lam, leaves)
        checks.append(LawCheck("leaf_containment", report.holds, report.c0_measured))

    step = phi_lambda(0.01, leaves[0])
    checks.append(
        LawCheck(
            "phi_lambda_first_order",
            step.error <= 50 * 0.01**2 and step.bounds[0] > 0,
            step.error,
        )
    )

    base = BaseSurface.cone_over(sigma0_curve(params, 801), delta=1e-3)
    test = graph_slices(1e-5, params)
    contained = [
        neighborhood_contains(NeighborhoodSpec(beta, d, base), test, leaves).contained
        for d in np.geomspace(1e-7, 1e-2, 16)
    ]
    checks.append(
        LawCheck(
            "neighborhood_monotone",
            contained == sorted(contained) and contained[-1],
            float(sum(contained)),
        )
    )

    own = [(y, base.slice(y)) for y in (0.6, 0.7, 0.8)]
    floor = neighborhood_contains(NeighborhoodSpec(beta, D_FLOOR, base), own, leaves)
    checks.append(
        LawCheck(
            "neighborhood_intersection",
            floor.contained and not contained[0],
            floor.margin,
        )
    )

    value = distance_D(test, base, beta, leaves=leaves).value
    checks.append(LawCheck("distance_graph", abs(value / 1e-5 - 1) <= 1e-2, value))

    leaf = foliation_leaf(2e-3, *leaves).curve
    cone = replace(base, delta=0.0)
    leaf_distance = distance_D(
        [(y, leaf) for y in (0.6, 0.7, 0.8)], cone, beta, leaves=leaves
    ).value
    expected = beta**2 * 2e-3
    checks.append(
        LawCheck(
            "distance_leaf",
            abs(leaf_distance / expected - 1) <= 1e-2,
            leaf_distance,
        )
    )

    failed = [check.law for check in checks if not check.passed]
    if failed:
        logger.warning("foliation laws failed: [%s]", ", ".join(failed))
    return checks


def barrier_eps0(C_f: float, params: Optional[ConeParams] = None) -> float:
    """Largest eps keeping the barrier offset a fixed fraction of the leaf scale."""
    W = (params or ConeParams()).w_exponent
    return (EPS0_SMALLNESS / C_f) ** (W / (W - 1))


def tilted_cone_mean_curvature(
    eps: float, params: Optional[ConeParams] = None
) -> float:
    """|x| m of the graph of -eps r over the cone, a cone at a larger polar angle."""
    params = params or ConeParams()
    theta = params.cone_angle + math.atan(eps)
    return params.q / math.tan(theta) - params.p * math.tan(theta)


def _grid_mean_curvature(
    X: np.ndarray, hint: np.ndarray, y: np.ndarray, R: np.ndarray, params: ConeParams
) -> np.ndarray:
    """Mean curvature at every grid node; nan off the surface and at the grid edges."""
    d = grid_derivatives(X, y, np.log(R), WIDTH)
    out = np.full(X.shape[:2], np.nan)
    with np.errstate(invalid="ignore", divide="ignore"):
        m, _ = generating_surface_mean_curvature(
            d.point,
            d.d_a,
            d.d_b,
            d.d_aa,
            d.d_ab,
            d.d_bb,
            params,
            hint[np.ix_(d.rows, d.cols)],
        )
    out[np.ix_(d.rows, d.cols)] = m
    return out


def _leaf_grid(
    charts: Dict[int, _LeafChart], lam: np.ndarray, y: np.ndarray, R: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Points, unit normals, offsets and a validity mask of the slice leaves."""
    chart = next(iter(charts.values()))
    e_R = np.array([chart.a, chart.b])
    e_n = np.array([chart.b, -chart.a])

    shape = (len(y), len(R))
    points = np.zeros(shape + (3,))
    normals = np.zeros(shape + (3,))
    offsets = np.zeros(shape)
    valid = np.zeros(shape, dtype=bool)
    for i, (height, value) in enumerate(zip(y, lam)):
        leaf = charts[-1 if value < 0 else 1]
        g, dg, _ = leaf.graph(value, R)
        points[i, :, :2] = R[:, None] * e_R + g[:, None] * e_n
        points[i, :, 2] = height
        normals[i, :, :2] = (e_n[None, :] - dg[:, None] * e_R[None, :]) / np.sqrt(
            1 + dg**2
        )[:, None]
        offsets[i] = g
        valid[i] = R >= leaf.tip_radius(value)
    return points, normals, offsets, valid


@dataclass(frozen=True)
class BarrierX:
    f_spec: YProfile
    eps: float
    C_f: float
    r0: float
    form: str
    y: np.ndarray
    R: np.ndarray
    points: np.ndarray
    leaf: np.ndarray
    mc: np.ndarray
    margin: float
    margin_constant: float
    worst: Tuple[float, float]
    refined_margin: Optional[float] = None
    tangent_cone: Dict[float, float] = field(default_factory=dict)
    params: ConeParams = field(default_factory=ConeParams)

    @property
    def slices(self) -> List[Tuple[float, ProfileCurve]]:
        out = []
        for i, height in enumerate(self.y):
            pts = self.points[i]
            pts = pts[np.isfinite(pts[:, 0])]
            if len(pts) >= 3:
                curve = ProfileCurve.from_points(pts[:, :2], params=self.params)
                out.append((float(height), curve))
        return out

    def summary(self) -> Dict[str, Any]:
        return {
            "min_margin": self.margin,
            "worst_point": list(self.worst),
            "valid": bool(self.margin < 0),
            "margin_constant": self.margin_constant,
            "refined_margin": self.refined_margin,
        }


def _barrier_points(
    f_spec: YProfile,
    eps: float,
    C_f: float,
    form: str,
    charts: Dict[int, _LeafChart],
    params: ConeParams,
    y: np.ndarray,
    R: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    f = f_spec(y)
    W = params.w_exponent
    lam = eps * f**9 if form == "cubic" else eps * f**W
    base, normals, offsets, valid = _leaf_grid(charts, lam, y, R)

    B = np.zeros(valid.shape)
    for i, (value, fi) in enumerate(zip(lam, f)):
        leaf = charts[-1 if value < 0 else 1]
        if form == "cubic":
            B[i] = -C_f * eps * abs(fi) ** 3 * leaf.field(0.0, value, R, offsets[i])
            B[i] -= eps * leaf.field(1.0, value, R, offsets[i])
        else:
            B[i] = -C_f * eps * fi * leaf.field(params.mu + 2, value, R, offsets[i])

    X = base + B[..., None] * normals
    valid &= (X[..., 0] > 0) & (X[..., 1] > 0)
    X[~valid] = np.nan
    return X, normals, lam


def _sign_check(
    m: np.ndarray, region: np.ndarray, y: np.ndarray, R: np.ndarray, what: str
) -> Tuple[float, Tuple[float, float]]:
    valid = region & np.isfinite(m)
    if not np.any(valid):
        raise BarrierError("{}: no smooth samples in the checked region".format(what))

    masked = np.where(valid, m, -np.inf)
    i, j = np.unravel_index(int(np.argmax(masked)), m.shape)
    worst = (float(y[i]), float(R[j]))
    if m[i, j] >= 0:
        raise BarrierError(
            "{} has nonnegative mean curvature at y [{}], r [{}]: m = [{}]".format(
                what, worst[0], worst[1], m[i, j]
            ),
            worst=worst,
            value=float(m[i, j]),
        )
    return float(m[i, j]), worst


def _evaluate_X(
    f_spec: YProfile,
    eps: float,
    C_f: float,
    form: str,
    charts: Dict[int, _LeafChart],
    params: ConeParams,
    r0: float,
    n_y: int,
    n_r: int,
    r_min: float,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, float, Tuple]:
    y = np.linspace(*f_spec.y_range, n_y)
    R = np.geomspace(r_min, 2 * r0, n_r)
    X, normals, lam = _barrier_points(f_spec, eps, C_f, form, charts, params, y, R)
    m = _grid_mean_curvature(X, normals, y, R, params)
    margin, worst = _sign_check(m, (R <= r0)[None, :], y, R, "barrier X")
    return y, R, X, lam, m, margin, worst


def build_barrier_X(
    f_spec: YProfile,
    eps: float,
    params: Optional[ConeParams] = None,
    C_f: float = 10.0,
    r0: float = 0.5,
    form: Optional[str] = None,
    leaves: Optional[Leaves] = None,
    n_y: int = 64,
    n_r: int = 256,
    r_min: float = 1e-3,
    refine: bool = True,
) -> BarrierX:
    """Graph of -C_f eps |f|^3 F_0 - eps F_1 over (eps f^9)^{1/3} H in each slice.

    The general form, for cones with W != 3, is the graph of -C_f eps f F_{mu+2}
    over (eps f^W)^{1/W} H with f > 0.
    """
    params = params or ConeParams()
    W = params.w_exponent
    form = form or ("cubic" if abs(W - 3) < 1e-12 else "general")
    if form not in ("cubic", "general"):
        raise BarrierError("unknown barrier form [{}]".format(form))

    if form == "cubic" and abs(W - 3) >= 1e-12:
        raise BarrierError("cubic barrier needs w = 3, got [{}]".format(W))

    if eps <= 0:
        raise BarrierError("eps must be positive, got [{}]".format(eps))

    eps0 = barrier_eps0(C_f, params)
    if eps > eps0:
        raise BarrierError(
            "eps [{}] beyond eps0 [{}] for C_f [{}]".format(eps, eps0, C_f)
        )

    f = f_spec(f_spec.y)
    if form == "general" and np.any(f <= 0):
        raise BarrierError("general barrier needs f > 0")

    exponents = (0.0, 1.0) if form == "cubic" else (params.mu + 2,)
    sides = (1, -1) if np.any(f < 0) else (1,)
    charts = _charts(leaves or hardt_simon_leaves(params), exponents, sides)

    logger.info(
        "building barrier X: form [%s], eps [%s], C_f [%s], f [%s]",
        form,
        eps,
        C_f,
        f_spec.name,
    )
    y, R, X, lam, m, margin, worst = _evaluate_X(
        f_spec, eps, C_f, form, charts, params, r0, n_y, n_r, r_min
    )

    refined = None
    if refine:
        refined = _evaluate_X(
            f_spec, eps, C_f, form, charts, params, r0, 2 * n_y, 2 * n_r, r_min
        )[5]

    radius = np.hypot(X[..., 0], X[..., 1])
    valid = np.isfinite(m) & (R <= r0)[None, :]
    scaled = -m[valid] * radius[valid] ** (1 - params.mu) / eps

    cone = {}
    if form == "cubic":
        crossings = np.flatnonzero(np.sign(f[:-1]) * np.sign(f[1:]) < 0)
        for k in crossings:
            step = f_spec.y[k + 1] - f_spec.y[k]
            y0 = f_spec.y[k] - f[k] * step / (f[k + 1] - f[k])
            cone[float(y0)] = tilted_cone_mean_curvature(eps, params)

    return BarrierX(
        f_spec=f_spec,
        eps=eps,
        C_f=C_f,
        r0=r0,
        form=form,
        y=y,
        R=R,
        points=X,
        leaf=lam,
        mc=m,
        margin=margin,
        margin_constant=float(np.min(scaled)),
        worst=worst,
        refined_margin=refined,
        tangent_cone=cone,
        params=params,
    )


@dataclass(frozen=True)
class SandwichReport:
    c: float
    r0_prime: float
    holds: bool
    worst: float


def sandwich_report(
    X: BarrierX,
    c: float = 0.1,
    r0_prime: Optional[float] = None,
    leaves: Optional[Leaves] = None,
) -> SandwichReport:
    """Leaf parameters of X against (eps f^W +- c eps) on r <= r0_prime."""
    r0_prime = X.r0 if r0_prime is None else r0_prime
    mask = np.isfinite(X.points[..., 0]) & (X.R <= r0_prime)[None, :]
    if not np.any(mask):
        raise BarrierError("no samples of X below r0' [{}]".format(r0_prime))

    leaves = leaves or hardt_simon_leaves(X.params)
    lam = leaf_parameter(X.points[mask][:, :2], leaves)
    target = np.broadcast_to(X.leaf[:, None], mask.shape)[mask]
    worst = float(np.max(np.abs(lam - target)) / (c * X.eps))
    return SandwichReport(c=c, r0_prime=r0_prime, holds=worst <= 1, worst=worst)


def barrier_sandwich_check(
    X: BarrierX,
    c: float = 0.1,
    r0_prime: Optional[float] = None,
    leaves: Optional[Leaves] = None,
) -> bool:
    return sandwich_report(X, c, r0_prime, leaves).holds


def sandwich_radius(X: BarrierX, c: float, leaves: Leaves) -> float:
    """Largest grid radius r0' below which the sandwich holds in every slice."""
    finite = np.isfinite(X.points[..., 0])
    radius = 0.0
    for j, R in enumerate(X.R):
        if R > X.r0:
            break
        column = finite[:, j]
        if not np.any(column):
            continue
        lam = leaf_parameter(X.points[column, j, :2], leaves)
        if np.max(np.abs(lam - X.leaf[column])) > c * X.eps:
            break
        radius = float(R)
    return radius


@dataclass(frozen=True)
class GraphBarrierG:
    g_spec: YProfile
    delta: float
    beta: float
    eps: float
    exponent: float
    y: np.ndarray
    R: np.ndarray
    values: np.ndarray
    mc: np.ndarray
    valid: np.ndarray
    bounds: Tuple[float, float]
    margin: float
    margin_constant: float
    worst: Tuple[float, float]
    refined_margin: Optional[float] = None

    @property
    def constant(self) -> float:
        return max(self.bounds[1], 1 / self.bounds[0])

    def summary(self) -> Dict[str, Any]:
        refined = self.refined_margin
        return {
            "min_margin": self.margin,
            "worst_point": list(self.worst),
            "valid": bool(self.margin < 0 and (refined is None or refined < 0)),
            "bound_constant": self.constant,
            "margin_constant": self.margin_constant,
            "refined_margin": refined,
        }


@dataclass(frozen=True)
class _GraphSamples:
    y: np.ndarray
    R: np.ndarray
    G: np.ndarray
    valid: np.ndarray
    change: np.ndarray
    region: np.ndarray
    r: np.ndarray


def _evaluate_G(
    g_spec: YProfile,
    delta: float,
    eps: float,
    beta: float,
    exponent: float,
    charts: Dict[int, _LeafChart],
    params: ConeParams,
    r0: float,
    n_y: int,
    n_r: int,
    r_min: float,
) -> _GraphSamples:
    side = 1 if delta > 0 else -1
    y = np.linspace(*g_spec.y_range, n_y)
    R = np.geomspace(r_min, 2 * r0, n_r)
    lam = delta * y**3
    base, normals, offsets, valid = _leaf_grid(charts, lam, y, R)
    F = np.stack(
        [
            charts[side].field(-exponent, value, R, offsets[i])
            for i, value in enumerate(lam)
        ]
    )
    G = g_spec(y)[:, None] * F
    base[~valid] = np.nan

    graph = base + eps * G[..., None] * normals
    change = _grid_mean_curvature(graph, normals, y, R, params) - _grid_mean_curvature(
        base, normals, y, R, params
    )

    r = np.hypot(base[..., 0], base[..., 1])
    with np.errstate(invalid="ignore"):
        below = eps * G < beta * abs(delta) * r**-2.0
        region = (r < r0) & below & np.isfinite(change)
    if not np.any(region):
        raise BarrierError("validity region is empty for eps [{}]".format(eps))

    return _GraphSamples(
        y=y, R=R, G=G, valid=valid, change=change, region=region, r=r
    )


def build_graph_barrier_G(
    g_spec: YProfile,
    delta: float,
    beta: float = DEFAULT_BETA,
    eps: Optional[float] = None,
    r0: float = 0.1,
    exponent: float = G_EXPONENT,
    params: Optional[ConeParams] = None,
    leaves: Optional[Leaves] = None,
    n_y: int = 64,
    n_r: int = 256,
    r_min: float = 1e-3,
    refine: bool = True,
) -> GraphBarrierG:
    """G = g(y) F_{-exponent} on the slices (delta y^3)^{1/W} H, and the eps G graph.

    G lives on the slice model of T_delta: the leaf with parameter delta y^3
    in every y slice. The sign test is on the mean curvature of the eps G
    graph minus that of the slice surface itself, on {r < r0} intersected
    with {eps G < beta |delta| r^-2}, and is repeated on a grid refined twice
    in both directions.
    """
    if not isinstance(delta, (int, float)):
        raise BarrierError("graph barrier is built on the slice model: pass delta")
    if delta == 0:
        raise BarrierError("graph barrier needs delta != 0")

    values = g_spec(g_spec.y)
    if np.any(values <= 0):
        raise BarrierError("g must be positive on its interval")

    params = params or ConeParams()
    W = params.w_exponent
    eps = 1e-3 * beta * abs(delta) / float(np.max(values)) if eps is None else eps
    side = 1 if delta > 0 else -1
    leaves = leaves or hardt_simon_leaves(params)

    # the forcing of F stays inside the solved part of the leaf
    s_min = (abs(delta) * g_spec.y_range[0] ** 3) ** (1 / W)
    profile = leaves[0] if side > 0 else leaves[1]
    cutoff = min(r0 / s_min, profile.curve.r[-1] / 8)
    charts = _charts(leaves, (-exponent,), (side,), cutoff_radius=cutoff)

    samples = _evaluate_G(
        g_spec, delta, eps, beta, exponent, charts, params, r0, n_y, n_r, r_min
    )
    region, r, G, change = samples.region, samples.r, samples.G, samples.change
    margin, worst = _sign_check(change, region, samples.y, samples.R, "graph of eps G")

    refined = None
    if refine:
        fine = _evaluate_G(
            g_spec,
            delta,
            eps,
            beta,
            exponent,
            charts,
            params,
            r0,
            2 * n_y,
            2 * n_r,
            r_min,
        )
        refined = _sign_check(
            fine.change, fine.region, fine.y, fine.R, "refined graph of eps G"
        )[0]

    g_grid = np.broadcast_to(g_spec(samples.y)[:, None], G.shape)
    ratio = G[region] / (g_grid[region] * r[region] ** -exponent)
    scaled = -change[region] * r[region] ** (exponent + 2) / (eps * g_grid[region])

    logger.info(
        "graph barrier G for delta [%s], beta [%s]: margin [%s] on [%s] samples",
        delta,
        beta,
        margin,
        int(np.count_nonzero(region)),
    )
    return GraphBarrierG(
        g_spec=g_spec,
        delta=delta,
        beta=beta,
        eps=eps,
        exponent=exponent,
        y=samples.y,
        R=samples.R,
        values=np.where(samples.valid, G, np.nan),
        mc=change,
        valid=region,
        bounds=(float(np.min(ratio)), float(np.max(ratio))),
        margin=margin,
        margin_constant=float(np.min(scaled)),
        worst=worst,
        refined_margin=refined,
    )


def select_beta(
    g_spec: YProfile,
    delta: float,
    candidates: Sequence[float] = BETA_CANDIDATES,
    leaves: Optional[Leaves] = None,
    **kwargs: Any,
) -> float:
    """Largest candidate beta with a negative G barrier at eps = beta |delta| / 2."""
    leaves = leaves or hardt_simon_leaves()
    for beta in sorted(candidates, reverse=True):
        eps = 0.5 * beta * abs(delta) / float(np.max(g_spec(g_spec.y)))
        try:
            build_graph_barrier_G(
                g_spec, delta, beta=beta, eps=eps, leaves=leaves, **kwargs
            )
        except BarrierError as exc:
            logger.debug("beta [%s] rejected: %s", beta, exc)
            continue
        return beta

    raise BarrierError(
        "no beta in {} keeps the graph barrier negative".format(candidates)
    )


class BarrierError(Exception):
    """Barrier or neighborhood evaluation failed"""

    def __init__(
        self,
        message: str,
        worst: Optional[Tuple[float, float]] = None,
        value: Optional[float] = None,
    ) -> None:
        super().__init__(message)
        self.worst = worst
        self.value = value
