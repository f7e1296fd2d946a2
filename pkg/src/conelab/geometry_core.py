"""Equivariant reduction of O(p+1)xO(q+1)-invariant hypersurfaces.

An invariant hypersurface is generated by a curve in the quadrant
{u, v >= 0}, u = |x'|, v = |x''|. Links of cylinders C x R are generated by
curves on the unit sphere of (u, v, y) space. Mean curvature is reported as
m = <H, n>, so that a normal graph f has first variation dm = L f.
"""

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import singer
from scipy import interpolate, optimize, sparse, special

logger = singer.get_logger()

AXIS_TOL = 1e-12
PROFILE_COLUMNS = "s u v y"


@dataclass(frozen=True)
class ConeParams:
    p: int = 3
    q: int = 3
    k: int = 0

    def __post_init__(self) -> None:
        if self.p < 2 or self.q < 2:
            raise GeometryError(
                "sphere dimensions must be at least 2, got [{}, {}]".format(
                    self.p, self.q
                )
            )

        if self.k < 0:
            raise GeometryError("cylinder factor must be >= 0, got [{}]".format(self.k))

        if self.indicial_radicand < 0:
            raise GeometryError(
                "cone over S^{} x S^{} has complex growth rates".format(self.p, self.q)
            )

    @property
    def ambient_dim(self) -> int:
        return self.p + self.q + 2 + self.k

    @property
    def cone_dim(self) -> int:
        return self.p + self.q + 1

    @property
    def link_radii(self) -> Tuple[float, float]:
        n = self.p + self.q
        return math.sqrt(self.p / n), math.sqrt(self.q / n)

    @property
    def link_curvature_sq(self) -> Fraction:
        """|A|^2 of the minimal product link S^p(a) x S^q(b) in the unit sphere."""
        n = self.p + self.q
        a_sq, b_sq = Fraction(self.p, n), Fraction(self.q, n)
        return self.p * b_sq / a_sq + self.q * a_sq / b_sq

    @property
    def indicial_shift(self) -> float:
        return (self.cone_dim - 2) / 2

    @property
    def indicial_radicand(self) -> float:
        return self.indicial_shift**2 - self.link_curvature_sq

    @property
    def mu(self) -> float:
        return -self.indicial_shift + math.sqrt(self.indicial_radicand)

    @property
    def w_exponent(self) -> float:
        return 1.0 - self.mu

    @property
    def cone_angle(self) -> float:
        """Polar angle of the cone ray in the (u, v) quadrant."""
        return math.atan(math.sqrt(self.q / self.p))


@dataclass(frozen=True)
class ProfileCurve:
    """Sampled generating curve; y present means a link curve on the sphere."""

    s: np.ndarray
    u: np.ndarray
    v: np.ndarray
    params: ConeParams = field(default_factory=ConeParams)
    y: Optional[np.ndarray] = None
    orientation: int = 1

    def __post_init__(self) -> None:
        n = len(self.s)
        if n < 3:
            raise GeometryError("profile needs at least 3 points, got [{}]".format(n))

        lengths = {len(self.u), len(self.v)}
        if self.is_link:
            lengths.add(len(self.y))
        if lengths != {n}:
            raise GeometryError("profile columns have mismatched lengths")

        if np.any(np.diff(self.s) <= 0):
            raise GeometryError("arclength parameter must be strictly increasing")

        if np.any(self.u < 0) or np.any(self.v < 0):
            raise GeometryError("graph leaves quadrant: negative orbit radius")

        if self.orientation not in (1, -1):
            raise GeometryError(
                "orientation must be +1 or -1, got [{}]".format(self.orientation)
            )

    @classmethod
    def from_points(
        cls,
        points: np.ndarray,
        params: Optional[ConeParams] = None,
        orientation: int = 1,
    ) -> "ProfileCurve":
        points = np.asarray(points, dtype=float)
        chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
        s = np.concatenate(([0.0], np.cumsum(chords)))
        u = np.clip(points[:, 0], 0.0, None)
        v = np.clip(points[:, 1], 0.0, None)
        y = points[:, 2].copy() if points.shape[1] == 3 else None

        return cls(
            s=s,
            u=u,
            v=v,
            params=params or ConeParams(),
            y=y,
            orientation=orientation,
        )

    @property
    def is_link(self) -> bool:
        return self.y is not None

    @property
    def points(self) -> np.ndarray:
        columns = [self.u, self.v] + ([self.y] if self.is_link else [])
        return np.column_stack(columns)

    @property
    def r(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    @property
    def rho(self) -> np.ndarray:
        if not self.is_link:
            return self.r
        return np.sqrt(self.u**2 + self.v**2 + self.y**2)

    def with_orientation(self, orientation: int) -> "ProfileCurve":
        return replace(self, orientation=orientation)

    def swapped(self) -> "ProfileCurve":
        """Image under x' <-> x''; orientation is negated so m is preserved."""
        return replace(
            self, u=self.v.copy(), v=self.u.copy(), orientation=-self.orientation
        )

    def __len__(self) -> int:
        return len(self.s)


@dataclass(frozen=True)
class GraphOverCone:
    """Normal-graph offsets over a base surface.

    `grid` holds radii when the base is the cone and the base parameter
    (arclength or polar angle) for every other base.
    """

    grid: np.ndarray
    values: np.ndarray
    base: str = "cone"
    base_curve: Optional[ProfileCurve] = None
    weight_meta: Optional[object] = None
    params: ConeParams = field(default_factory=ConeParams)

    def __post_init__(self) -> None:
        if len(self.grid) != len(self.values):
            raise GeometryError("graph grid and values have mismatched lengths")

        if np.any(np.diff(self.grid) <= 0):
            raise GeometryError("graph grid must be strictly increasing")

        if not np.all(np.isfinite(self.values)):
            raise GeometryError("graph values must be finite")

    @classmethod
    def from_rf(
        cls, r: np.ndarray, f: np.ndarray, params: Optional[ConeParams] = None
    ) -> "GraphOverCone":
        """Graph of r f(r) over C, the form used for the Hardt-Simon expansion."""
        r = np.asarray(r, dtype=float)
        return cls(
            grid=r,
            values=r * np.asarray(f, dtype=float),
            params=params or ConeParams(),
        )


def sphere_volume(n: int) -> float:
    """Volume of the unit n-sphere."""
    return 2 * math.pi ** ((n + 1) / 2) / special.gamma((n + 1) / 2)


def orbit_volume(
    u: Union[float, np.ndarray], v: Union[float, np.ndarray], params: ConeParams
) -> Union[float, np.ndarray]:
    c = sphere_volume(params.p) * sphere_volume(params.q)
    return c * np.power(u, params.p) * np.power(v, params.q)


def link_volume(params: ConeParams) -> float:
    """Volume of the link S^p(a) x S^q(b) of the cone."""
    a, b = params.link_radii
    return float(orbit_volume(a, b, params))


def smoothstep_cutoff(
    s: Union[float, np.ndarray], derivative: int = 0
) -> Union[float, np.ndarray]:
    """Quintic cutoff equal to 1 for s <= 1 and 0 for s >= 2, C^2 at both ends."""
    x = np.clip(np.asarray(s, dtype=float) - 1.0, 0.0, 1.0)

    if derivative == 0:
        out = 1.0 - x**3 * (10.0 - 15.0 * x + 6.0 * x**2)
    elif derivative == 1:
        out = -30.0 * x**2 * (1.0 - x) ** 2
    elif derivative == 2:
        out = -(120.0 * x**3 - 180.0 * x**2 + 60.0 * x)
    else:
        raise GeometryError("cutoff derivative [{}] not available".format(derivative))

    return out if np.ndim(out) else float(out)


def finite_difference_weights(
    x: np.ndarray, centers: np.ndarray, width: int = 3
) -> Tuple[np.ndarray, np.ndarray]:
    """First and second derivative weights on centered, possibly uneven stencils.

    Returns stencil indices of shape (len(centers), width) and weights of shape
    (len(centers), width, 2), column 0 for d/dx and column 1 for d2/dx2.
    """
    half = width // 2
    idx = centers[:, None] + np.arange(-half, half + 1)[None, :]
    dx = x[idx] - x[centers][:, None]
    powers = np.arange(width)
    vander = (
        dx[:, None, :] ** powers[None, :, None]
        / special.factorial(powers)[None, :, None]
    )
    rhs = np.zeros((len(centers), width, 2))
    rhs[:, 1, 0] = 1.0
    rhs[:, 2, 1] = 1.0

    return idx, np.linalg.solve(vander, rhs)


def axis_component(curve: ProfileCurve, index: int) -> Optional[int]:
    """0 if the point lies on the v-axis side (u = 0), 1 if v = 0, else None."""
    scale = max(1.0, float(np.max(np.abs(curve.points[index]))))
    if curve.v[index] <= AXIS_TOL * scale:
        return 1
    if curve.u[index] <= AXIS_TOL * scale:
        return 0
    return None


@dataclass(frozen=True)
class CurveFrame:
    """Derivatives and Frenet data at the nodes that carry a full stencil."""

    nodes: np.ndarray
    stencil: np.ndarray
    weights: np.ndarray
    d1: np.ndarray
    d2: np.ndarray
    speed: np.ndarray
    tangent: np.ndarray
    normal: np.ndarray
    curvature: np.ndarray
    orbit_u: np.ndarray
    orbit_v: np.ndarray
    axis: np.ndarray


def curve_frame(curve: ProfileCurve, width: int = 3) -> CurveFrame:
    """Frame at interior nodes plus any endpoint lying on a symmetry axis.

    Axis endpoints use mirror ghost points, the curve meeting the axis
    perpendicularly.
    """
    half = width // 2
    n = len(curve)
    coords = curve.points
    s = curve.s

    ext_coords = [coords]
    ext_s = [s]
    ext_node = [np.arange(n)]
    offset = 0
    nodes = list(range(half, n - half))

    left = axis_component(curve, 0)
    if left is not None:
        mirror = np.arange(half, 0, -1)
        ghost = coords[mirror].copy()
        ghost[:, left] *= -1
        ext_coords.insert(0, ghost)
        ext_s.insert(0, 2 * s[0] - s[mirror])
        ext_node.insert(0, mirror)
        offset = half
        nodes = list(range(0, half)) + nodes

    right = axis_component(curve, n - 1)
    if right is not None:
        mirror = np.arange(n - 2, n - 2 - half, -1)
        ghost = coords[mirror].copy()
        ghost[:, right] *= -1
        ext_coords.append(ghost)
        ext_s.append(2 * s[-1] - s[mirror])
        ext_node.append(mirror)
        nodes = nodes + list(range(n - half, n))

    X = np.concatenate(ext_coords)
    sx = np.concatenate(ext_s)
    node_of = np.concatenate(ext_node)
    nodes_ = np.array(sorted(set(nodes)), dtype=int)

    idx, weights = finite_difference_weights(sx, nodes_ + offset, width)
    d1 = np.einsum("kj,kjd->kd", weights[:, :, 0], X[idx])
    d2 = np.einsum("kj,kjd->kd", weights[:, :, 1], X[idx])

    speed = np.linalg.norm(d1, axis=1)
    tangent = d1 / speed[:, None]
    points = coords[nodes_]

    if curve.is_link:
        unit = points / np.linalg.norm(points, axis=1)[:, None]
        tangent = tangent - np.sum(tangent * unit, axis=1)[:, None] * unit
        tangent /= np.linalg.norm(tangent, axis=1)[:, None]
        normal = curve.orientation * np.cross(unit, tangent)
    else:
        normal = curve.orientation * np.column_stack((tangent[:, 1], -tangent[:, 0]))

    curvature = np.sum(d2 * normal, axis=1) / speed**2

    axis = np.full(len(nodes_), -1)
    for j, node in enumerate(nodes_):
        if node in (0, n - 1):
            component = axis_component(curve, node)
            axis[j] = -1 if component is None else component

    with np.errstate(divide="ignore", invalid="ignore"):
        orbit_u = normal[:, 0] / points[:, 0]
        orbit_v = normal[:, 1] / points[:, 1]
    orbit_u = np.where(axis == 0, -curvature, orbit_u)
    orbit_v = np.where(axis == 1, -curvature, orbit_v)

    interior = axis < 0
    if np.any(interior & ((points[:, 0] <= 0) | (points[:, 1] <= 0))):
        bad = nodes_[interior & ((points[:, 0] <= 0) | (points[:, 1] <= 0))]
        raise GeometryError("orbit degenerate at interior index [{}]".format(bad[0]))

    return CurveFrame(
        nodes=nodes_,
        stencil=node_of[idx],
        weights=weights,
        d1=d1,
        d2=d2,
        speed=speed,
        tangent=tangent,
        normal=normal,
        curvature=curvature,
        orbit_u=orbit_u,
        orbit_v=orbit_v,
        axis=axis,
    )


def mean_curvature(curve: ProfileCurve, width: int = 3) -> np.ndarray:
    """Mean curvature at every node; NaN where no stencil exists."""
    frame = curve_frame(curve, width)
    p, q = curve.params.p, curve.params.q

    out = np.full(len(curve), np.nan)
    out[frame.nodes] = frame.curvature - p * frame.orbit_u - q * frame.orbit_v

    return out


def profile_mean_curvature(curve: ProfileCurve, index: int, width: int = 3) -> float:
    n = len(curve)
    half = width // 2
    if index < 0:
        index += n

    if index < half or index >= n - half:
        raise GeometryError(
            "index [{}] needs interior stencil (curve has {} points)".format(index, n)
        )

    if curve.u[index] <= 0 or curve.v[index] <= 0:
        raise GeometryError("orbit degenerate at index [{}]".format(index))

    window = slice(index - half, index + half + 1)
    local = ProfileCurve(
        s=curve.s[window],
        u=curve.u[window],
        v=curve.v[window],
        params=curve.params,
        y=None if curve.y is None else curve.y[window],
        orientation=curve.orientation,
    )

    return float(mean_curvature(local, width)[half])


def second_fundamental_form_sq(curve: ProfileCurve, width: int = 3) -> np.ndarray:
    frame = curve_frame(curve, width)
    p, q = curve.params.p, curve.params.q

    out = np.full(len(curve), np.nan)
    out[frame.nodes] = (
        frame.curvature**2 + p * frame.orbit_u**2 + q * frame.orbit_v**2
    )
    return out


def jacobi_matrix(curve: ProfileCurve, width: int = 3) -> sparse.csr_matrix:
    """Sparse L = Laplacian + |A|^2 (+ Ric of the unit sphere for links).

    Rows of endpoints off the symmetry axes are left empty.
    """
    frame = curve_frame(curve, width)
    p, q = curve.params.p, curve.params.q
    points = curve.points[frame.nodes]
    n = len(curve)

    speed = frame.speed
    stretch = np.sum(frame.d1 * frame.d2, axis=1) / speed**2
    u_sigma = frame.d1[:, 0] / speed
    v_sigma = frame.d1[:, 1] / speed

    a2 = np.ones(len(frame.nodes))
    with np.errstate(divide="ignore", invalid="ignore"):
        a1 = p * u_sigma / points[:, 0] + q * v_sigma / points[:, 1]
    on_v_axis = frame.axis == 1
    on_u_axis = frame.axis == 0
    a2[on_v_axis] += q
    a2[on_u_axis] += p
    a1[on_v_axis] = (p * u_sigma / points[:, 0])[on_v_axis]
    a1[on_u_axis] = (q * v_sigma / points[:, 1])[on_u_axis]

    w1 = frame.weights[:, :, 0]
    w2 = frame.weights[:, :, 1]
    row_weights = (
        a2[:, None] * (w2 - w1 * stretch[:, None]) / speed[:, None] ** 2
        + a1[:, None] * w1 / speed[:, None]
    )

    ricci = curve.params.cone_dim if curve.is_link else 0
    potential = (
        frame.curvature**2 + p * frame.orbit_u**2 + q * frame.orbit_v**2 + ricci
    )

    rows = np.repeat(frame.nodes, width)
    cols = frame.stencil.ravel()
    data = row_weights.ravel()
    rows = np.concatenate((rows, frame.nodes))
    cols = np.concatenate((cols, frame.nodes))
    data = np.concatenate((data, potential))

    return sparse.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()


def jacobi_operator(
    curve: ProfileCurve, values: np.ndarray, width: int = 3
) -> np.ndarray:
    """L f at every node; NaN at endpoints off the symmetry axes."""
    frame = curve_frame(curve, width)
    out = np.full(len(curve), np.nan)
    out[frame.nodes] = (jacobi_matrix(curve, width) @ np.asarray(values))[frame.nodes]
    return out


def weighted_area(
    curve: ProfileCurve, window: Optional[Tuple[float, float]] = None
) -> float:
    """Area of the generated hypersurface, c(p,q) * int u^p v^q ds."""
    s = curve.s
    lo, hi = (s[0], s[-1]) if window is None else window
    lo, hi = max(lo, s[0]), min(hi, s[-1])

    if hi <= lo:
        logger.warning("empty area window [%s, %s]", lo, hi)
        return 0.0

    points = curve.points
    density = orbit_volume(curve.u, curve.v, curve.params)
    chords = np.linalg.norm(np.diff(points, axis=0), axis=1)
    ds = np.diff(s)

    total = 0.0
    for i in np.nonzero((s[1:] > lo) & (s[:-1] < hi))[0]:
        a = max(0.0, (lo - s[i]) / ds[i])
        b = min(1.0, (hi - s[i]) / ds[i])
        start = density[i] + a * (density[i + 1] - density[i])
        end = density[i] + b * (density[i + 1] - density[i])
        total += 0.5 * (start + end) * (b - a) * chords[i]

    return float(total)


class _ConeBase:
    def __init__(self, params: ConeParams) -> None:
        self.a, self.b = params.link_radii

    def forward(self, grid: np.ndarray, values: np.ndarray) -> np.ndarray:
        u = grid * self.a + values * self.b
        v = grid * self.b - values * self.a
        return np.column_stack((u, v))

    def backward(
        self, points: np.ndarray, reach: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        grid = points[:, 0] * self.a + points[:, 1] * self.b
        values = points[:, 0] * self.b - points[:, 1] * self.a

        if np.any(np.abs(values) >= reach * grid):
            raise GeometryError(
                "outside tubular neighborhood of the cone (|offset| >= {} r)".format(
                    reach
                )
            )
        return grid, values


class _EquatorBase:
    """The great circle Sigma_0 of the (3,3)-type link, parametrized by latitude."""

    def __init__(self, params: ConeParams) -> None:
        self.a, self.b = params.link_radii
        self.normal = np.array([self.b, -self.a, 0.0])

    def point(self, theta: np.ndarray) -> np.ndarray:
        c = np.cos(theta)
        return np.column_stack((self.a * c, self.b * c, np.sin(theta)))

    def forward(self, grid: np.ndarray, values: np.ndarray) -> np.ndarray:
        return (
            np.cos(values)[:, None] * self.point(grid)
            + np.sin(values)[:, None] * self.normal[None, :]
        )

    def backward(
        self, points: np.ndarray, reach: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        along = points[:, 0] * self.a + points[:, 1] * self.b
        grid = np.arctan2(points[:, 2], along)
        values = np.arcsin(np.clip(points @ self.normal, -1.0, 1.0))

        if np.any(np.abs(values) >= reach * np.cos(grid)):
            raise GeometryError("outside tubular neighborhood of the equator")
        return grid, values


class _CurveBase:
    def __init__(self, curve: ProfileCurve) -> None:
        self.curve = curve
        self.spline = interpolate.CubicSpline(curve.s, curve.points, axis=0)
        self.link = curve.is_link
        self.sign = curve.orientation

    def frame(self, s: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        point = self.spline(s)
        d1 = self.spline(s, 1)
        if self.link:
            point = point / np.linalg.norm(point, axis=1)[:, None]
            d1 = d1 - np.sum(d1 * point, axis=1)[:, None] * point
            tangent = d1 / np.linalg.norm(d1, axis=1)[:, None]
            normal = self.sign * np.cross(point, tangent)
        else:
            tangent = d1 / np.linalg.norm(d1, axis=1)[:, None]
            normal = self.sign * np.column_stack((tangent[:, 1], -tangent[:, 0]))
        return point, tangent, normal

    def forward(self, grid: np.ndarray, values: np.ndarray) -> np.ndarray:
        point, _, normal = self.frame(grid)
        if self.link:
            return np.cos(values)[:, None] * point + np.sin(values)[:, None] * normal
        return point + values[:, None] * normal

    def _foot_residual(self, target: np.ndarray, s: float) -> float:
        point, tangent, _ = self.frame(np.array([s]))
        if self.link:
            return float(target @ tangent[0])
        return float((target - point[0]) @ tangent[0])

    def backward(
        self, points: np.ndarray, reach: float
    ) -> Tuple[np.ndarray, np.ndarray]:
        nodes = self.curve.s
        base_points, base_tangent, _ = self.frame(nodes)
        if self.link:
            residual = points @ base_tangent.T
        else:
            residual = np.einsum(
                "ikd,kd->ik", points[:, None, :] - base_points[None, :, :], base_tangent
            )
        distance = np.linalg.norm(points[:, None, :] - base_points[None, :, :], axis=2)

        grid = np.empty(len(points))
        for i, target in enumerate(points):
            signs = np.sign(residual[i])
            crossings = np.nonzero(signs[:-1] != signs[1:])[0]
            exact = np.nonzero(residual[i] == 0)[0]
            if len(crossings) == 0 and len(exact) == 0:
                end = 0
                if abs(residual[i, 0]) >= abs(residual[i, -1]):
                    end = len(nodes) - 1
                if abs(residual[i, end]) > 1e-10 * max(1.0, distance[i, end]):
                    raise GeometryError(
                        "outside tubular neighborhood: point [{}] has no foot".format(i)
                    )
                grid[i] = nodes[end]
                continue

            candidates = [(distance[i, j], j, False) for j in crossings]
            candidates += [(distance[i, j], j, True) for j in exact]
            _, j, hit = min(candidates)
            if hit:
                grid[i] = nodes[j]
            else:
                grid[i] = optimize.brentq(
                    lambda s_: self._foot_residual(target, s_),
                    nodes[j],
                    nodes[j + 1],
                    xtol=1e-15,
                    rtol=4 * np.finfo(float).eps,
                )

        foot, _, normal = self.frame(grid)
        if self.link:
            values = np.arctan2(
                np.sum(points * normal, axis=1), np.sum(points * foot, axis=1)
            )
        else:
            values = np.sum((points - foot) * normal, axis=1)

        scale = np.hypot(foot[:, 0], foot[:, 1])
        if np.any(np.abs(values) >= reach * np.maximum(scale, AXIS_TOL)):
            raise GeometryError(
                "outside tubular neighborhood (|offset| >= {} r)".format(reach)
            )
        return grid, values


def _base_for(
    base: str, base_curve: Optional[ProfileCurve], params: ConeParams
) -> Union[_ConeBase, _EquatorBase, _CurveBase]:
    if base == "cone":
        return _ConeBase(params)
    if base == "sigma0":
        return _EquatorBase(params)
    if base_curve is None:
        raise GeometryError("base [{}] needs a base curve".format(base))
    return _CurveBase(base_curve)


def graph_to_profile(g: GraphOverCone, orientation: int = 1) -> ProfileCurve:
    base = _base_for(g.base, g.base_curve, g.params)
    points = base.forward(
        np.asarray(g.grid, dtype=float), np.asarray(g.values, dtype=float)
    )

    scale = np.max(np.abs(points))
    if np.any(points[:, :2] < -AXIS_TOL * scale):
        raise GeometryError("graph leaves quadrant")

    return ProfileCurve.from_points(points, params=g.params, orientation=orientation)


def profile_to_graph(
    curve: ProfileCurve,
    base: Optional[ProfileCurve] = None,
    tag: Optional[str] = None,
    reach: float = 0.5,
) -> GraphOverCone:
    """Signed normal offsets of `curve` over `base` (the cone when omitted)."""
    if tag is None:
        tag = "cone" if base is None else "curve"

    strategy = _base_for(tag, base, curve.params)
    grid, values = strategy.backward(curve.points, reach)

    order = np.argsort(grid)
    if not np.array_equal(order, np.arange(len(grid))) and not np.array_equal(
        order, np.arange(len(grid))[::-1]
    ):
        raise GeometryError("outside tubular neighborhood: projection not injective")

    return GraphOverCone(
        grid=grid[order],
        values=values[order],
        base=tag,
        base_curve=base,
        params=curve.params,
    )


def generating_surface_mean_curvature(
    point: np.ndarray,
    d_a: np.ndarray,
    d_b: np.ndarray,
    d_aa: np.ndarray,
    d_ab: np.ndarray,
    d_bb: np.ndarray,
    params: ConeParams,
    normal_hint: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean curvature of the hypersurface generated by a surface in (u, v, y).

    All arguments are arrays of shape (..., 3). The normal is oriented to have
    positive inner product with `normal_hint`.
    """
    normal = np.cross(d_a, d_b)
    normal /= np.linalg.norm(normal, axis=-1)[..., None]
    flip = np.sum(normal * normal_hint, axis=-1) < 0
    normal[flip] *= -1

    E = np.sum(d_a * d_a, axis=-1)
    F = np.sum(d_a * d_b, axis=-1)
    G = np.sum(d_b * d_b, axis=-1)
    e = np.sum(d_aa * normal, axis=-1)
    f = np.sum(d_ab * normal, axis=-1)
    g = np.sum(d_bb * normal, axis=-1)

    trace = (e * G - 2 * f * F + g * E) / (E * G - F**2)
    m = (
        trace
        - params.p * normal[..., 0] / point[..., 0]
        - params.q * normal[..., 1] / point[..., 1]
    )
    return m, normal


@dataclass(frozen=True)
class GridDerivatives:
    """Centered derivatives of a (n_a, n_b, 3) point grid at its interior nodes."""

    rows: np.ndarray
    cols: np.ndarray
    point: np.ndarray
    d_a: np.ndarray
    d_b: np.ndarray
    d_aa: np.ndarray
    d_ab: np.ndarray
    d_bb: np.ndarray


def grid_derivatives(
    X: np.ndarray, a: np.ndarray, b: np.ndarray, width: int = 5
) -> GridDerivatives:
    half = width // 2
    rows = np.arange(half, len(a) - half)
    cols = np.arange(half, len(b) - half)
    idx_a, w_a = finite_difference_weights(a, rows, width)
    idx_b, w_b = finite_difference_weights(b, cols, width)

    def along_a(values: np.ndarray, order: int) -> np.ndarray:
        return np.einsum("kj,kjsd->ksd", w_a[:, :, order], values[idx_a])

    def along_b(values: np.ndarray, order: int) -> np.ndarray:
        return np.einsum("kj,tkjd->tkd", w_b[:, :, order], values[:, idx_b])

    X_a = along_a(X, 0)
    return GridDerivatives(
        rows=rows,
        cols=cols,
        point=X[np.ix_(rows, cols)],
        d_a=X_a[:, cols],
        d_b=along_b(X, 0)[rows],
        d_aa=along_a(X, 1)[:, cols],
        d_ab=along_b(X_a, 0),
        d_bb=along_b(X, 1)[rows],
    )


def save_profile(curve: ProfileCurve, path: Union[str, Path]) -> None:
    y = curve.y if curve.is_link else np.full(len(curve), np.nan)
    data = np.column_stack((curve.s, curve.u, curve.v, y))
    np.savetxt(Path(path), data, fmt="%.17g", header=PROFILE_COLUMNS, comments="")


def load_profile(
    path: Union[str, Path], params: Optional[ConeParams] = None, orientation: int = 1
) -> ProfileCurve:
    path = Path(path)
    with open(path) as stream:
        header = stream.readline().split()

    if header != PROFILE_COLUMNS.split():
        raise GeometryError(
            "profile file [{}] has unexpected header {}".format(path, header)
        )

    data = np.loadtxt(path, skiprows=1, ndmin=2)
    y = None if np.all(np.isnan(data[:, 3])) else data[:, 3]

    return ProfileCurve(
        s=data[:, 0],
        u=data[:, 1],
        v=data[:, 2],
        params=params or ConeParams(),
        y=y,
        orientation=orientation,
    )


class GeometryError(Exception):
    """Profile geometry cannot be evaluated"""
