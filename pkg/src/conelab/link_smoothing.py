"""Smoothings Sigma_delta of the link Sigma_0 of C x R.

Sigma_0 is the suspension of S^p x S^q in the unit sphere, singular at the
poles y = +-1. The glued link carries eps H (eps^W = |delta|) at the poles and
the graph of delta phi everywhere else. Newton iteration on normal offsets and
one scalar lam then solves m(Sigma_delta) + lam zeta = 0, so h(delta) = -lam.

Near a pole, central projection (u, v, y) -> (u, v) / |y| carries the link of
C x R onto C: the point at angle g over Sigma_0 at latitude theta lands at cone
radius cot|theta| and normal offset tan(g) / sin|theta|.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import repeat
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import singer
from scipy import integrate, interpolate, sparse, stats
from scipy.sparse import linalg as sparse_linalg

from conelab.geometry_core import (
    ConeParams,
    GeometryError,
    GraphOverCone,
    ProfileCurve,
    curve_frame,
    graph_to_profile,
    link_volume,
    mean_curvature,
    orbit_volume,
    second_fundamental_form_sq,
    smoothstep_cutoff,
)
from conelab.hardt_simon import (
    HardtSimonProfile,
    hardt_simon_profile,
    scaling_jacobi_field,
)
from conelab.jacobi_spectrum import phi

logger = singer.get_logger()

DELTA_MAX = 0.1
DEFAULT_ALPHA = 0.95
DEFAULT_ANCHOR = 0.5
DEFAULT_ZETA_SUPPORT = 0.5
FD_STEP = 1e-6
MOMENT_GLUE_EXPONENT = 2 / 3
POLE_COUNT = 2

Leaves = Tuple[HardtSimonProfile, HardtSimonProfile]


@dataclass
class GlueConfig:
    delta: float

    # gluing
    alpha: float = DEFAULT_ALPHA
    r0_anchor: float = DEFAULT_ANCHOR
    zeta_support: float = DEFAULT_ZETA_SUPPORT

    # discretization
    n_nodes: int = 801
    width: int = 5

    # newton
    tol: float = 1e-10
    max_iter: int = 30

    params: ConeParams = field(default_factory=ConeParams)

    @property
    def epsilon(self) -> float:
        return abs(self.delta) ** (1 / self.params.w_exponent)

    @property
    def sign(self) -> int:
        return -1 if self.delta < 0 else 1

    @classmethod
    def from_mapping(cls, context: Mapping[str, Any]) -> "GlueConfig":
        self = cls(delta=float(context["delta"]))

        if "alpha" in context:
            self.alpha = float(context["alpha"])
        if "r0_anchor" in context:
            self.r0_anchor = float(context["r0_anchor"])
        if "zeta_support" in context:
            self.zeta_support = float(context["zeta_support"])

        if "n_nodes" in context:
            self.n_nodes = int(context["n_nodes"])
        if "width" in context:
            self.width = int(context["width"])

        if "tol" in context:
            self.tol = float(context["tol"])
        if "max_iter" in context:
            self.max_iter = int(context["max_iter"])

        return self

    def validate(self) -> None:
        if abs(self.delta) > DELTA_MAX:
            raise LinkSolveError(
                "delta [{}] outside solvable range |delta| <= {}".format(
                    self.delta, DELTA_MAX
                )
            )

        if not 0.9 <= self.alpha < 1:
            raise LinkSolveError(
                "alpha must lie in [0.9, 1), got [{}]".format(self.alpha)
            )

        if self.params.mu != -2 or self.params.k != 0:
            raise LinkSolveError(
                "link smoothing needs a cone with mu = -2, got [{}]".format(self.params)
            )

        if self.n_nodes < 50 or self.width not in (3, 5):
            raise LinkSolveError(
                "discretization [{} nodes, width {}] not supported".format(
                    self.n_nodes, self.width
                )
            )


@dataclass(frozen=True)
class WeightedNormSpec:
    k: int = 0
    holder_alpha: float = 0.0
    tau: float = -2.5

    def check_solver_range(self) -> None:
        if not -3 < self.tau < -2:
            raise LinkSolveError(
                "weight tau [{}] outside (-3, -2) used by the solver".format(self.tau)
            )


GLUE_ERROR_WEIGHT = WeightedNormSpec(tau=-4.0)


@dataclass(frozen=True)
class ZetaFunction:
    """zeta = c chi(2|y| / y_s) phi, odd in y and supported in |y| < y_s."""

    support: Tuple[float, float]
    normalization_c: float
    y: np.ndarray
    profile: np.ndarray
    params: ConeParams

    def values(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        chi = smoothstep_cutoff(2 * np.abs(y) / self.support[1])
        out = np.zeros_like(y)
        inside = chi > 0
        r = np.sqrt(1 - y[inside] ** 2)
        out[inside] = self.normalization_c * chi[inside] * phi(r, y[inside])
        return out


@dataclass(frozen=True)
class SmoothedLink:
    profile: ProfileCurve
    delta: float
    h: float
    newton_iters: int
    final_residual: float
    h_prime: Optional[float] = None
    lam: float = 0.0
    approximate: Optional[ProfileCurve] = None
    correction: Optional[np.ndarray] = None
    anchor: int = 0
    zeta: Optional[ZetaFunction] = None
    config: Optional[GlueConfig] = None
    leaves: Optional[Leaves] = None
    jacobian: Optional[sparse.csr_matrix] = None
    residual_history: Tuple[float, ...] = ()
    regularity: float = 0.0

    @property
    def sign(self) -> int:
        return -1 if self.delta < 0 else 1

    @property
    def h_fixed(self) -> float:
        """h measured against the normal pointing to the u > v side."""
        return -self.lam


@dataclass(frozen=True)
class LinkField:
    kind: str
    curve: ProfileCurve
    values: np.ndarray
    c_delta: Optional[float] = None
    h_prime: Optional[float] = None
    guess_distance: Optional[float] = None


@dataclass(frozen=True)
class HFit:
    exponent: float
    prefactor: float
    stderr: float
    confidence: Tuple[float, float]
    r_squared: float
    moment_constant: float
    h_constant: float
    h_constant_measured: Optional[float] = None


@dataclass(frozen=True)
class MomentCheck:
    delta: float
    integral: float
    constant: float
    expected: float
    r_glue: float

    @property
    def ratio(self) -> float:
        return self.constant / self.expected


@dataclass(frozen=True)
class AreaRow:
    delta: float
    h: float
    area_excess: float
    derivative: float
    predicted: float
    bound_constant: float


def link_inner_product(curve: ProfileCurve, f: np.ndarray, g: np.ndarray) -> float:
    """L^2 pairing over the generated hypersurface (orbit volumes included)."""
    density = orbit_volume(curve.u, curve.v, curve.params)
    return float(integrate.simpson(np.asarray(f) * np.asarray(g) * density, x=curve.s))


def _sigma0_density(theta: np.ndarray, params: ConeParams) -> np.ndarray:
    return link_volume(params) * np.cos(theta) ** (params.p + params.q)


def phi_norm_sq(params: Optional[ConeParams] = None) -> float:
    """Integral of phi^2 over Sigma_0 (pi^5 / 64 for the Simons cone)."""
    params = params or ConeParams()

    def integrand(theta: float) -> float:
        y, r = math.sin(theta), math.cos(theta)
        return (y**3 - y * r**2) ** 2 * r ** (params.p + params.q - 4)

    value, _ = integrate.quad(integrand, -math.pi / 2, math.pi / 2, epsabs=1e-14)
    return link_volume(params) * value


def moment_constant(params: Optional[ConeParams] = None) -> float:
    return link_volume(params or ConeParams())


def h_constant(params: Optional[ConeParams] = None) -> float:
    params = params or ConeParams()
    return POLE_COUNT * moment_constant(params) / phi_norm_sq(params)


def glue_moment() -> float:
    """int_1^2 chi"(s) s ds for the gluing cutoff; equals 1."""
    value, _ = integrate.quad(
        lambda s: smoothstep_cutoff(s, derivative=2) * s, 1.0, 2.0
    )
    return float(value)


def sigma0_curve(
    params: Optional[ConeParams] = None, n: int = 801, r_min: float = 1e-3
) -> ProfileCurve:
    """Sigma_0 on |r| >= r_min with node spacing proportional to r."""
    params = params or ConeParams()
    sigma_max = math.asinh(math.tan(math.acos(r_min)))
    theta = np.arctan(np.sinh(np.linspace(-sigma_max, sigma_max, n)))
    return graph_to_profile(
        GraphOverCone(grid=theta, values=np.zeros(n), base="sigma0", params=params)
    )


def make_zeta(
    support: float = DEFAULT_ZETA_SUPPORT,
    params: Optional[ConeParams] = None,
    n: int = 2001,
) -> ZetaFunction:
    params = params or ConeParams()
    if not 0 < support < 1:
        raise LinkSolveError(
            "zeta support [{}] touches the poles (need 0 < y_s < 1)".format(support)
        )

    theta_s = math.asin(support)
    kinks = [-theta_s, -math.asin(support / 2), math.asin(support / 2), theta_s]

    def integrand(theta: float) -> float:
        y, r = math.sin(theta), math.cos(theta)
        chi = smoothstep_cutoff(2 * abs(y) / support)
        return chi * (y**3 - y * r**2) ** 2 * r ** (params.p + params.q - 4)

    weighted, _ = integrate.quad(
        integrand, -theta_s, theta_s, points=kinks[1:3], epsabs=1e-15, limit=200
    )
    c = phi_norm_sq(params) / (link_volume(params) * weighted)

    y = np.linspace(-support, support, n)
    zeta = ZetaFunction(
        support=(-support, support),
        normalization_c=c,
        y=y,
        profile=np.zeros(n),
        params=params,
    )
    return replace(zeta, profile=zeta.values(y))


def hardt_simon_leaves(
    params: Optional[ConeParams] = None, xi_max: float = 1e6, tol: float = 1e-12
) -> Leaves:
    params = params or ConeParams()
    plus = hardt_simon_profile(params, side=1, xi_max=xi_max, tol=tol)
    minus = hardt_simon_profile(params, side=-1, xi_max=xi_max, tol=tol)
    return plus, minus


def _pole_leaves(cfg: GlueConfig, leaves: Leaves) -> Leaves:
    """(north, south) leaves: the side of delta phi at each pole."""
    plus, minus = leaves
    return (plus, minus) if cfg.sign > 0 else (minus, plus)


def _core_radius(leaf: HardtSimonProfile) -> float:
    a, b = leaf.params.link_radii
    return float(leaf.curve.u[0] * a + leaf.curve.v[0] * b)


def glue_radius(cfg: GlueConfig, leaves: Leaves) -> float:
    """r_eps = eps^alpha, floored at twice the core radius of eps H."""
    core = max(_core_radius(leaf) for leaf in leaves)
    return max(cfg.epsilon**cfg.alpha, 2 * cfg.epsilon * core)


def moment_glue_radius(cfg: GlueConfig, leaves: Leaves) -> float:
    """r_eps = eps^(2/3), where the glue-zone error (eps / r_eps)^3 of int m phi
    and the chart error r_eps^3 / eps are both of order eps.

    At alpha >= 0.9 the ratio r_eps / eps barely moves over the solvable range of
    delta, and the glue-zone error stays a fixed fraction of the moment.
    """
    core = max(_core_radius(leaf) for leaf in leaves)
    return max(cfg.epsilon**MOMENT_GLUE_EXPONENT, 2 * cfg.epsilon * core)


def _leaf_chart(leaf: HardtSimonProfile, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    a, b = leaf.params.link_radii
    u, v = eps * leaf.curve.u, eps * leaf.curve.v
    return u * a + v * b, u * b - v * a


def _chart_to_sphere(
    radius: np.ndarray, offset: np.ndarray, hemisphere: int, params: ConeParams
) -> np.ndarray:
    a, b = params.link_radii
    U = radius * a + offset * b
    V = radius * b - offset * a
    norm = np.sqrt(1 + U**2 + V**2)
    return np.column_stack((U / norm, V / norm, hemisphere / norm))


def _band(
    cfg: GlueConfig, leaves: Leaves, r_glue: float, count: int
) -> np.ndarray:
    """Glue zone and outer graph, as points on the sphere, south to north."""
    params = cfg.params
    eps = cfg.epsilon
    sigma_b = math.asinh(1 / r_glue)
    theta = np.arctan(np.sinh(np.linspace(-sigma_b, sigma_b, count)))
    g = cfg.delta * phi(np.cos(theta), np.sin(theta))

    with np.errstate(divide="ignore"):
        radius = 1 / np.tan(np.abs(theta))

    for hemisphere, leaf in zip((1, -1), _pole_leaves(cfg, leaves)):
        leaf_radius, leaf_offset = _leaf_chart(leaf, eps)
        if np.any(np.diff(leaf_radius) <= 0):
            raise LinkSolveError("Hardt-Simon leaf is not a graph over the cone ray")
        if leaf_radius[-1] < 2 * r_glue:
            raise LinkSolveError(
                "Hardt-Simon leaf ends at [{}] inside the gluing zone".format(
                    leaf_radius[-1]
                )
            )

        spline = interpolate.CubicSpline(leaf_radius, leaf_offset)
        zone = (np.sign(theta) == hemisphere) & (radius < 2 * r_glue)
        sin_t = np.sin(np.abs(theta[zone]))
        chi = smoothstep_cutoff(radius[zone] / r_glue)
        outer = np.tan(g[zone]) / sin_t
        glued = chi * spline(radius[zone]) + (1 - chi) * outer
        g[zone] = np.arctan(glued * sin_t)

    if np.any(np.abs(np.tan(g)) >= 0.9 * np.cos(theta)):
        raise LinkSolveError(
            "delta [{}] too large for the tubular neighborhood of Sigma_0".format(
                cfg.delta
            )
        )

    try:
        band = graph_to_profile(
            GraphOverCone(grid=theta, values=g, base="sigma0", params=params)
        )
    except GeometryError as exc:
        raise LinkSolveError("glued link invalid: {}".format(exc)) from exc

    return band.points


def _cap(
    leaf: HardtSimonProfile, eps: float, r_glue: float, hemisphere: int
) -> np.ndarray:
    radius, offset = _leaf_chart(leaf, eps)
    inner = radius < r_glue
    return _chart_to_sphere(radius[inner], offset[inner], hemisphere, leaf.params)


def _resample(dense: np.ndarray, n: int, core: float) -> np.ndarray:
    """Equidistribute nodes against ds / sqrt(core^2 + r^2)."""
    chords = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    keep = np.concatenate(([True], chords > 1e-14))
    dense = dense[keep]
    steps = np.linalg.norm(np.diff(dense, axis=0), axis=1)
    s = np.concatenate(([0.0], np.cumsum(steps)))

    r = np.hypot(dense[:, 0], dense[:, 1])
    density = 1 / np.sqrt(core**2 + r**2)
    monitor = integrate.cumulative_trapezoid(density, s, initial=0.0)
    nodes = np.interp(np.linspace(0.0, monitor[-1], n), monitor, s)

    points = interpolate.CubicSpline(s, dense, axis=0)(nodes)
    points /= np.linalg.norm(points, axis=1)[:, None]
    for end in (0, -1):
        points[end] = dense[end]
        points[end, np.argmin(np.abs(dense[end, :2]))] = 0.0

    return points


def build_approximate_link(
    cfg: GlueConfig, leaves: Leaves, r_glue: Optional[float] = None
) -> ProfileCurve:
    """The glued link: eps H caps, chi-interpolation, graph of delta phi.

    r_glue overrides the glue radius of cfg.
    """
    cfg.validate()
    params = cfg.params
    if cfg.delta == 0:
        return sigma0_curve(params, cfg.n_nodes)

    eps = cfg.epsilon
    if r_glue is None:
        r_glue = glue_radius(cfg, leaves)
    elif r_glue < 2 * eps * min(_core_radius(leaf) for leaf in leaves):
        raise LinkSolveError(
            "glue radius [{}] inside twice the core of eps H".format(r_glue)
        )
    north, south = _pole_leaves(cfg, leaves)

    dense = np.concatenate(
        (
            _cap(south, eps, r_glue, -1),
            _band(cfg, leaves, r_glue, 20 * cfg.n_nodes),
            _cap(north, eps, r_glue, 1)[::-1],
        )
    )
    core = eps * min(_core_radius(leaf) for leaf in leaves)
    points = _resample(dense, cfg.n_nodes, core)

    logger.debug(
        "glued link for delta [%s]: eps [%s], r_eps [%s], %s nodes",
        cfg.delta,
        eps,
        r_glue,
        len(points),
    )
    return ProfileCurve.from_points(points, params=params)


class _OffsetMap:
    """Normal exponential map over a link curve ending on symmetry axes."""

    def __init__(self, curve: ProfileCurve, width: int) -> None:
        frame = curve_frame(curve, width)
        if len(frame.nodes) != len(curve):
            raise LinkSolveError("link profile must end on symmetry axes")

        self.curve = curve
        self.width = width
        self.points = curve.points
        self.normals = frame.normal
        self.scale = np.maximum(curve.r, 1e-8)

    def offset(self, g: np.ndarray) -> ProfileCurve:
        points = np.cos(g)[:, None] * self.points + np.sin(g)[:, None] * self.normals
        return ProfileCurve.from_points(points, params=self.curve.params)

    def mean_curvature(self, g: np.ndarray) -> np.ndarray:
        return mean_curvature(self.offset(g), self.width)

    def jacobian(self, g: np.ndarray) -> sparse.csr_matrix:
        """d m / d g by central differences, one evaluation pair per stencil color."""
        n = len(g)
        half = self.width // 2
        rows, cols, data = [], [], []

        for color in range(self.width):
            columns = np.arange(color, n, self.width)
            step = np.zeros(n)
            step[columns] = FD_STEP * self.scale[columns]
            diff = self.mean_curvature(g + step) - self.mean_curvature(g - step)

            for shift in range(-half, half + 1):
                target = columns + shift
                keep = (target >= 0) & (target < n)
                rows.append(target[keep])
                cols.append(columns[keep])
                data.append(diff[target[keep]] / (2 * step[columns[keep]]))

        return sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        )


def _anchor_index(curve: ProfileCurve, r0: float) -> int:
    candidates = np.flatnonzero(curve.y > 0)
    return int(candidates[np.argmin(np.abs(curve.r[candidates] - r0))])


def _augmented(
    J: sparse.csr_matrix, column: np.ndarray, anchor: int, weights: np.ndarray
) -> sparse.csc_matrix:
    n = J.shape[0]
    row = sparse.csr_matrix(([1.0], ([0], [anchor])), shape=(1, n))
    return sparse.bmat(
        [
            [sparse.diags(weights) @ J, sparse.csr_matrix((weights * column)[:, None])],
            [row, None],
        ]
    ).tocsc()


def _factorize(A: sparse.csc_matrix, what: str) -> sparse_linalg.SuperLU:
    try:
        return sparse_linalg.splu(A)
    except RuntimeError as exc:
        raise LinkSolveError("{}: {}".format(what, exc)) from exc


def _equator_link(cfg: GlueConfig) -> SmoothedLink:
    curve = sigma0_curve(cfg.params, cfg.n_nodes)
    m = mean_curvature(curve, cfg.width)
    residual = float(np.nanmax(np.abs(m) * curve.r**2))
    return SmoothedLink(
        profile=curve,
        delta=0.0,
        h=0.0,
        newton_iters=0,
        final_residual=residual,
        approximate=curve,
        correction=np.zeros(len(curve)),
        zeta=make_zeta(cfg.zeta_support, cfg.params),
        config=cfg,
    )


def solve_smoothed_link(
    cfg: GlueConfig, leaves: Optional[Leaves] = None
) -> SmoothedLink:
    """Damped Newton on (offsets over the glued link, lam) with u(anchor) = 0."""
    cfg.validate()
    if cfg.delta == 0:
        return _equator_link(cfg)

    r0, y0 = cfg.r0_anchor, math.sqrt(max(1 - cfg.r0_anchor**2, 0.0))
    if not 0 < r0 < 1 or abs(phi(r0, y0)) < 1e-3:
        raise LinkSolveError("bad anchor: phi vanishes at r0 [{}]".format(r0))

    leaves = leaves or hardt_simon_leaves(cfg.params)
    zeta = make_zeta(cfg.zeta_support, cfg.params)
    base = build_approximate_link(cfg, leaves)
    offsets = _OffsetMap(base, cfg.width)
    anchor = _anchor_index(base, cfg.r0_anchor)
    weights = offsets.scale**2
    n = len(base)

    def residual(g: np.ndarray, lam: float) -> np.ndarray:
        curve = offsets.offset(g)
        return mean_curvature(curve, cfg.width) + lam * zeta.values(curve.y)

    def size(res: np.ndarray) -> float:
        return float(np.max(np.abs(weights * res)))

    g = np.zeros(n)
    m0 = offsets.mean_curvature(g)
    z0 = zeta.values(base.y)
    lam = -link_inner_product(base, m0, phi(base.r, base.y)) / link_inner_product(
        base, z0, phi(base.r, base.y)
    )

    logger.info("solving smoothed link for delta [%s]", cfg.delta)
    start = time.monotonic()
    history: List[float] = []
    res = residual(g, lam)

    for iteration in range(cfg.max_iter + 1):
        norm = size(res)
        history.append(norm)
        logger.debug(
            "newton iteration [%s]: residual [%s], lam [%s]", iteration, norm, lam
        )
        if norm <= cfg.tol:
            break

        if iteration == cfg.max_iter:
            raise LinkSolveError(
                "Newton stagnation after {} iterations (residual {})".format(
                    iteration, norm
                ),
                history=history,
            )

        zeta_now = zeta.values(offsets.offset(g).y)
        A = _augmented(offsets.jacobian(g), zeta_now, anchor, weights)
        rhs = -np.concatenate((weights * res, [g[anchor]]))
        step = _factorize(A, "bad anchor: augmented system singular").solve(rhs)

        t = 1.0
        while True:
            trial_g, trial_lam = g + t * step[:n], lam + t * step[n]
            try:
                trial = residual(trial_g, trial_lam)
                accepted = size(trial) < (1 - 1e-4 * t) * norm
            except GeometryError:
                accepted = False

            if accepted:
                g, lam, res = trial_g, trial_lam, trial
                break

            t /= 2
            if t < 1 / 1024:
                raise LinkSolveError(
                    "Newton stagnation: no descent along the step (residual {})".format(
                        norm
                    ),
                    history=history,
                )

    profile = offsets.offset(g)
    J = _OffsetMap(profile, cfg.width).jacobian(np.zeros(n))
    A_sq = second_fundamental_form_sq(profile, cfg.width)
    regularity = float(np.max(profile.r * np.sqrt(A_sq)))
    h = cfg.sign * -lam

    logger.info(
        "smoothed link for delta [%s]: h [%s] after %s iterations in %s seconds",
        cfg.delta,
        h,
        len(history) - 1,
        time.monotonic() - start,
    )
    return SmoothedLink(
        profile=profile,
        delta=cfg.delta,
        h=h,
        newton_iters=len(history) - 1,
        final_residual=history[-1],
        lam=lam,
        approximate=base,
        correction=g,
        anchor=_anchor_index(profile, cfg.r0_anchor),
        zeta=zeta,
        config=cfg,
        leaves=leaves,
        jacobian=J,
        residual_history=tuple(history),
        regularity=regularity,
    )


def solve_sweep(
    configs: Sequence[GlueConfig],
    leaves: Optional[Leaves] = None,
    workers: int = 1,
) -> List[SmoothedLink]:
    """Independent solves sharing one pair of Hardt-Simon leaves.

    With workers > 1 the solves run in a process pool; links come back in the
    order of configs.
    """
    if not configs:
        return []
    leaves = leaves or hardt_simon_leaves(configs[0].params)
    if workers <= 1 or len(configs) < 2:
        return [solve_smoothed_link(cfg, leaves) for cfg in configs]

    logger.info("solving [%s] links on [%s] workers", len(configs), workers)
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(solve_smoothed_link, configs, repeat(leaves)))


def h_prime_centered(cfg: GlueConfig, leaves: Leaves) -> float:
    """Centered difference of h with step delta / 8."""
    step = cfg.delta / 8
    values = []
    for delta in (cfg.delta + step, cfg.delta - step):
        values.append(solve_smoothed_link(replace(cfg, delta=delta), leaves).h)
    return (values[0] - values[1]) / (2 * step)


def alpha_sensitivity(
    cfg: GlueConfig, leaves: Leaves, alphas: Sequence[float] = (0.9, 0.95, 0.99)
) -> Dict[float, float]:
    return {
        alpha: solve_smoothed_link(replace(cfg, alpha=alpha), leaves).h
        for alpha in alphas
    }


def weighted_norm(
    values: np.ndarray, spec: WeightedNormSpec, base: ProfileCurve
) -> float:
    """sup over annuli {R/2 < r <= R} of R^-tau times the scaled C^k norm."""
    values = np.asarray(values, dtype=float)
    r, s = base.r, base.s
    positive = r > 0
    r_min, r_max = float(np.min(r[positive])), float(np.max(r))

    derivatives = [values]
    for _ in range(spec.k):
        derivatives.append(np.gradient(derivatives[-1], s))

    R = 2.0 ** math.ceil(math.log2(r_max))
    best = 0.0
    while R > r_min:
        annulus = np.flatnonzero((r > R / 2) & (r <= R))
        if len(annulus) == 0:
            raise LinkSolveError("empty annulus coverage at R [{}]".format(R))

        local = sum(
            R**j * float(np.max(np.abs(d[annulus]))) for j, d in enumerate(derivatives)
        )
        if spec.holder_alpha > 0 and len(annulus) > 1:
            top = derivatives[-1]
            pairs = annulus[:-1][np.diff(annulus) == 1]
            if len(pairs):
                quotient = np.abs(top[pairs + 1] - top[pairs]) / np.abs(
                    s[pairs + 1] - s[pairs]
                ) ** spec.holder_alpha
                local += R ** (spec.k + spec.holder_alpha) * float(np.max(quotient))

        best = max(best, R ** (-spec.tau) * local)
        R /= 2

    return best


def integral_m_phi(curve: ProfileCurve, width: int = 5, check: bool = True) -> float:
    """Integral of m phi over the link, checked against the half-resolution curve."""

    def evaluate(c: ProfileCurve) -> float:
        m = mean_curvature(c, width)
        if not np.all(np.isfinite(m)):
            raise LinkSolveError("mean curvature not evaluable at every node")
        return link_inner_product(c, m, phi(c.r, c.y))

    value = evaluate(curve)
    if check:
        n = len(curve)
        nodes = np.unique(np.concatenate((np.arange(0, n, 2), [n - 1])))
        coarse = evaluate(
            ProfileCurve.from_points(curve.points[nodes], params=curve.params)
        )
        if abs(coarse - value) > 0.1 * abs(value) + 1e-14:
            raise LinkSolveError(
                "quadrature nonconvergence: [{}] vs [{}] at half resolution".format(
                    value, coarse
                )
            )
    return value


def moment_constant_from_integral(
    integral: float, delta: float, b: float, params: ConeParams
) -> float:
    """Recover the moment constant from int m phi = 2 K b |delta|^{(W+1)/W}.

    Each pole carries one Wronskian flux K b eps^(W+1) of the glued leaf.
    """
    W = params.w_exponent
    sign = -1 if delta < 0 else 1
    return sign * integral / (POLE_COUNT * b * abs(delta) ** ((W + 1) / W))


def moment_check(cfg: GlueConfig, leaves: Optional[Leaves] = None) -> MomentCheck:
    """int m phi on the link glued at the moment radius, and the constant it gives."""
    if cfg.delta == 0:
        raise LinkSolveError("moment constant needs delta != 0")
    leaves = leaves or hardt_simon_leaves(cfg.params)
    r_glue = moment_glue_radius(cfg, leaves)
    curve = build_approximate_link(cfg, leaves, r_glue=r_glue)
    integral = integral_m_phi(curve, cfg.width)
    constant = moment_constant_from_integral(
        integral, cfg.delta, leaves[0].b, cfg.params
    )

    logger.info(
        "moment constant for delta [%s]: [%s] against [%s]",
        cfg.delta,
        constant,
        moment_constant(cfg.params),
    )
    return MomentCheck(
        delta=cfg.delta,
        integral=integral,
        constant=constant,
        expected=moment_constant(cfg.params),
        r_glue=r_glue,
    )


def glue_error(cfg: GlueConfig, leaves: Optional[Leaves] = None) -> float:
    """sup R^4 |m| over annuli of the glued link, before the Newton correction."""
    leaves = leaves or hardt_simon_leaves(cfg.params)
    curve = build_approximate_link(cfg, leaves)
    m = mean_curvature(curve, cfg.width)
    if not np.all(np.isfinite(m)):
        raise LinkSolveError("mean curvature not evaluable at every node")
    return weighted_norm(m, GLUE_ERROR_WEIGHT, curve)


def fit_h_exponent(
    deltas: Sequence[float],
    hs: Sequence[float],
    b: Optional[float] = None,
    params: Optional[ConeParams] = None,
    level: float = 0.95,
) -> HFit:
    """Log-log slope of |h| against |delta| with a t-based confidence band."""
    params = params or ConeParams()
    deltas = np.abs(np.asarray(deltas, dtype=float))
    hs = np.asarray(hs, dtype=float)

    if len(deltas) < 4:
        raise LinkSolveError(
            "h fit needs at least 4 points, got [{}]".format(len(deltas))
        )

    if np.any(deltas == 0) or np.any(hs == 0):
        raise LinkSolveError("h fit needs nonzero delta and h")

    if math.log10(deltas.max() / deltas.min()) < 1.5:
        raise LinkSolveError("h fit samples span fewer than 1.5 decades of delta")

    if len(set(np.sign(hs))) != 1:
        raise LinkSolveError("h changes sign across the sweep")

    order = np.argsort(deltas)
    if np.any(np.diff(np.abs(hs[order])) <= 0):
        raise LinkSolveError("nonmonotone |h| across the sweep")

    fit = stats.linregress(np.log(deltas), np.log(np.abs(hs)))
    spread = stats.t.ppf((1 + level) / 2, len(deltas) - 2) * fit.stderr
    prefactor = float(np.sign(hs[0]) * math.exp(fit.intercept))

    return HFit(
        exponent=float(fit.slope),
        prefactor=prefactor,
        stderr=float(fit.stderr),
        confidence=(float(fit.slope - spread), float(fit.slope + spread)),
        r_squared=float(fit.rvalue**2),
        moment_constant=moment_constant(params),
        h_constant=h_constant(params),
        h_constant_measured=None if b is None else prefactor / b,
    )


def _require_solved(link: SmoothedLink) -> None:
    if link.jacobian is None or link.zeta is None:
        raise LinkSolveError(
            "linear solve singular: link for delta [{}] has no Jacobian".format(
                link.delta
            )
        )


def glued_phi_guess(link: SmoothedLink) -> np.ndarray:
    """phi outside the gluing zones, eps^{1-W} Phi_H(./eps) inside."""
    cfg, leaves = link.config, link.leaves
    if cfg is None or leaves is None:
        return phi(link.profile.r, link.profile.y)

    params = cfg.params
    a, b = params.link_radii
    curve = link.profile
    eps = cfg.epsilon
    r_glue = glue_radius(cfg, leaves)
    radius = (curve.u * a + curve.v * b) / np.abs(curve.y)
    guess = phi(curve.r, curve.y)

    for hemisphere, leaf in zip((1, -1), _pole_leaves(cfg, leaves)):
        field_ = scaling_jacobi_field(leaf)
        leaf_radius = leaf.curve.u * a + leaf.curve.v * b
        zone = (np.sign(curve.y) == hemisphere) & (radius < 2 * r_glue)
        chi = smoothstep_cutoff(radius[zone] / r_glue)
        inner = hemisphere * np.interp(radius[zone] / eps, leaf_radius, field_.phi)
        inner = inner * eps ** (1 - params.w_exponent)
        guess[zone] = chi * inner + (1 - chi) * guess[zone]

    return guess


def build_phi_delta(link: SmoothedLink) -> LinkField:
    """L phi_delta = h'(delta) zeta with phi_delta = phi at the anchor."""
    _require_solved(link)
    curve = link.profile
    n = len(curve)
    weights = np.maximum(curve.r, 1e-8) ** 2
    zeta = link.zeta.values(curve.y)

    A = _augmented(link.jacobian, zeta, link.anchor, weights)
    rhs = np.zeros(n + 1)
    rhs[-1] = phi(curve.r[link.anchor], curve.y[link.anchor])
    solution = _factorize(A, "linear solve singular").solve(rhs)
    values, mu = solution[:n], solution[n]

    guess = glued_phi_guess(link)
    scale = np.max(np.abs(curve.r**2 * guess))
    distance = float(np.max(np.abs(curve.r**2 * (values - guess))) / scale)

    return LinkField(
        kind="phi_delta",
        curve=curve,
        values=values,
        h_prime=float(link.sign * -mu),
        guess_distance=distance,
    )


def build_xi_delta(link: SmoothedLink, phi_delta: LinkField) -> LinkField:
    """L xi_delta = zeta - c_delta phi_delta with xi_delta orthogonal to phi_delta."""
    _require_solved(link)
    curve = link.profile
    n = len(curve)
    weights = np.maximum(curve.r, 1e-8) ** 2
    zeta = link.zeta.values(curve.y)

    A = _augmented(link.jacobian, phi_delta.values, link.anchor, weights)
    rhs = np.concatenate((weights * zeta, [0.0]))
    solution = _factorize(A, "linear solve singular").solve(rhs)
    u, c = solution[:n], solution[n]

    shift = link_inner_product(curve, u, phi_delta.values) / link_inner_product(
        curve, phi_delta.values, phi_delta.values
    )
    h_prime_fixed = link.sign * (phi_delta.h_prime or 0.0)
    scale = 1 - shift * h_prime_fixed
    if abs(scale) < 1e-8:
        raise LinkSolveError("linear solve singular: xi rescaling factor vanishes")

    return LinkField(
        kind="xi_delta",
        curve=curve,
        values=(u - shift * phi_delta.values) / scale,
        c_delta=float(c / scale),
    )


def _sigma0_tail(theta: float, params: ConeParams) -> float:
    value, _ = integrate.quad(
        lambda t: math.cos(t) ** (params.p + params.q), abs(theta), math.pi / 2
    )
    return link_volume(params) * value


def area_excess(curve: ProfileCurve) -> float:
    """Area(curve) - Area(Sigma_0), Sigma_0 sampled at the same latitudes."""
    params = curve.params
    a, b = params.link_radii
    theta = np.arctan2(curve.y, curve.u * a + curve.v * b)
    if np.any(np.diff(theta) <= 0):
        raise LinkSolveError("link latitudes are not monotone along the profile")

    base = np.column_stack((a * np.cos(theta), b * np.cos(theta), np.sin(theta)))
    steps = np.linalg.norm(np.diff(base, axis=0), axis=1)
    s0 = np.concatenate(([0.0], np.cumsum(steps)))
    area0 = float(integrate.simpson(_sigma0_density(theta, params), x=s0))
    area0 += _sigma0_tail(theta[0], params) + _sigma0_tail(theta[-1], params)

    area = float(
        integrate.simpson(orbit_volume(curve.u, curve.v, params), x=curve.s)
    )
    return area - area0


def area_derivative(
    links: Sequence[SmoothedLink], phi_fields: Optional[Sequence[LinkField]] = None
) -> List[AreaRow]:
    """Finite-difference dArea/d delta against -h int zeta phi_delta."""
    if len(links) < 3 or len({link.sign for link in links}) != 1:
        raise LinkSolveError("sweep too sparse: need 3 solved deltas of one sign")

    order = sorted(range(len(links)), key=lambda i: links[i].delta)
    links = [links[i] for i in order]
    if phi_fields is None:
        fields = [build_phi_delta(link) for link in links]
    else:
        fields = [phi_fields[i] for i in order]

    deltas = np.array([link.delta for link in links])
    excess = np.array([area_excess(link.profile) for link in links])
    derivative = np.gradient(excess, deltas)

    rows = []
    for link, field_, excess_i, derivative_i in zip(links, fields, excess, derivative):
        zeta = link.zeta.values(link.profile.y)
        paired = link_inner_product(link.profile, zeta, field_.values)
        predicted = -link.h_fixed * paired
        rows.append(
            AreaRow(
                delta=link.delta,
                h=link.h,
                area_excess=float(excess_i),
                derivative=float(derivative_i),
                predicted=float(predicted),
                bound_constant=float(excess_i / abs(link.delta * link.h)),
            )
        )
    return rows


class LinkSolveError(Exception):
    """Smoothed link could not be built or solved"""

    def __init__(self, message: str, history: Optional[List[float]] = None) -> None:
        super().__init__(message)
        self.history = list(history or [])
