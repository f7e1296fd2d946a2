"""Hardt-Simon smoothing H of the cone and the fields it carries.

The generating curve is (u, v) = R(t) (cos t, sin t) with w = d ln R / dt. In
the variable xi = tan(2 psi), tan t = tau tan psi, tau = sqrt(q / p), the
profile equation reads

    xi dw/dxi = kappa(xi) (1 + w^2) (M xi - 2 sqrt(pq) w) / (2 (1 + xi^2))

with M = p + q + 1 and kappa = 1 when p = q.
"""

import math
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import List, Optional, Tuple, Union

import numpy as np
import singer
from scipy import integrate, interpolate, special
from scipy.sparse import linalg as sparse_linalg

from conelab.geometry_core import (
    ConeParams,
    ProfileCurve,
    jacobi_matrix,
    profile_to_graph,
    smoothstep_cutoff,
)
from conelab.jacobi_spectrum import indicial_polynomial

logger = singer.get_logger()

Number = Union[Fraction, float]

SERIES_XI = 1e-3
SINH_SCALE = 0.05
MIN_COVERAGE_XI = 1e3


@dataclass(frozen=True)
class DaviniTrajectory:
    xi: np.ndarray
    w: np.ndarray
    t: np.ndarray
    z: np.ndarray
    gap: np.ndarray
    params: ConeParams
    series_order: int
    tol: float
    agreement: float = 0.0

    @property
    def s(self) -> np.ndarray:
        return np.log(self.xi)


@dataclass(frozen=True)
class SubsolutionReport:
    eps: float
    crossing_xi: Optional[float]
    entry_xi: Optional[float]
    dominated: bool
    min_gap_beyond_one: float

    @property
    def satisfied(self) -> bool:
        return self.crossing_xi is not None and self.dominated


@dataclass(frozen=True)
class AsymptoticFit:
    leading: float
    b: float
    residual_norm: float
    window: Tuple[float, float]
    method_tag: str
    stderr: float = 0.0
    coefficients: Tuple[float, ...] = ()
    condition: float = 0.0


@dataclass(frozen=True)
class HardtSimonProfile:
    """Normalized H (side +1) or its mirror H_- (side -1).

    `radius`, `gap` and `slope` hold R, t_cone - t and w at every curve node,
    measured in the chart where the leaf leaves the axis at t = 0.
    """

    curve: ProfileCurve
    normalization: float
    side: int
    trajectory: DaviniTrajectory
    radius: np.ndarray
    gap: np.ndarray
    slope: np.ndarray
    b: Optional[float] = None
    scale: float = 1.0

    @property
    def params(self) -> ConeParams:
        return self.curve.params

    def scaled(self, factor: float) -> "HardtSimonProfile":
        curve = replace(
            self.curve,
            s=self.curve.s * factor,
            u=self.curve.u * factor,
            v=self.curve.v * factor,
        )
        return replace(
            self,
            curve=curve,
            normalization=self.normalization * factor,
            radius=self.radius * factor,
            scale=self.scale * factor,
        )

    def radius_at(self, gap: np.ndarray) -> np.ndarray:
        """R as a function of the angle to the cone, asymptotic past the data."""
        gap = np.asarray(gap, dtype=float)
        if np.any(gap <= 0) or np.any(gap > self.gap[0]):
            raise HardtSimonError("angle to the cone out of range")

        x = -np.log(self.gap)
        spline = interpolate.CubicSpline(x, np.log(self.radius))
        out = np.exp(spline(np.clip(-np.log(gap), x[0], x[-1])))

        beyond = gap < self.gap[-1]
        if np.any(beyond):
            out[beyond] = self._asymptotic_radius(gap[beyond])
        return out

    def _asymptotic_radius(self, gap: np.ndarray) -> np.ndarray:
        params = self.trajectory.params
        W = params.w_exponent
        g = 2 * math.sqrt(params.indicial_radicand)
        f = np.tan(gap)
        r = f ** (-1 / W)
        for _ in range(8):
            r = ((1 + (self.b or 0.0) * r**-g) / f) ** (1 / W)
        return self.scale * r / np.cos(gap)


@dataclass(frozen=True)
class ScalingField:
    r: np.ndarray
    phi: np.ndarray
    homothety: np.ndarray
    method: str = "exact"


@dataclass(frozen=True)
class SupersolutionField:
    a: float
    r: np.ndarray
    values: np.ndarray
    jacobi: np.ndarray
    interior: np.ndarray
    margin: float
    cutoff_radius: float
    indicial_value: float

    @property
    def constant(self) -> float:
        """C_a with |L_H F_a| >= C_a^{-1} r^{a-2} on the interior samples."""
        return 1.0 / self.margin

    @property
    def minimum(self) -> float:
        return float(np.min(self.values))


def _tau(params: ConeParams) -> float:
    return math.sqrt(params.q / params.p)


def _sigma(params: ConeParams) -> Number:
    if params.p == params.q:
        return params.q
    return math.sqrt(params.p * params.q)


def angle_factor(xi: np.ndarray, params: ConeParams) -> np.ndarray:
    """dt/dpsi expressed through xi."""
    tau_sq = params.q / params.p
    cos_2psi = 1 / np.sqrt(1 + np.asarray(xi, dtype=float) ** 2)
    return 2 * math.sqrt(tau_sq) / ((1 + tau_sq) + (1 - tau_sq) * cos_2psi)


def _angle_factor_series(params: ConeParams, order: int) -> List[Number]:
    if params.p == params.q:
        return [Fraction(1)] + [Fraction(0)] * order

    tau_sq = params.q / params.p
    denom = np.zeros(order + 1)
    denom[0] = 1 + tau_sq
    for j in range(order // 2 + 1):
        denom[2 * j] += (1 - tau_sq) * special.binom(-0.5, j)

    recip = np.zeros(order + 1)
    recip[0] = 1 / denom[0]
    for n in range(1, order + 1):
        recip[n] = -np.dot(denom[1 : n + 1], recip[n - 1 :: -1]) / denom[0]

    return list(2 * math.sqrt(tau_sq) * recip)


def _product(x: List[Number], y: List[Number], n: int) -> List[Number]:
    return [sum(x[i] * y[k - i] for i in range(k + 1)) for k in range(n + 1)]


def davini_series_coeffs(
    order: int, params: Optional[ConeParams] = None
) -> List[Number]:
    """Coefficients a_1..a_order of the analytic solution w = sum a_k xi^k, w(0) = 0.

    Exact fractions when p = q.
    """
    params = params or ConeParams()
    if order < 1 or order > 30:
        raise HardtSimonError(
            "series order must lie in [1, 30], got [{}]".format(order)
        )

    kappa = _angle_factor_series(params, order)
    M = params.cone_dim
    sigma = _sigma(params)
    zero: Number = Fraction(0) if params.p == params.q else 0.0
    a = [zero] * (order + 1)

    for n in range(1, order + 1):
        sq = _product(a, a, n)
        cube = _product(sq, a, n)
        P = [
            M * (k == 1)
            - 2 * sigma * a[k]
            + (M * sq[k - 1] if k >= 1 else 0)
            - 2 * sigma * cube[k]
            for k in range(n + 1)
        ]
        rhs = sum(kappa[j] * P[n - j] for j in range(n + 1))
        if n >= 2:
            rhs -= 2 * (n - 2) * a[n - 2]
        a[n] = rhs / (2 * n + 2 * sigma * kappa[0])

    return a[1:]


def series_value(coeffs: List[Number], xi: np.ndarray) -> np.ndarray:
    xi = np.asarray(xi, dtype=float)
    return sum(float(c) * xi ** (k + 1) for k, c in enumerate(coeffs))


def davini_rhs(s: float, state: np.ndarray, params: ConeParams) -> np.ndarray:
    """d(w, z)/ds with s = ln xi."""
    xi = math.exp(s)
    w = state[0]
    dt_ds = angle_factor(xi, params) * xi / (2 * (1 + xi**2))
    dw_ds = (1 + w**2) * (params.cone_dim * xi - 2 * _sigma(params) * w) * (
        dt_ds / xi
    )
    return np.array([dw_ds, w * dt_ds])


def _series_state(coeffs: List[Number], xi: float, params: ConeParams) -> np.ndarray:
    def dz(x: float) -> float:
        return series_value(coeffs, x) * angle_factor(x, params) / (2 * (1 + x**2))

    z, _ = integrate.quad(dz, 0.0, xi, epsabs=1e-17, epsrel=1e-14)
    return np.array([float(series_value(coeffs, xi)), z])


def cone_angles(xi: np.ndarray, params: ConeParams) -> Tuple[np.ndarray, np.ndarray]:
    """Polar angle t and its distance t_cone - t, without cancellation."""
    xi = np.asarray(xi, dtype=float)
    tau = _tau(params)
    tan_psi = np.tan(np.arctan(xi) / 2)
    t = np.arctan(tau * tan_psi)
    with np.errstate(divide="ignore", invalid="ignore"):
        gap = np.arctan(
            2 * tau * tan_psi / (xi * (1 + tan_psi) * (1 + tau**2 * tan_psi))
        )
    gap = np.where(xi == 0, params.cone_angle, gap)
    return t, gap


def _solve(
    params: ConeParams,
    state: np.ndarray,
    span: Tuple[float, float],
    s_eval: np.ndarray,
    rtol: float,
    method: str,
) -> np.ndarray:
    sol = integrate.solve_ivp(
        davini_rhs,
        span,
        state,
        method=method,
        t_eval=s_eval,
        rtol=rtol,
        atol=rtol * 1e-3,
        args=(params,),
    )

    if not sol.success or len(sol.t) != len(s_eval):
        last = math.exp(sol.t[-1]) if len(sol.t) else math.exp(span[0])
        raise HardtSimonError(
            "stiff region unresolved: {} stopped at xi [{}] ({})".format(
                method, last, sol.message
            ),
            last_xi=last,
        )
    return sol.y


def integrate_davini(
    xi_max: float = 1e6,
    tol: float = 1e-12,
    params: Optional[ConeParams] = None,
    n_points: int = 3000,
    series_order: int = 10,
    xi0: float = SERIES_XI,
) -> DaviniTrajectory:
    params = params or ConeParams()
    if xi_max < 1:
        raise HardtSimonError("xi_max must be >= 1, got [{}]".format(xi_max))

    if not 1e-14 <= tol <= 1e-6:
        raise HardtSimonError("tol must lie in [1e-14, 1e-6], got [{}]".format(tol))

    coeffs = davini_series_coeffs(series_order, params)
    sigma = np.linspace(0.0, np.arcsinh(xi_max / SINH_SCALE), n_points + 1)[1:]
    xi = SINH_SCALE * np.sinh(sigma)
    xi[-1] = xi_max

    head = xi <= xi0
    s_eval = np.log(xi[~head])
    span = (math.log(xi0), s_eval[-1])
    start = _series_state(coeffs, xi0, params)
    rtol = max(tol / 10, 100 * np.finfo(float).eps)

    primary = _solve(params, start, span, s_eval, rtol, "DOP853")
    check = _solve(params, start, span, s_eval, rtol, "LSODA")
    agreement = float(
        np.max(np.abs(primary - check) / np.maximum(np.abs(primary), xi0))
    )

    w = np.concatenate((series_value(coeffs, xi[head]), primary[0]))
    z = np.concatenate(
        ([_series_state(coeffs, x, params)[1] for x in xi[head]], primary[1])
    )
    t, gap = cone_angles(xi, params)

    if np.any(w <= 0):
        raise HardtSimonError(
            "trajectory lost positivity at xi [{}]".format(xi[np.argmax(w <= 0)])
        )

    logger.info(
        "integrated profile ODE for [%s] up to xi [%s] (integrator agreement %s)",
        params,
        xi_max,
        agreement,
    )
    return DaviniTrajectory(
        xi=xi,
        w=w,
        t=t,
        z=z,
        gap=gap,
        params=params,
        series_order=series_order,
        tol=tol,
        agreement=agreement,
    )


def _rk4(
    params: ConeParams, state: np.ndarray, span: Tuple[float, float], steps: int
) -> np.ndarray:
    h = (span[1] - span[0]) / steps
    s = span[0]
    y = np.array(state, dtype=float)
    for _ in range(steps):
        k1 = davini_rhs(s, y, params)
        k2 = davini_rhs(s + h / 2, y + h / 2 * k1, params)
        k3 = davini_rhs(s + h / 2, y + h / 2 * k2, params)
        k4 = davini_rhs(s + h, y + h * k3, params)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        s += h
    return y


def richardson_order(
    params: Optional[ConeParams] = None,
    xi_span: Tuple[float, float] = (SERIES_XI, 10.0),
    steps: int = 200,
    series_order: int = 10,
) -> float:
    """Observed order of the fixed-step RK4 reference scheme (expected 4)."""
    params = params or ConeParams()
    coeffs = davini_series_coeffs(series_order, params)
    start = _series_state(coeffs, xi_span[0], params)
    span = (math.log(xi_span[0]), math.log(xi_span[1]))

    finals = [_rk4(params, start, span, steps * 2**k)[0] for k in range(3)]
    coarse, fine = abs(finals[0] - finals[1]), abs(finals[1] - finals[2])
    if fine == 0:
        raise HardtSimonError(
            "Richardson differences vanished at [{}] steps".format(steps)
        )

    return math.log2(coarse / fine)


def subsolution_defect(
    xi: np.ndarray, eps: float, params: Optional[ConeParams] = None
) -> np.ndarray:
    """E = (R(g) - c xi)(2 + 2 xi^2) for g = c xi + eps, c = 2 / w_exponent."""
    params = params or ConeParams()
    if params.p != params.q:
        raise HardtSimonError("subsolution comparison needs p = q")

    xi = np.asarray(xi, dtype=float)
    c = 2 / params.w_exponent
    g = c * xi + eps
    return (1 + g**2) * (params.cone_dim * xi - 2 * params.q * g) - c * xi * (
        2 + 2 * xi**2
    )


def check_subsolution(traj: DaviniTrajectory, eps: float) -> SubsolutionReport:
    if not 0 < eps <= 0.1:
        raise HardtSimonError("eps must lie in (0, 0.1], got [{}]".format(eps))

    xi = traj.xi
    defect = subsolution_defect(xi, eps, traj.params)
    gap = traj.w - (2 / traj.params.w_exponent * xi + eps)
    tail = xi >= 1
    min_gap = float(np.min(gap[tail])) if np.any(tail) else float("nan")

    negative = np.flatnonzero(defect < 0)
    start = 0 if len(negative) == 0 else negative[-1] + 1
    if start >= len(xi):
        logger.warning("subsolution defect never nonnegative for eps [%s]", eps)
        return SubsolutionReport(eps, None, None, False, min_gap)

    above = np.flatnonzero(gap[start:] > 0)
    if len(above) == 0:
        return SubsolutionReport(eps, float(xi[start]), None, False, min_gap)

    entry = start + above[0]
    return SubsolutionReport(
        eps=eps,
        crossing_xi=float(xi[start]),
        entry_xi=float(xi[entry]),
        dominated=bool(np.all(gap[entry:] > 0)),
        min_gap_beyond_one=min_gap,
    )


def _fit(
    x: np.ndarray, y: np.ndarray, exponents: List[float]
) -> Tuple[np.ndarray, float, float, np.ndarray]:
    design = np.column_stack([x**e for e in exponents])
    scale = np.linalg.norm(design, axis=0)
    scaled = design / scale
    condition = float(np.linalg.cond(scaled))
    if condition > 1e10:
        raise HardtSimonError(
            "ill-conditioned expansion fit (condition number {:.3e})".format(condition),
            condition=condition,
        )

    coeffs, _, _, _ = np.linalg.lstsq(scaled, y, rcond=None)
    residual = y - scaled @ coeffs
    dof = max(len(y) - len(exponents), 1)
    cov = np.linalg.inv(scaled.T @ scaled) * float(residual @ residual) / dof
    stderr = np.sqrt(np.diag(cov)) / scale
    return coeffs / scale, float(np.linalg.norm(residual)), condition, stderr


def extract_b(
    traj: DaviniTrajectory, window: Tuple[float, float] = (1e4, 1e6)
) -> AsymptoticFit:
    """b from w = (2/W) xi + c xi^{1-g/W} + ..., W = w_exponent, g = mu_+ - mu_-."""
    params = traj.params
    if params.p != params.q:
        raise HardtSimonError("w-asymptotics needs p = q; use graph_expansion_fit")

    lo, hi = window
    if hi < 10 * lo:
        raise HardtSimonError(
            "window too narrow: [{}, {}] spans < one decade".format(lo, hi)
        )

    if lo < traj.xi[0] or hi > traj.xi[-1] * (1 + 1e-12):
        raise HardtSimonError("window [{}, {}] outside sampled range".format(lo, hi))

    W = params.w_exponent
    g = 2 * math.sqrt(params.indicial_radicand)
    mask = (traj.xi >= lo) & (traj.xi <= hi)
    xi = traj.xi[mask]
    target = traj.w[mask] - 2 / W * xi

    exponents = [1 - g / W, 1 - 2 * g / W, 0.0]
    coeffs, residual, condition, stderr = _fit(xi, target, exponents)
    to_b = -(W**2) / (2 * g) * 2 ** (g / W)

    return AsymptoticFit(
        leading=1.0,
        b=float(coeffs[0] * to_b),
        residual_norm=residual,
        window=(lo, hi),
        method_tag="w-asymptotics",
        stderr=float(abs(stderr[0] * to_b)),
        coefficients=tuple(float(c) for c in coeffs),
        condition=condition,
    )


def _window_curve(curve: ProfileCurve, mask: np.ndarray) -> ProfileCurve:
    return replace(
        curve,
        s=curve.s[mask],
        u=curve.u[mask],
        v=curve.v[mask],
        y=None if curve.y is None else curve.y[mask],
    )


def graph_expansion_fit(
    profile: HardtSimonProfile,
    window: Optional[Tuple[float, float]] = None,
    extra_terms: int = 0,
) -> AsymptoticFit:
    """Fit side * f r^W against {1, r^-g, ...} with rf the graph of H over C."""
    curve = profile.curve
    r = curve.r
    lo, hi = window or (r[-1] / 10, r[-1])
    mask = (r >= lo) & (r <= hi)
    if np.count_nonzero(mask) < 3 + extra_terms:
        raise HardtSimonError(
            "fit window [{}, {}] holds too few samples".format(lo, hi)
        )

    graph = profile_to_graph(_window_curve(curve, mask))
    params = curve.params
    W = params.w_exponent
    g = 2 * math.sqrt(params.indicial_radicand)
    x = graph.grid
    y = profile.side * graph.values / x * x**W

    exponents = [-k * g for k in range(2 + extra_terms)]
    coeffs, residual, condition, stderr = _fit(x, y, exponents)

    return AsymptoticFit(
        leading=float(coeffs[0]),
        b=float(coeffs[1]),
        residual_norm=residual,
        window=(float(lo), float(hi)),
        method_tag="graph-fit",
        stderr=float(stderr[1]),
        coefficients=tuple(float(c) for c in coeffs),
        condition=condition,
    )


def profile_from_w(traj: DaviniTrajectory, side: int = 1) -> HardtSimonProfile:
    """H from (u, v) = e^z (cos t, sin t), rescaled to unit leading coefficient.

    For side -1 the trajectory belongs to the swapped cone (q, p) and the curve
    is reflected through u = v.
    """
    if side not in (1, -1):
        raise HardtSimonError("side must be +1 or -1, got [{}]".format(side))

    if traj.xi[-1] < MIN_COVERAGE_XI:
        raise HardtSimonError(
            "insufficient coverage: trajectory ends at xi [{}] < {}".format(
                traj.xi[-1], MIN_COVERAGE_XI
            )
        )

    chart = traj.params
    gap = np.concatenate(([chart.cone_angle], traj.gap))
    slope = np.concatenate(([0.0], traj.w))
    radius = np.exp(np.concatenate(([0.0], traj.z)))

    W = chart.w_exponent
    g = 2 * math.sqrt(chart.indicial_radicand)
    r = radius * np.cos(gap)
    tail = r >= r[-1] / 10
    coeffs, _, _, _ = _fit(
        r[tail], np.tan(gap[tail]) * r[tail] ** W, [-k * g for k in range(4)]
    )
    normalization = float(coeffs[0] ** (-1 / W))
    radius = radius * normalization

    a, b = chart.link_radii
    u = radius * (a * np.cos(gap) + b * np.sin(gap))
    v = radius * (b * np.cos(gap) - a * np.sin(gap))
    points = np.column_stack((u, v))
    params = chart
    if side == -1:
        points = points[:, ::-1]
        params = ConeParams(chart.q, chart.p, chart.k)

    curve = ProfileCurve.from_points(points, params=params, orientation=side)
    profile = HardtSimonProfile(
        curve=curve,
        normalization=normalization,
        side=side,
        trajectory=traj,
        radius=radius,
        gap=gap,
        slope=slope,
    )

    fit = graph_expansion_fit(profile)
    logger.info(
        "Hardt-Simon leaf side [%s]: normalization [%s], b [%s]",
        side,
        normalization,
        fit.b,
    )
    return replace(profile, b=fit.b)


def hardt_simon_profile(
    params: Optional[ConeParams] = None,
    side: int = 1,
    xi_max: float = 1e6,
    tol: float = 1e-12,
    n_points: int = 3000,
) -> HardtSimonProfile:
    params = params or ConeParams()
    chart = params if side == 1 else ConeParams(params.q, params.p, params.k)
    traj = integrate_davini(xi_max=xi_max, tol=tol, params=chart, n_points=n_points)
    return profile_from_w(traj, side=side)


def homothety_field(profile: HardtSimonProfile) -> np.ndarray:
    """X . n at every node, n the unit normal pointing away from C."""
    return profile.radius / np.sqrt(1 + profile.slope**2)


def scaling_jacobi_field(
    profile: HardtSimonProfile,
    method: str = "exact",
    step: float = 1e-5,
    stride: int = 50,
) -> ScalingField:
    """Phi = X . n / W, the normal speed of the leaves lam^{1/W} H at lam = 1."""
    W = profile.params.w_exponent
    homothety = homothety_field(profile)
    r = profile.curve.r

    if method == "exact":
        return ScalingField(r=r, phi=homothety / W, homothety=homothety)

    if method != "finite-difference":
        raise HardtSimonError("unknown scaling field method [{}]".format(method))

    nodes = np.arange(1, len(profile.curve) - 10, stride)
    offsets = []
    for factor in (1 + step, 1 - step):
        leaf = profile.scaled(factor ** (1 / W)).curve
        sample = _window_curve(leaf, nodes)
        graph = profile_to_graph(sample, base=profile.curve, tag="curve")
        offsets.append(graph.values)

    phi = (offsets[0] - offsets[1]) / (2 * step)
    return ScalingField(
        r=r[nodes], phi=phi, homothety=homothety[nodes], method="finite-difference"
    )


def foliation_leaf(
    lam: float, plus: HardtSimonProfile, minus: Optional[HardtSimonProfile] = None
) -> HardtSimonProfile:
    """lam^{1/W} H for lam > 0, |lam|^{1/W} H_- for lam < 0."""
    if lam == 0:
        raise HardtSimonError("leaf parameter must be nonzero (lam = 0 is the cone)")

    W = plus.params.w_exponent
    if lam > 0:
        return plus.scaled(lam ** (1 / W))

    if minus is None:
        raise HardtSimonError("negative leaf parameter needs the mirror leaf H_-")
    return minus.scaled((-lam) ** (1 / W))


def build_F_a(
    a: float,
    profile: HardtSimonProfile,
    width: int = 5,
    cutoff_radius: Optional[float] = None,
) -> SupersolutionField:
    """F_a = r^a + f_a with L_H f_a = chi_R (c_a r^{a-2} - L_H r^a).

    f_a follows the faster decaying homogeneous solution r^{mu_-} past the
    last interior node, so that L_H F_a = c_a r^{a-2} on r < R.
    """
    params = profile.params
    poly = indicial_polynomial(params, "normal")
    if any(abs(a - float(root)) < 1e-12 for root in poly.roots):
        raise HardtSimonError("resonant exponent a [{}] is an indicial root".format(a))

    c_a = float(a * a + poly.coefficients[1] * a + poly.coefficients[2])
    mu_minus = float(poly.roots[1])
    curve = profile.curve
    r = curve.r

    J = jacobi_matrix(curve, width)
    empty = np.flatnonzero(np.diff(J.indptr) == 0)
    if len(empty) and empty[0] == 0:
        raise HardtSimonError("profile must start on a symmetry axis")

    system = J.tolil()
    for k in empty:
        system[k, k] = 1.0
        system[k, k - 1] = -((r[k] / r[k - 1]) ** mu_minus)
    solver = sparse_linalg.splu(system.tocsc())

    interior = np.ones(len(r), dtype=bool)
    interior[empty] = False
    base = r**a
    l_base = J @ base
    sign = math.copysign(1.0, c_a)

    R = cutoff_radius or 2 * r[0]
    while True:
        eta = smoothstep_cutoff(r / R) * (c_a * r ** (a - 2) - l_base)
        eta[empty] = 0.0
        values = base + solver.solve(eta)
        lf = J @ values
        margin = float(np.min(sign * lf[interior] * r[interior] ** (2 - a)))
        logger.debug("F_a for a [%s]: cutoff [%s], margin [%s]", a, R, margin)

        if cutoff_radius is not None or margin >= abs(c_a) / 2:
            break

        R *= 2
        if 2 * R > r[-1]:
            raise HardtSimonError(
                "no cutoff radius reaches half the sign margin "
                "(last [{}])".format(margin)
            )

    return SupersolutionField(
        a=a,
        r=r,
        values=values,
        jacobi=lf,
        interior=interior,
        margin=margin,
        cutoff_radius=R,
        indicial_value=c_a,
    )


class HardtSimonError(Exception):
    """Hardt-Simon computation failed"""

    def __init__(
        self,
        message: str,
        last_xi: Optional[float] = None,
        condition: Optional[float] = None,
    ) -> None:
        super().__init__(message)
        self.last_xi = last_xi
        self.condition = condition
