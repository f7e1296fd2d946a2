"""Log-corrected comparison surfaces over the cones V_delta = C(Sigma_delta).

Fields on a link are extended to V_delta as degree-one functions. Writing a
normal offset as rho * u(t, s) with t = ln rho, the Jacobi operator of
V_delta satisfies rho L(rho u) = u_tt + 8 u_t + J u, J the Jacobi operator of
the link. The ansatz u0 = -h [c_log phi_delta t + xi_delta] therefore leaves
only a -h c_log h' zeta t remainder once c_log = c_delta / 8.
"""

import math
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import singer
from scipy import integrate, sparse
from scipy.sparse import linalg as sparse_linalg

from conelab.geometry_core import (
    GridDerivatives,
    ProfileCurve,
    curve_frame,
    finite_difference_weights,
    generating_surface_mean_curvature,
    grid_derivatives,
    mean_curvature,
    orbit_volume,
)
from conelab.jacobi_spectrum import phi
from conelab.link_smoothing import (
    FD_STEP,
    LinkField,
    SmoothedLink,
    build_phi_delta,
    build_xi_delta,
    solve_smoothed_link,
)

logger = singer.get_logger()

STATED_LOG_CONSTANT = 1 / 7
RADIAL_LOG_CONSTANT = 1 / 8
LOG_RHO_CAP = 6.0
WIDTH = 5


@dataclass(frozen=True)
class DoublyWeightedNormSpec:
    gamma: float = 1.0
    tau: float = -2.5
    k: int = 0


@dataclass(frozen=True)
class AnnulusDomain:
    kappa: float
    delta: float
    t: np.ndarray

    @classmethod
    def build(
        cls,
        delta: float,
        kappa: float = 0.05,
        log_rho_cap: float = LOG_RHO_CAP,
        n_t: int = 41,
    ) -> "AnnulusDomain":
        if kappa <= 0:
            raise LogPerturbationError("kappa must be positive, got [{}]".format(kappa))

        reach = log_rho_cap if delta == 0 else min(abs(delta) ** -kappa, log_rho_cap)
        if reach <= 0 or n_t < 2 * WIDTH:
            raise LogPerturbationError(
                "annulus |ln rho| <= [{}] is empty".format(reach)
            )

        return cls(kappa=kappa, delta=delta, t=np.linspace(-reach, reach, n_t))

    @property
    def rho_range(self) -> Tuple[float, float]:
        return float(np.exp(self.t[0])), float(np.exp(self.t[-1]))

    @property
    def rho(self) -> np.ndarray:
        return np.exp(self.t)


@dataclass(frozen=True)
class LogConstant:
    value: float
    drift: float
    candidates: Dict[str, float]

    @property
    def matches(self) -> Optional[str]:
        name, gap = min(self.candidates.items(), key=lambda item: item[1])
        return name if gap < 1e-6 else None


@dataclass(frozen=True)
class LogPerturbedSurface:
    link: SmoothedLink
    phi_delta: Optional[LinkField]
    xi_delta: Optional[LinkField]
    domain: AnnulusDomain
    c_log: float
    f0: np.ndarray
    f_corr: np.ndarray
    normals: np.ndarray
    residual: float
    iterations: int
    cancellation_residual: float
    f_corr_norm: float
    cancellation_defect: float = 0.0

    @property
    def h(self) -> float:
        return self.link.h_fixed

    @property
    def offsets(self) -> np.ndarray:
        return self.f0 + self.f_corr

    def points(self) -> np.ndarray:
        return _surface(
            self.offsets, self.domain.t, self.link.profile.points, self.normals
        )


@dataclass(frozen=True)
class CancellationRefinement:
    delta: float
    coarse: float
    fine: float

    @property
    def order(self) -> float:
        return math.log2(self.coarse / self.fine)


@dataclass(frozen=True)
class ConeSurface:
    """Cone over a perturbed link, e.g. W_delta over V_delta."""

    link: ProfileCurve
    offsets: np.ndarray
    mean_curvature: np.ndarray
    predicted: np.ndarray
    linear_defect: float


@dataclass(frozen=True)
class MonotonicityReport:
    integral: float
    h_squared: float
    ratio: float
    pointwise_error: float


@dataclass(frozen=True)
class GraphGeometry:
    normal: np.ndarray
    first_order_normal: np.ndarray
    area_ratio: np.ndarray
    first_order_ratio: np.ndarray
    e1: float
    e2: float


def radial_mode_identity(
    f: np.ndarray, rho: np.ndarray, width: int = WIDTH
) -> Tuple[np.ndarray, np.ndarray]:
    """rho^-8 (rho^9 f')' at the interior nodes of the rho grid."""
    half = width // 2
    centers = np.arange(half, len(rho) - half)
    idx, w = finite_difference_weights(rho, centers, width)

    f = np.asarray(f, dtype=float)
    d1 = np.sum(w[:, :, 0] * f[idx], axis=1)
    d2 = np.sum(w[:, :, 1] * f[idx], axis=1)
    r = rho[centers]
    return r, d2 + 9 * d1 / r


def _cone_log_constant(n: int) -> float:
    """c with L(c phi ln rho) = phi rho^-2 on C x R.

    L = d_yy + d_rr + 6/r d_r + 6/r^2.
    """
    r = np.linspace(0.5, 2.0, n)
    y = np.linspace(0.3, 1.5, n)
    R, Y = np.meshgrid(r, y, indexing="ij")
    values = phi(R, Y) * 0.5 * np.log(R**2 + Y**2)

    half = WIDTH // 2
    centers = np.arange(half, n - half)
    ir, wr = finite_difference_weights(r, centers, WIDTH)
    iy, wy = finite_difference_weights(y, centers, WIDTH)

    inner = values[:, centers]
    f_r = np.einsum("kj,kjy->ky", wr[:, :, 0], inner[ir])
    f_rr = np.einsum("kj,kjy->ky", wr[:, :, 1], inner[ir])
    f_yy = np.einsum("kj,rkj->rk", wy[:, :, 1], values[centers][:, iy])

    Rc, Yc = R[np.ix_(centers, centers)], Y[np.ix_(centers, centers)]
    L = f_yy + f_rr + 6 * f_r / Rc + 6 * inner[centers] / Rc**2
    source = phi(Rc, Yc) / (Rc**2 + Yc**2)

    keep = np.abs(source) > 0.1 * np.max(np.abs(source))
    return float(np.median(source[keep] / L[keep]))


def radial_log_constant(
    link: Optional[SmoothedLink] = None,
    xi_delta: Optional[LinkField] = None,
    n: int = 161,
) -> LogConstant:
    """Measured c_log; on V_delta it carries the c_delta of xi_delta."""
    value = _cone_log_constant(n)
    drift = abs(value - _cone_log_constant(2 * n - 1))
    if drift > 1e-4:
        raise LogPerturbationError(
            "grid too coarse: log constant drifts by [{}] "
            "under refinement".format(drift)
        )

    candidates = {
        "1/7": abs(value - STATED_LOG_CONSTANT),
        "1/8": abs(value - RADIAL_LOG_CONSTANT),
    }
    if link is not None and link.delta != 0:
        xi_delta = xi_delta or build_xi_delta(link, build_phi_delta(link))
        value *= xi_delta.c_delta

    logger.info(
        "log constant [%s] (1/7 off by %s, 1/8 off by %s)",
        value,
        *candidates.values()
    )
    return LogConstant(value=value, drift=drift, candidates=candidates)


def _link_normals(curve: ProfileCurve) -> np.ndarray:
    frame = curve_frame(curve, WIDTH)
    if len(frame.nodes) == len(curve):
        return frame.normal

    a, b = curve.params.link_radii
    return np.tile([b, -a, 0.0], (len(curve), 1))


def _surface(u: np.ndarray, t: np.ndarray, P: np.ndarray, N: np.ndarray) -> np.ndarray:
    """rho (cos u P + sin u N) on the (t, s) grid."""
    rho = np.exp(t)[:, None, None]
    return rho * (np.cos(u)[..., None] * P[None] + np.sin(u)[..., None] * N[None])


def _scaled_mean_curvature(
    u: np.ndarray, t: np.ndarray, curve: ProfileCurve, N: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, GridDerivatives]:
    """rho m on the interior grid, together with the unit normal."""
    d = grid_derivatives(_surface(u, t, curve.points, N), t, curve.s, WIDTH)
    hint = np.broadcast_to(N[d.cols][None], d.point.shape)
    m, normal = generating_surface_mean_curvature(
        d.point, d.d_a, d.d_b, d.d_aa, d.d_ab, d.d_bb, curve.params, hint
    )
    return np.exp(t[d.rows])[:, None] * m, normal, d


def _radial_operator(t: np.ndarray) -> sparse.csr_matrix:
    """d_tt + 8 d_t on the interior t nodes."""
    half = WIDTH // 2
    centers = np.arange(half, len(t) - half)
    idx, w = finite_difference_weights(t, centers, WIDTH)
    rows = np.repeat(centers, WIDTH)
    data = (w[:, :, 1] + 8 * w[:, :, 0]).ravel()
    return sparse.csr_matrix((data, (rows, idx.ravel())), shape=(len(t), len(t)))


class AnnulusMap:
    """rho m of graphs over the cone on a link, on the interior of a (t, s) grid."""

    def __init__(
        self, t: np.ndarray, curve: ProfileCurve, normals: Optional[np.ndarray] = None
    ) -> None:
        half = WIDTH // 2
        self.t = t
        self.curve = curve
        self.normals = _link_normals(curve) if normals is None else normals
        self.shape = (len(t), len(curve))
        self.rows = np.arange(half, len(t) - half)
        self.cols = np.arange(half, len(curve) - half)
        self.scale = np.maximum(curve.r, 1e-8)

    def scaled(self, u: np.ndarray) -> np.ndarray:
        m, _, _ = _scaled_mean_curvature(u, self.t, self.curve, self.normals)
        return m

    def jacobian(self, u: np.ndarray) -> sparse.csr_matrix:
        """d (rho m) / d u by central differences, one evaluation pair per color.

        Rows are the interior nodes, columns every node of the grid.
        """
        n_t, n_s = self.shape
        half = WIDTH // 2
        width = len(self.cols)
        rows, cols, data = [], [], []

        for color_t in range(WIDTH):
            for color_s in range(WIDTH):
                I, S = np.meshgrid(
                    np.arange(color_t, n_t, WIDTH),
                    np.arange(color_s, n_s, WIDTH),
                    indexing="ij",
                )
                I, S = I.ravel(), S.ravel()
                step = np.zeros(self.shape)
                step[I, S] = FD_STEP * self.scale[S]
                diff = self.scaled(u + step) - self.scaled(u - step)

                for shift_t in range(-half, half + 1):
                    for shift_s in range(-half, half + 1):
                        target_t, target_s = I + shift_t, S + shift_s
                        keep = (
                            (target_t >= half)
                            & (target_t < n_t - half)
                            & (target_s >= half)
                            & (target_s < n_s - half)
                        )
                        a, b = target_t[keep] - half, target_s[keep] - half
                        rows.append(a * width + b)
                        cols.append(I[keep] * n_s + S[keep])
                        data.append(diff[a, b] / (2 * step[I[keep], S[keep]]))

        return sparse.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(self.rows) * width, n_t * n_s),
        )

    def newton(
        self,
        f0: np.ndarray,
        offset: np.ndarray,
        weights: np.ndarray,
        tol: float,
        max_iter: int,
    ) -> Tuple[np.ndarray, List[float]]:
        """Damped Newton for rho m(f0 + f) + offset = 0, f = 0 on the boundary."""
        interior = np.zeros(self.shape, dtype=bool)
        interior[np.ix_(self.rows, self.cols)] = True
        boundary = np.flatnonzero(~interior.ravel())
        pin = sparse.csr_matrix(
            (np.ones(len(boundary)), (np.arange(len(boundary)), boundary)),
            shape=(len(boundary), interior.size),
        )

        def residual(f: np.ndarray) -> np.ndarray:
            return self.scaled(f0 + f) + offset

        def size(res: np.ndarray) -> float:
            value = float(np.max(np.abs(weights[None, :] * res)))
            return value if np.isfinite(value) else math.inf

        f = np.zeros(self.shape)
        res = residual(f)
        history: List[float] = []
        for iteration in range(max_iter + 1):
            norm = size(res)
            history.append(norm)
            logger.debug("annulus iteration [%s]: residual [%s]", iteration, norm)
            if norm <= tol:
                return f, history

            if iteration == max_iter or not np.isfinite(norm):
                break

            A = sparse.vstack([self.jacobian(f0 + f), pin]).tocsc()
            try:
                lu = sparse_linalg.splu(A)
            except RuntimeError as exc:
                raise LogPerturbationError(
                    "annulus operator singular: {}".format(exc)
                ) from exc

            rhs = np.concatenate((-res.ravel(), np.zeros(len(boundary))))
            step = lu.solve(rhs).reshape(self.shape)
            step[~interior] = 0.0

            damping = 1.0
            while True:
                trial = residual(f + damping * step)
                if size(trial) < (1 - 1e-4 * damping) * norm:
                    f, res = f + damping * step, trial
                    break

                damping /= 2
                if damping < 1 / 1024:
                    raise LogPerturbationError(
                        "Newton failure on the annulus: no descent along the step, "
                        "residual history {}".format(history)
                    )

        raise LogPerturbationError(
            "Newton failure on the annulus: residual history {}".format(history)
        )


def doubly_weighted_norm(
    values: np.ndarray,
    spec: DoublyWeightedNormSpec,
    domain: AnnulusDomain,
    base: ProfileCurve,
) -> float:
    """sup over boxes {Q/2 < rho <= Q, R/2 < r <= R} of the local norm.

    Each box is weighted by Q^(tau-gamma) R^-tau.
    """
    values = np.asarray(values, dtype=float)
    rho = domain.rho
    r = rho[:, None] * base.r[None, :]

    if spec.k > 0:
        d_t, d_s = np.gradient(values, domain.t, base.s)
        slope = np.hypot(d_t, d_s) / rho[:, None]

    best = 0.0
    Q = 2.0 ** math.ceil(math.log2(rho[-1]))
    while Q > rho[0]:
        rows = (rho > Q / 2) & (rho <= Q)
        if not np.any(rows):
            raise LogPerturbationError("coverage gap at rho box [{}]".format(Q))

        r_box = r[rows]
        R = 2.0 ** math.ceil(math.log2(r_box.max()))
        while R > r_box[r_box > 0].min():
            cell = (r_box > R / 2) & (r_box <= R)
            if not np.any(cell):
                raise LogPerturbationError("coverage gap at box [{}, {}]".format(Q, R))

            local = float(np.max(np.abs(values[rows][cell])))
            if spec.k > 0:
                local += R * float(np.max(slope[rows][cell]))

            best = max(best, Q ** (spec.tau - spec.gamma) * R ** (-spec.tau) * local)
            R /= 2
        Q /= 2

    return best


def build_T_delta(
    link: SmoothedLink,
    kappa: float = 0.05,
    log_rho_cap: float = LOG_RHO_CAP,
    n_t: int = 41,
    phi_delta: Optional[LinkField] = None,
    xi_delta: Optional[LinkField] = None,
    tol: float = 1e-10,
    max_iter: int = 20,
) -> LogPerturbedSurface:
    """Graph of rho (u0 + f_corr) over V_delta with f_corr = 0 on the grid boundary."""
    domain = AnnulusDomain.build(link.delta, kappa, log_rho_cap, n_t)
    curve = link.profile
    t = domain.t
    shape = (len(t), len(curve))
    normals = _link_normals(curve)

    if link.delta == 0:
        zero = np.zeros(shape)
        return LogPerturbedSurface(
            link=link,
            phi_delta=None,
            xi_delta=None,
            domain=domain,
            c_log=RADIAL_LOG_CONSTANT,
            f0=zero,
            f_corr=zero,
            normals=normals,
            residual=0.0,
            iterations=0,
            cancellation_residual=0.0,
            f_corr_norm=0.0,
        )

    phi_delta = phi_delta or build_phi_delta(link)
    xi_delta = xi_delta or build_xi_delta(link, phi_delta)
    c_log = radial_log_constant(link, xi_delta).value
    h = link.h_fixed
    h_prime = link.sign * phi_delta.h_prime
    f0 = _leading_offsets(link, t, c_log, phi_delta, xi_delta, kappa)
    r = np.maximum(curve.r, 1e-12)

    zeta = link.zeta.values(curve.y)
    operator = _separated_operator(link, t)
    remainder = operator @ f0.ravel() + h * np.tile(zeta, len(t))
    expected = abs(h * h_prime) * np.max(np.abs(np.outer(t, zeta)))
    interior = np.zeros(shape, dtype=bool)
    half = WIDTH // 2
    interior[half:-half, half:-half] = True
    cancellation = float(np.max(np.abs(remainder[interior.ravel()]))) / expected

    # grid curvature of V_delta traded for the link's own: rho m(V_delta) = m(link)
    annulus = AnnulusMap(t, curve, normals)
    link_m = mean_curvature(curve, WIDTH)[annulus.cols]
    offset = link_m[None, :] - annulus.scaled(np.zeros(shape))
    weights = r[annulus.cols] ** 2
    defect = _cancellation_defect(annulus, operator, f0, weights)

    logger.info(
        "building T_delta for delta [%s] on |ln rho| <= [%s]", link.delta, t[-1]
    )
    f_corr, history = annulus.newton(f0, offset, weights, tol, max_iter)
    logger.info(
        "T_delta for delta [%s]: residual [%s] after %s iterations",
        link.delta,
        history[-1],
        len(history) - 1,
    )

    spec = DoublyWeightedNormSpec(gamma=1.0, tau=-2.5)
    norm = doubly_weighted_norm(domain.rho[:, None] * f_corr, spec, domain, curve)

    return LogPerturbedSurface(
        link=link,
        phi_delta=phi_delta,
        xi_delta=xi_delta,
        domain=domain,
        c_log=c_log,
        f0=f0,
        f_corr=f_corr,
        normals=normals,
        residual=history[-1],
        iterations=len(history) - 1,
        cancellation_residual=cancellation,
        f_corr_norm=norm / abs(h),
        cancellation_defect=defect,
    )


def _leading_offsets(
    link: SmoothedLink,
    t: np.ndarray,
    c_log: float,
    phi_delta: LinkField,
    xi_delta: LinkField,
    kappa: float,
) -> np.ndarray:
    """u0 = -h [c_log phi_delta t + xi_delta] on the (t, s) grid."""
    h = link.h_fixed
    f0 = -h * (c_log * np.outer(t, phi_delta.values) + xi_delta.values[None, :])
    r = np.maximum(link.profile.r, 1e-12)
    if np.max(np.abs(f0) / r[None, :]) >= 0.5:
        raise LogPerturbationError(
            "outside perturbative regime: |h ln rho| too large "
            "for kappa [{}]".format(kappa)
        )
    return f0


def _separated_operator(link: SmoothedLink, t: np.ndarray) -> sparse.csr_matrix:
    """d_tt + 8 d_t + J on the (t, s) grid, J the Jacobi matrix of the link."""
    n = len(link.profile)
    return sparse.kron(_radial_operator(t), sparse.identity(n)) + sparse.kron(
        sparse.identity(len(t)), link.jacobian
    )


def _cancellation_defect(
    annulus: AnnulusMap,
    operator: sparse.csr_matrix,
    f0: np.ndarray,
    weights: np.ndarray,
) -> float:
    """Weighted gap between rho L(rho f0) on the grid of V_delta and operator f0."""
    interior = np.ix_(annulus.rows, annulus.cols)
    geometric = annulus.jacobian(np.zeros(annulus.shape)) @ f0.ravel()
    geometric = geometric.reshape(len(annulus.rows), len(annulus.cols))
    separated = (operator @ f0.ravel()).reshape(annulus.shape)[interior]
    gap = np.max(weights[None, :] * np.abs(geometric - separated))
    return float(gap / np.max(weights[None, :] * np.abs(separated)))


def cancellation_defect(
    link: SmoothedLink,
    kappa: float = 0.05,
    log_rho_cap: float = LOG_RHO_CAP,
    n_t: int = 41,
) -> float:
    """Discretization defect of the leading cancellation, without the Newton solve."""
    if link.delta == 0:
        return 0.0

    domain = AnnulusDomain.build(link.delta, kappa, log_rho_cap, n_t)
    phi_delta = build_phi_delta(link)
    xi_delta = build_xi_delta(link, phi_delta)
    c_log = radial_log_constant(link, xi_delta).value
    f0 = _leading_offsets(link, domain.t, c_log, phi_delta, xi_delta, kappa)

    annulus = AnnulusMap(domain.t, link.profile)
    weights = np.maximum(link.profile.r, 1e-12)[annulus.cols] ** 2
    return _cancellation_defect(
        annulus, _separated_operator(link, domain.t), f0, weights
    )


def cancellation_refinement(
    link: SmoothedLink,
    kappa: float = 0.05,
    log_rho_cap: float = LOG_RHO_CAP,
    n_t: int = 41,
) -> CancellationRefinement:
    """Cancellation defect on the grid of link and on the grid with halved steps.

    The finer link is solved again with 2 n - 1 nodes.
    """
    if link.config is None or link.leaves is None or link.delta == 0:
        raise LogPerturbationError("refinement needs a solved link with delta != 0")

    n_nodes = 2 * link.config.n_nodes - 1
    fine_link = solve_smoothed_link(replace(link.config, n_nodes=n_nodes), link.leaves)
    refinement = CancellationRefinement(
        delta=link.delta,
        coarse=cancellation_defect(link, kappa, log_rho_cap, n_t),
        fine=cancellation_defect(fine_link, kappa, log_rho_cap, 2 * n_t - 1),
    )
    logger.info(
        "cancellation defect for delta [%s]: [%s] -> [%s], order [%s]",
        link.delta,
        refinement.coarse,
        refinement.fine,
        refinement.order,
    )
    return refinement


def build_W_delta(
    link: SmoothedLink, xi_delta: Optional[LinkField] = None
) -> ConeSurface:
    """Cone over the link offset by -h xi_delta.

    To first order m(W) = h c_delta phi_delta.
    """
    xi_delta = xi_delta or build_xi_delta(link, build_phi_delta(link))
    curve = link.profile
    normals = _link_normals(curve)
    offsets = -link.h_fixed * xi_delta.values

    points = (
        np.cos(offsets)[:, None] * curve.points + np.sin(offsets)[:, None] * normals
    )
    perturbed = ProfileCurve.from_points(points, params=curve.params)
    m = mean_curvature(perturbed, WIDTH)
    predicted = mean_curvature(curve, WIDTH) + link.jacobian @ offsets

    weights = curve.r**2
    defect = np.max(weights * np.abs(m - predicted)) / np.max(
        weights * np.abs(predicted - mean_curvature(curve, WIDTH))
    )
    return ConeSurface(
        link=perturbed,
        offsets=offsets,
        mean_curvature=m,
        predicted=predicted,
        linear_defect=float(defect),
    )


def scaling_distance(
    T: LogPerturbedSurface, W: ConeSurface, log_lambdas: Sequence[float]
) -> Dict[float, float]:
    """(1, -2)-weighted distance of Lambda T_delta from W_delta, over |h|.

    Measured on the annulus between the spheres of radius 1/2 and 1.
    """
    t = T.domain.t
    r = np.maximum(T.link.profile.r, 1e-12)
    window = np.linspace(-math.log(2), 0.0, 9)
    out = {}
    for log_lambda in log_lambdas:
        shifted = window - log_lambda
        if shifted[0] < t[0] or shifted[-1] > t[-1]:
            raise LogPerturbationError(
                "scaling [{}] moves the unit annulus off the grid".format(log_lambda)
            )
        offsets = np.stack(
            [np.interp(shifted, t, T.offsets[:, j]) for j in range(T.offsets.shape[1])],
            axis=1,
        )
        gap = np.max(r**2 * np.abs(offsets - W.offsets[None, :]))
        out[log_lambda] = float(gap / abs(T.h))
    return out


def _annulus_integral(
    T: LogPerturbedSurface, rows: np.ndarray
) -> Tuple[float, np.ndarray, np.ndarray]:
    t = T.domain.t
    _, normal, d = _scaled_mean_curvature(T.offsets, t, T.link.profile, T.normals)
    keep = np.isin(d.rows, rows)
    point = d.point[keep]
    z_dot_n = np.sum(point * normal[keep], axis=-1)
    radius = np.linalg.norm(point, axis=-1)
    orbits = orbit_volume(point[..., 0], point[..., 1], T.link.profile.params)
    area = orbits * np.linalg.norm(np.cross(d.d_a[keep], d.d_b[keep]), axis=-1)
    density = z_dot_n**2 / radius**10 * area
    inner = integrate.simpson(density, x=T.link.profile.s[d.cols], axis=1)
    return float(integrate.simpson(inner, x=t[d.rows[keep]])), z_dot_n, d.cols


def monotonicity_integrand(T: LogPerturbedSurface) -> MonotonicityReport:
    """Integral of |z.n|^2 |z|^-10 over T_delta for 1/4 <= |z| <= 1/2."""
    t = T.domain.t
    rows = np.flatnonzero((t >= math.log(0.25)) & (t <= math.log(0.5)))
    if len(rows) < 5:
        raise LogPerturbationError("annulus 1/4 < rho < 1/2 not covered by the grid")

    integral, z_dot_n, columns = _annulus_integral(T, rows)
    h = T.h
    if h == 0:
        return MonotonicityReport(
            integral=integral,
            h_squared=0.0,
            ratio=0.0,
            pointwise_error=float(np.max(np.abs(z_dot_n))),
        )

    coarse, _, _ = _annulus_integral(T, rows[::2])
    if abs(coarse - integral) > 0.1 * abs(integral):
        raise LogPerturbationError(
            "quadrature nonconvergence: [{}] vs [{}]".format(integral, coarse)
        )

    rho = np.exp(t[np.intersect1d(rows, np.arange(WIDTH // 2, len(t) - WIDTH // 2))])
    predicted = h * T.c_log * rho[:, None] * T.phi_delta.values[columns][None, :]
    error = np.max(np.abs(z_dot_n - predicted)) / np.max(np.abs(predicted))
    return MonotonicityReport(
        integral=integral,
        h_squared=h**2,
        ratio=integral / h**2,
        pointwise_error=float(error),
    )


def graph_geometry(
    curve: ProfileCurve, f: np.ndarray, width: int = WIDTH, smallness: float = 0.5
) -> GraphGeometry:
    """Normal and area ratio of the normal graph of f over a planar profile.

    Exact values use n_f ~ (1 - f k) n - f' T and the orbit radii of the
    displaced points; first-order values are n - f' T and 1 - f m.
    """
    if curve.is_link:
        raise LogPerturbationError("graph geometry needs a planar profile")

    frame = curve_frame(curve, width)
    nodes = frame.nodes
    f = np.asarray(f, dtype=float)
    f_s = np.gradient(f, curve.s, edge_order=2)[nodes]
    f_n = f[nodes]
    bend = 1 - f_n * frame.curvature

    too_large = np.max(np.abs(f_n * frame.curvature)) >= smallness
    if too_large or np.max(np.abs(f_s)) >= smallness:
        raise LogPerturbationError(
            "graph too large: smallness of f and its slope violated"
        )

    exact = bend[:, None] * frame.normal - f_s[:, None] * frame.tangent
    exact /= np.linalg.norm(exact, axis=1)[:, None]
    first = frame.normal - f_s[:, None] * frame.tangent

    params = curve.params
    u, v = curve.u[nodes], curve.v[nodes]
    u_f = u + f_n * frame.normal[:, 0]
    v_f = v + f_n * frame.normal[:, 1]
    ratio = (u_f / u) ** params.p * (v_f / v) ** params.q * np.sqrt(bend**2 + f_s**2)
    first_ratio = 1 - f_n * mean_curvature(curve, width)[nodes]

    return GraphGeometry(
        normal=exact,
        first_order_normal=first,
        area_ratio=ratio,
        first_order_ratio=first_ratio,
        e1=float(np.max(np.linalg.norm(exact - first, axis=1))),
        e2=float(np.max(np.abs(ratio - first_ratio))),
    )


class LogPerturbationError(Exception):
    """Comparison surface on the annulus could not be built"""
