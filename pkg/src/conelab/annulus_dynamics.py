"""Annulus norms of Jacobi fields on C x R and the growth/decay dichotomy.

Jacobi fields are stored as finite sums of homogeneous modes from
`jacobi_spectrum`. On C x R every mode separates in polar coordinates
(rho, theta) of the (r, y) half-plane, with r = rho cos(theta) and
y = rho sin(theta), and the measure is |link| rho^{m-1} cos^{n}(theta), where
n + 1 is the dimension of C. Every integral below splits into a link factor,
an angular Beta integral and a radial power integral.
"""

import functools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np
import singer
from scipy import special

from conelab.geometry_core import ConeParams, link_volume
from conelab.jacobi_spectrum import (
    JacobiMode,
    SpectrumEntry,
    enumerate_homogeneous_jacobi,
)

logger = singer.get_logger()

_T = TypeVar("_T")

RHO0 = 0.25
NORM_COUNT = 5
SPECTRUM_COUNT = 60
MAX_DEGREE = 2
DEGREE_TOL = 1e-12
CONVEXITY_TOL = 1e-10
SLOPE_FLOOR = 4.0

GROWS = "grows"
DECAYS = "decays"
NEITHER = "neither"

Field = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ModeSum:
    """A finite sum of homogeneous Jacobi fields, coefficients on the modes."""

    modes: Tuple[JacobiMode, ...]
    excludes_degree_one: bool = False
    params: ConeParams = field(default_factory=ConeParams)

    def __post_init__(self) -> None:
        if self.excludes_degree_one and any(
            _is_degree_one(mode) for mode in self.modes
        ):
            raise AnnulusError("mode sum flagged degree-one free has a degree-1 mode")

    @property
    def degrees(self) -> np.ndarray:
        return np.array([float(mode.degree) for mode in self.modes])

    @property
    def invariant(self) -> bool:
        return all(mode.entry.invariant_sector for mode in self.modes)

    def groups(self) -> Dict[SpectrumEntry, List[JacobiMode]]:
        """Modes sharing a link eigenspace; distinct groups are L^2 orthogonal."""
        grouped: Dict[SpectrumEntry, List[JacobiMode]] = {}
        for mode in self.modes:
            grouped.setdefault(mode.entry, []).append(mode)
        return grouped

    def scaled(self, factor: float) -> "ModeSum":
        return replace(
            self,
            modes=tuple(
                replace(mode, coefficient=factor * mode.coefficient)
                for mode in self.modes
            ),
        )

    def __call__(self, r: np.ndarray, y: np.ndarray) -> np.ndarray:
        if not self.invariant:
            raise AnnulusError("pointwise values need invariant-sector modes")
        out = np.zeros(np.broadcast(r, y).shape)
        for mode in self.modes:
            out = out + mode.radial(r, y)
        return out


@dataclass(frozen=True)
class AnnulusNormVector:
    """||u||_i over B_{rho0^i} minus B_{rho0^(i+1)}, weighted by |rho^-1 u|^2 rho^-m."""

    rho0: float
    norms: np.ndarray
    m_dim: int = 8

    @property
    def ratios(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.norms[1:] / self.norms[:-1]

    @property
    def spread(self) -> float:
        """Largest relative departure from the outermost norm."""
        if self.norms[0] == 0:
            return 0.0
        return float(np.max(np.abs(self.norms / self.norms[0] - 1)))


@dataclass(frozen=True)
class TrichotomyReport:
    alpha1: float
    alpha2: float
    rho: float
    case: str
    cases: Tuple[str, ...]
    witness: Tuple[int, ...]
    norms: AnnulusNormVector

    @property
    def violations(self) -> int:
        return len(self.witness)


@dataclass(frozen=True)
class AnnulusConstants:
    alpha1: float
    alpha2: float
    rho0: float
    gap: float


@dataclass(frozen=True)
class ConvexityReport:
    t: np.ndarray
    m: np.ndarray
    slopes: np.ndarray
    min_second_difference: float

    @property
    def min_slope(self) -> float:
        return float(np.min(self.slopes))

    @property
    def convex(self) -> bool:
        return self.min_second_difference >= -CONVEXITY_TOL

    @property
    def slope_bound_holds(self) -> bool:
        return self.min_slope >= SLOPE_FLOOR - CONVEXITY_TOL


@dataclass(frozen=True)
class PropertySuite:
    constants: AnnulusConstants
    trials: int
    violations: int
    witnesses: List[int]
    min_second_difference: float
    min_slope: float
    empirical_C: float
    degree_one_spread: float

    def summary(self) -> Dict:
        return {
            "violations": self.violations,
            "alpha1": self.constants.alpha1,
            "alpha2": self.constants.alpha2,
            "rho0": self.constants.rho0,
            "gap": self.constants.gap,
            "trials": self.trials,
            "empirical_C": self.empirical_C,
            "min_second_difference": self.min_second_difference,
            "min_slope": self.min_slope,
            "degree_one_spread": self.degree_one_spread,
        }


def _is_degree_one(mode: JacobiMode) -> bool:
    return abs(float(mode.degree) - 1) < DEGREE_TOL


@functools.lru_cache(maxsize=8)
def spectrum_modes(
    params: ConeParams = ConeParams(),
    count: int = SPECTRUM_COUNT,
    max_degree: float = MAX_DEGREE,
) -> Tuple[JacobiMode, ...]:
    """Mu-plus branch Jacobi fields of degree <= max_degree."""
    return tuple(enumerate_homogeneous_jacobi(params, max_degree, count))


def random_mode_sum(
    rng: np.random.Generator,
    params: ConeParams = ConeParams(),
    n_modes: Optional[int] = None,
    exclude_degree_one: bool = True,
    invariant_only: bool = False,
) -> ModeSum:
    """Standard normal coefficients on a random subset of the spectrum modes."""
    pool = [
        mode
        for mode in spectrum_modes(params)
        if not (exclude_degree_one and _is_degree_one(mode))
        and not (invariant_only and not mode.entry.invariant_sector)
    ]
    if not pool:
        raise AnnulusError("no spectrum modes to draw from")

    size = len(pool) if n_modes is None else min(n_modes, len(pool))
    picked = sorted(rng.choice(len(pool), size=size, replace=False))
    coefficients = rng.standard_normal(size)
    modes = tuple(
        replace(pool[index], coefficient=float(c))
        for index, c in zip(picked, coefficients)
    )
    return ModeSum(modes=modes, excludes_degree_one=exclude_degree_one, params=params)


def _angular_gram(modes: Sequence[JacobiMode], n: int) -> np.ndarray:
    """int cos^n(theta) Theta_k Theta_l over (-pi/2, pi/2), as Beta functions."""
    size = len(modes)
    gram = np.zeros((size, size))
    for k in range(size):
        for l in range(k, size):
            total = 0.0
            for a, alpha, i in modes[k].terms:
                for b, beta, j in modes[l].terms:
                    if (i + j) % 2:
                        continue
                    power = float(alpha) + float(beta) + n
                    if power <= -1:
                        raise AnnulusError(
                            "divergent integrand: cos power [{}]".format(power)
                        )
                    beta_value = special.beta((power + 1) / 2, (i + j + 1) / 2)
                    total += float(a) * float(b) * beta_value
            gram[k, l] = gram[l, k] = (
                total * modes[k].coefficient * modes[l].coefficient
            )
    return gram


def _power_integral(exponent: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """int_lo^hi rho^(exponent - 1) drho, elementwise."""
    out = np.empty_like(exponent, dtype=float)
    flat = np.abs(exponent) < DEGREE_TOL
    out[flat] = math.log(hi / lo)
    e = exponent[~flat]
    out[~flat] = (hi**e - lo**e) / e
    return out


def _closed_norms_sq(u: ModeSum, rho0: float, count: int) -> np.ndarray:
    n = u.params.cone_dim - 1
    out = np.zeros(count)
    for group in u.groups().values():
        gram = _angular_gram(group, n)
        degrees = np.array([float(mode.degree) for mode in group])
        exponent = degrees[:, None] + degrees[None, :] - 2
        for i in range(count):
            radial = _power_integral(exponent, rho0 ** (i + 1), rho0**i)
            out[i] += float(np.sum(gram * radial))
    return link_volume(u.params) * out


def _tensor_nodes(
    lo: float, hi: float, n_t: int, n_s: int, jacobi: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Gauss-Legendre in log rho times Gauss-Jacobi in s = sin(theta)."""
    x, w_t = special.roots_legendre(n_t)
    half = 0.5 * math.log(hi / lo)
    t = math.log(lo) + half * (x + 1)
    s, w_s = special.roots_jacobi(n_s, jacobi, jacobi)
    T, S = np.meshgrid(t, s, indexing="ij")
    weights = half * np.outer(w_t, w_s)
    return np.exp(T), S, weights, t


def annulus_gram(
    modes: Sequence[JacobiMode],
    inner: float,
    outer: float,
    params: ConeParams = ConeParams(),
    n_t: int = 24,
    n_s: int = 24,
) -> np.ndarray:
    """Weighted annulus inner products of modes sharing one link eigenspace.

    Each mode is r^mu times a polynomial in (r^2, y), so the Gauss-Jacobi rule
    with exponent mu + (n - 1)/2 integrates the angular factor exactly.
    """
    if not modes:
        return np.zeros((0, 0))
    if len({mode.entry for mode in modes}) > 1:
        raise AnnulusError("annulus gram needs modes of one link eigenspace")
    if not 0 < inner < outer:
        raise AnnulusError("bad annulus [{}, {}]".format(inner, outer))

    mu = float(modes[0].mu)
    n = params.cone_dim - 1
    jacobi = mu + (n - 1) / 2
    if jacobi <= -1:
        raise AnnulusError("divergent integrand: mu [{}]".format(mu))

    rho, S, weights, _ = _tensor_nodes(inner, outer, n_t, n_s, jacobi)
    cos = np.sqrt(1 - S**2)
    scale = cos**mu * rho
    values = [mode.radial(rho * cos, rho * S) / scale for mode in modes]
    gram = np.empty((len(modes), len(modes)))
    for k, first in enumerate(values):
        for l, second in enumerate(values[k:], start=k):
            gram[k, l] = gram[l, k] = float(np.sum(weights * first * second))
    return link_volume(params) * gram


def _quadrature_norms_sq(
    u: Union[ModeSum, Field], rho0: float, count: int, params: ConeParams
) -> np.ndarray:
    out = np.zeros(count)
    if isinstance(u, ModeSum):
        for group in u.groups().values():
            for i in range(count):
                gram = annulus_gram(group, rho0 ** (i + 1), rho0**i, u.params)
                out[i] += float(np.sum(gram))
        return out

    n = params.cone_dim - 1
    for i in range(count):
        rho, S, weights, _ = _tensor_nodes(
            rho0 ** (i + 1), rho0**i, 48, 96, (n - 1) / 2
        )
        values = np.asarray(u(rho * np.sqrt(1 - S**2), rho * S), dtype=float)
        out[i] = link_volume(params) * float(np.sum(weights * values**2 / rho**2))
    return out


def annulus_norms(
    u: Union[ModeSum, Field],
    rho0: float = RHO0,
    count: int = NORM_COUNT,
    method: str = "quadrature",
    params: Optional[ConeParams] = None,
) -> AnnulusNormVector:
    """Norms over the annuli B_{rho0^i} minus B_{rho0^(i+1)}, i < count.

    `u` is a ModeSum or a callable u(r, y) in the invariant sector. The closed
    method sums Beta and power integrals and needs a ModeSum.
    """
    if not 0 < rho0 < 1:
        raise AnnulusError("rho0 must lie in (0, 1), got [{}]".format(rho0))
    if count < 1:
        raise AnnulusError("count must be >= 1, got [{}]".format(count))

    if params is None:
        params = u.params if isinstance(u, ModeSum) else ConeParams()

    if method == "closed":
        if not isinstance(u, ModeSum):
            raise AnnulusError("closed-form norms need a mode sum")
        squares = _closed_norms_sq(u, rho0, count)
    elif method == "quadrature":
        squares = _quadrature_norms_sq(u, rho0, count, params)
    else:
        raise AnnulusError("unknown norm method [{}]".format(method))

    if not np.all(np.isfinite(squares)):
        raise AnnulusError("divergent integrand on annuli of ratio [{}]".format(rho0))

    # cancellation leaves tiny negative squares for a zero field
    norms = np.sqrt(np.maximum(squares, 0.0))
    return AnnulusNormVector(rho0=rho0, norms=norms, m_dim=params.cone_dim + 1)


def spectral_gap(
    params: ConeParams = ConeParams(), count: int = SPECTRUM_COUNT
) -> float:
    """Smallest |degree - 1| over the non-degree-one spectrum modes."""
    gaps = [
        abs(float(mode.degree) - 1)
        for mode in spectrum_modes(params, count)
        if not _is_degree_one(mode)
    ]
    if not gaps:
        raise AnnulusError("spectrum has no modes besides degree one")
    return min(gaps)


def _constants_hold(alpha1: float, alpha2: float, gap: float, rho: float) -> bool:
    # both implications, then the dichotomy, for any norm sequence whose modes
    # all have |degree - 1| >= gap
    X = rho ** (-2 * gap)
    implication = 1 / (rho ** (-2 * (alpha1 + gap)) - 1) <= rho ** (
        -2 * (gap - alpha2)
    ) - 1
    dichotomy = X >= 2 * rho ** (-2 * alpha2)
    return implication and dichotomy


def annulus_constants(
    params: ConeParams = ConeParams(),
    rho0: float = RHO0,
    count: int = SPECTRUM_COUNT,
) -> AnnulusConstants:
    """Search (alpha1, alpha2) at ratio rho0, starting from alpha2 = gap.

    alpha1 = alpha2 / 2 throughout; alpha2 halves until the dichotomy is forced
    for every mode sum whose degrees avoid (1 - gap, 1 + gap).
    """
    gap = spectral_gap(params, count)
    alpha2 = gap
    for _ in range(12):
        if _constants_hold(alpha2 / 2, alpha2, gap, rho0):
            logger.info(
                "three-annulus constants at rho0 [%s]: alpha1 [%s], alpha2 [%s]",
                rho0,
                alpha2 / 2,
                alpha2,
            )
            return AnnulusConstants(
                alpha1=alpha2 / 2, alpha2=alpha2, rho0=rho0, gap=gap
            )
        alpha2 /= 2

    raise AnnulusError("no three-annulus constants at rho0 [{}]".format(rho0))


def _classify(
    n0: float, n1: float, n2: float, rho: float, alpha1: float, alpha2: float
) -> Tuple[str, bool]:
    if n1 == 0:
        return NEITHER, False

    inward = n2 >= rho**-alpha2 * n1
    outward = n0 >= rho**-alpha2 * n1
    broken = (n1 >= rho**-alpha1 * n0 and not inward) or (
        n1 >= rho**-alpha1 * n2 and not outward
    )

    if inward and outward:
        case = DECAYS if n2 / n1 >= n0 / n1 else GROWS
    elif inward:
        case = DECAYS
    elif outward:
        case = GROWS
    else:
        case = NEITHER
    return case, broken


def three_annulus_check(
    u: ModeSum,
    rho: float = RHO0,
    alpha1: Optional[float] = None,
    alpha2: Optional[float] = None,
    count: int = NORM_COUNT,
) -> TrichotomyReport:
    """Both implications and the dichotomy on every consecutive norm triple.

    Case `grows` means the field grows outward (the outer norm dominates),
    `decays` that it decays outward. A triple is a witness when an implication
    fails, or when a degree-one free sum reaches neither conclusion.
    """
    if count < 3:
        raise AnnulusError("need at least 3 annuli, got [{}]".format(count))
    if alpha1 is None or alpha2 is None:
        constants = annulus_constants(u.params, rho)
        alpha1 = constants.alpha1 if alpha1 is None else alpha1
        alpha2 = constants.alpha2 if alpha2 is None else alpha2

    vector = annulus_norms(u, rho, count, method="closed")
    norms = vector.norms
    cases, witness = [], []
    for i in range(count - 2):
        case, broken = _classify(*norms[i : i + 3], rho, alpha1, alpha2)
        cases.append(case)
        if broken or (u.excludes_degree_one and case == NEITHER):
            witness.append(i)

    return TrichotomyReport(
        alpha1=alpha1,
        alpha2=alpha2,
        rho=rho,
        case=cases[0],
        cases=tuple(cases),
        witness=tuple(witness),
        norms=vector,
    )


def _ball_weights(u: ModeSum) -> Tuple[np.ndarray, np.ndarray]:
    """int_{B_R} |u|^2 = sum_k w_k R^(e_k); distinct degrees are orthogonal."""
    n = u.params.cone_dim - 1
    m = u.params.cone_dim + 1
    weights, exponents = [], []
    for group in u.groups().values():
        gram = _angular_gram(group, n)
        for k, mode in enumerate(group):
            e = 2 * float(mode.degree) + m
            if e <= 0:
                raise AnnulusError(
                    "divergent integrand: degree [{}] on the unit ball".format(
                        float(mode.degree)
                    )
                )
            weights.append(link_volume(u.params) * gram[k, k] / e)
            exponents.append(e)
    return np.array(weights), np.array(exponents)


def _check_degrees(u: ModeSum) -> None:
    if u.modes and np.min(u.degrees) < -2 - DEGREE_TOL:
        raise AnnulusError(
            "mode of degree [{}] below -2".format(float(np.min(u.degrees)))
        )


def convexity_check(u: ModeSum, t: Sequence[float]) -> ConvexityReport:
    """m(t) = ln int_{B_{e^t}} |u|^2 on a uniform grid, with exact slopes."""
    _check_degrees(u)
    t = np.asarray(t, dtype=float)
    if len(t) < 3:
        raise AnnulusError("need at least 3 grid points, got [{}]".format(len(t)))

    weights, exponents = _ball_weights(u)
    keep = weights > 0
    if not np.any(keep):
        raise AnnulusError("zero field has no log-mass")
    weights, exponents = weights[keep], exponents[keep]

    logs = np.log(weights)[None, :] + exponents[None, :] * t[:, None]
    m = special.logsumexp(logs, axis=1)
    slopes = np.sum(special.softmax(logs, axis=1) * exponents[None, :], axis=1)
    second = m[2:] - 2 * m[1:-1] + m[:-2]
    return ConvexityReport(
        t=t, m=m, slopes=slopes, min_second_difference=float(np.min(second))
    )


def _scaled_values(u: ModeSum, r: np.ndarray, y: np.ndarray) -> np.ndarray:
    """r^2 u, summed term by term so r = 0 stays finite."""
    out = np.zeros(np.broadcast(r, y).shape)
    for mode in u.modes:
        for a, power, l in mode.terms:
            out = out + (
                mode.coefficient
                * float(a)
                * np.power(r, float(power) + 2)
                * np.power(y, l)
            )
    return out


def l2_norm_unit_ball(u: ModeSum) -> float:
    weights, _ = _ball_weights(u)
    return math.sqrt(max(float(np.sum(weights)), 0.0))


def l2_to_linf_ratio(u: ModeSum, n_rho: int = 201, n_theta: int = 401) -> float:
    """sup over B_{1/2} of |r^2 u|, against ||u|| in L^2(B_1)."""
    _check_degrees(u)
    if not u.invariant:
        raise AnnulusError("sup norm sampling needs invariant-sector modes")

    norm = l2_norm_unit_ball(u)
    if norm == 0:
        raise AnnulusError("zero field has no L2-to-sup ratio")

    rho = np.linspace(0.0, 0.5, n_rho)[1:]
    theta = np.linspace(-math.pi / 2, math.pi / 2, n_theta)
    R, THETA = np.meshgrid(rho, theta, indexing="ij")
    r = np.clip(R * np.cos(THETA), 0.0, None)
    sup = float(np.max(np.abs(_scaled_values(u, r, R * np.sin(THETA)))))
    return sup / norm


def _dichotomy_trial(
    child: np.random.SeedSequence,
    params: ConeParams,
    rho0: float,
    alpha1: float,
    alpha2: float,
) -> int:
    u = random_mode_sum(np.random.default_rng(child), params)
    return three_annulus_check(u, rho0, alpha1, alpha2).violations


def _convexity_trial(
    child: np.random.SeedSequence, params: ConeParams, n_modes: int, t: np.ndarray
) -> Tuple[float, float]:
    u = random_mode_sum(
        np.random.default_rng(child),
        params,
        n_modes=n_modes,
        exclude_degree_one=False,
    )
    report = convexity_check(u, t)
    return report.min_second_difference, report.min_slope


def _linf_trial(child: np.random.SeedSequence, params: ConeParams) -> float:
    u = random_mode_sum(
        np.random.default_rng(child),
        params,
        exclude_degree_one=False,
        invariant_only=True,
    )
    return l2_to_linf_ratio(u, n_rho=101, n_theta=201)


def _map_trials(
    trial: Callable[[np.random.SeedSequence], _T],
    children: Sequence[np.random.SeedSequence],
    workers: int,
) -> List[_T]:
    """Trial results in seed order, from one process or a pool of them."""
    if workers <= 1 or len(children) < 2:
        return [trial(child) for child in children]

    chunksize = max(1, len(children) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        return list(executor.map(trial, children, chunksize=chunksize))


def run_property_suite(
    params: ConeParams = ConeParams(),
    trials: int = 1000,
    seed: int = 7,
    convexity_trials: int = 500,
    linf_trials: int = 500,
    rho0: float = RHO0,
    n_modes: int = 10,
    workers: int = 1,
) -> PropertySuite:
    """Seeded sweep of the dichotomy, convexity and L2-to-sup estimates.

    Every trial draws from its own child of one seed sequence, so the suite
    gives the same numbers for any number of workers.
    """
    constants = annulus_constants(params, rho0)
    streams = np.random.SeedSequence(seed).spawn(4)

    violations = _map_trials(
        functools.partial(
            _dichotomy_trial,
            params=params,
            rho0=rho0,
            alpha1=constants.alpha1,
            alpha2=constants.alpha2,
        ),
        streams[0].spawn(trials),
        workers,
    )
    witnesses = [index for index, count in enumerate(violations) if count]
    for index in witnesses:
        logger.warning("three-annulus violation in trial [%s]", index)

    t = np.linspace(-6.0, 0.0, 61)
    convexity = _map_trials(
        functools.partial(_convexity_trial, params=params, n_modes=n_modes, t=t),
        streams[1].spawn(convexity_trials),
        workers,
    )
    second = min((pair[0] for pair in convexity), default=math.inf)
    slope = min((pair[1] for pair in convexity), default=math.inf)

    ratios = _map_trials(
        functools.partial(_linf_trial, params=params),
        streams[2].spawn(linf_trials),
        workers,
    )
    empirical = max(ratios, default=0.0)

    rng = np.random.default_rng(streams[3])
    degree_one = ModeSum(
        modes=tuple(
            replace(mode, coefficient=float(rng.standard_normal()))
            for mode in spectrum_modes(params)
            if _is_degree_one(mode)
        ),
        params=params,
    )
    spread = annulus_norms(degree_one, rho0, NORM_COUNT).spread

    logger.info(
        "property suite: [%s] violations in [%s] trials, empirical C [%s]",
        len(witnesses),
        trials,
        empirical,
    )
    return PropertySuite(
        constants=constants,
        trials=trials,
        violations=len(witnesses),
        witnesses=witnesses,
        min_second_difference=second,
        min_slope=slope,
        empirical_C=empirical,
        degree_one_spread=spread,
    )


class AnnulusError(Exception):
    """Annulus norm or dichotomy input rejected"""
