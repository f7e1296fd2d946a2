"""Link spectra, indicial roots and homogeneous Jacobi fields of C and C x R."""

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import singer

from conelab.geometry_core import ConeParams

logger = singer.get_logger()

Number = Union[Fraction, float]

# vertices of the 24-cell: an equal-weight spherical 5-design on S^3
_HALF = [0.5, -0.5]
CELL_24 = np.array(
    [v for i in range(4) for v in (np.eye(4)[i], -np.eye(4)[i])]
    + list(itertools.product(_HALF, _HALF, _HALF, _HALF))
)

DEGREE_ONE_RANK = 25


def exact_sqrt(x: Fraction) -> Optional[Fraction]:
    if x < 0:
        return None
    num, den = math.isqrt(x.numerator), math.isqrt(x.denominator)
    if num * num == x.numerator and den * den == x.denominator:
        return Fraction(num, den)
    return None


def harmonic_dimension(degree: int, sphere_dim: int) -> int:
    """Dimension of the degree-k spherical harmonics on S^n."""
    n = sphere_dim
    if degree < 0:
        return 0
    total = math.comb(degree + n, n)
    if degree >= 2:
        total -= math.comb(degree - 2 + n, n)
    return total


@dataclass(frozen=True)
class SpectrumEntry:
    """One eigenvalue of -L on the product link, with every (k, l) label."""

    modes: Tuple[Tuple[int, int], ...]
    laplace_eig: Fraction
    eigenvalue: Fraction
    multiplicity: int

    @property
    def mode(self) -> Tuple[int, int]:
        return self.modes[0]

    @property
    def invariant_sector(self) -> bool:
        return (0, 0) in self.modes


@dataclass(frozen=True)
class IndicialRoot:
    eigenvalue: Number
    mu_plus: Number
    mu_minus: Number

    @property
    def exact(self) -> bool:
        return isinstance(self.mu_plus, Fraction)


@dataclass(frozen=True)
class IndicialPolynomial:
    kind: str
    coefficients: Tuple[Fraction, Fraction, Fraction]
    roots: Tuple[Number, Number]


@dataclass(frozen=True)
class JacobiMode:
    """r^mu phi_j(omega) sum_k a_k r^{2k} y^{n-2k}, homogeneous of degree mu + n."""

    entry: SpectrumEntry
    mu: Number
    y_degree: int
    terms: Tuple[Tuple[Fraction, Number, int], ...]
    coefficient: float = 1.0

    @property
    def degree(self) -> Number:
        return self.mu + self.y_degree

    def radial(self, r: np.ndarray, y: np.ndarray) -> np.ndarray:
        """The (r, y) factor, the whole field in the invariant sector."""
        out = np.zeros(np.broadcast(r, y).shape)
        for a, power, l in self.terms:
            out = out + float(a) * np.power(r, float(power)) * np.power(y, l)
        return self.coefficient * out


@dataclass(frozen=True)
class PhiJacobiReport:
    max_scaled_residual: float
    residual: np.ndarray
    r: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class AnnulusSamples:
    """Quadrature nodes of the cone C x R over B_1 minus B_{1/2}."""

    points: np.ndarray
    weights: np.ndarray

    @property
    def r(self) -> np.ndarray:
        return np.linalg.norm(self.points[:, :8], axis=1)

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 8]

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        return float(np.sum(self.weights * f * g))

    def norm(self, f: np.ndarray) -> float:
        return math.sqrt(max(self.inner(f, f), 0.0))


@dataclass(frozen=True)
class DegreeOneDecomposition:
    skew: np.ndarray
    lambda_phi: float
    residual: float
    rank: int


@dataclass(frozen=True)
class StabilityReport:
    params: ConeParams
    mu_real: bool
    integer_degrees: List[Tuple[Tuple[int, int], Number]] = field(default_factory=list)
    degree_zero_from_translations: bool = True
    degree_one_from_rotations: bool = True

    @property
    def satisfied(self) -> bool:
        return (
            self.mu_real
            and not self.integer_degrees
            and self.degree_zero_from_translations
            and self.degree_one_from_rotations
        )


def laplace_eigenvalue(k: int, l: int, params: ConeParams) -> Fraction:
    n = params.p + params.q
    a_sq = Fraction(params.p, n)
    b_sq = Fraction(params.q, n)
    return k * (k + params.p - 1) / a_sq + l * (l + params.q - 1) / b_sq


def link_eigenvalues(params: ConeParams, count: int) -> List[SpectrumEntry]:
    """Lowest `count` distinct eigenvalues of -L = Laplacian - |A|^2 on the link."""
    if count < 1:
        raise SpectrumError("count must be >= 1, got [{}]".format(count))

    curvature = params.link_curvature_sq
    bound = count + 1
    grouped: Dict[Fraction, List[Tuple[int, int]]] = {}
    for k in range(bound + 1):
        for l in range(bound + 1):
            grouped.setdefault(laplace_eigenvalue(k, l, params), []).append((k, l))

    # every eigenvalue below the smallest one with k or l = bound is complete
    ceiling = min(
        laplace_eigenvalue(bound, 0, params), laplace_eigenvalue(0, bound, params)
    )
    values = sorted(value for value in grouped if value < ceiling)
    if len(values) < count:
        raise SpectrumError(
            "enumeration bound too small for [{}] entries".format(count)
        )

    entries = []
    for value in values[:count]:
        modes = tuple(sorted(grouped[value]))
        multiplicity = sum(
            harmonic_dimension(k, params.p) * harmonic_dimension(l, params.q)
            for k, l in modes
        )
        entries.append(
            SpectrumEntry(
                modes=modes,
                laplace_eig=value,
                eigenvalue=value - curvature,
                multiplicity=multiplicity,
            )
        )

    logger.debug("link spectrum for [%s]: %s entries", params, len(entries))
    return entries


def _quadratic_roots(b: Fraction, c: Fraction) -> Tuple[Number, Number]:
    """Roots of a^2 + b a + c, larger first."""
    disc = b * b / 4 - c
    if disc < 0:
        raise SpectrumError(
            "below indicial threshold: discriminant [{}] < 0".format(disc)
        )
    root = exact_sqrt(disc)
    if root is not None:
        return -b / 2 + root, -b / 2 - root
    shift = float(b) / 2
    return -shift + math.sqrt(disc), -shift - math.sqrt(disc)


def indicial_roots(eigenvalue: Number, params: ConeParams) -> IndicialRoot:
    """Roots of a^2 + (dim C - 2) a - lambda for the cone C."""
    lam = Fraction(eigenvalue) if not isinstance(eigenvalue, float) else eigenvalue
    b = Fraction(params.cone_dim - 2)

    if isinstance(lam, float):
        disc = float(b) ** 2 / 4 + lam
        if disc < 0:
            raise SpectrumError(
                "below indicial threshold: discriminant [{}] < 0".format(disc)
            )
        plus = -float(b) / 2 + math.sqrt(disc)
        return IndicialRoot(lam, plus, -float(b) - plus)

    plus, minus = _quadratic_roots(b, -lam)
    return IndicialRoot(lam, plus, minus)


def indicial_polynomial(params: ConeParams, kind: str = "normal") -> IndicialPolynomial:
    """L_C r^a = P(a) r^{a-2} on normal graphs, or on graphs r f with f = r^a."""
    m = params.cone_dim
    curvature = params.link_curvature_sq

    if kind == "normal":
        coefficients = (Fraction(1), Fraction(m - 2), Fraction(curvature))
    elif kind == "rf":
        coefficients = (Fraction(1), Fraction(m), Fraction(m - 1 + curvature))
    else:
        raise SpectrumError("unknown indicial polynomial kind [{}]".format(kind))

    roots = _quadratic_roots(coefficients[1], coefficients[2])
    return IndicialPolynomial(kind=kind, coefficients=coefficients, roots=roots)


def _mode_terms(mu: Number, y_degree: int, shift: Number) -> Tuple:
    terms = []
    a: Number = Fraction(1)
    for k in range(y_degree // 2 + 1):
        l = y_degree - 2 * k
        if k > 0:
            a = -(l + 2) * (l + 1) * a / (4 * k * (k + mu + shift))
        terms.append((a, mu + 2 * k, l))
    return tuple(terms)


def enumerate_homogeneous_jacobi(
    params: ConeParams, max_degree: Number = 1, count: int = 60
) -> List[JacobiMode]:
    """Jacobi fields of C x R with degree <= max_degree on the mu_plus branch."""
    if max_degree > 2:
        raise SpectrumError("max_degree must be <= 2, got [{}]".format(max_degree))

    shift = Fraction(params.cone_dim - 2, 2)
    modes = []
    for entry in link_eigenvalues(params, count):
        mu = indicial_roots(entry.eigenvalue, params).mu_plus
        if mu > max_degree:
            break
        n = 0
        while mu + n <= max_degree:
            terms = _mode_terms(mu, n, shift)
            modes.append(JacobiMode(entry=entry, mu=mu, y_degree=n, terms=terms))
            n += 1

    return modes


def invariant_jacobi_residual(
    terms: Sequence[Tuple[Number, Number, int]],
    r: np.ndarray,
    y: np.ndarray,
    params: ConeParams,
) -> np.ndarray:
    """L_{C x R} of sum a r^alpha y^l in closed form, invariant sector only."""
    m = params.cone_dim
    curvature = params.link_curvature_sq
    out = np.zeros(np.broadcast(r, y).shape)
    for a, alpha, l in terms:
        a, alpha = float(a), float(alpha)
        radial = alpha**2 + (m - 2) * alpha + curvature
        out = out + a * radial * np.power(r, alpha - 2) * np.power(y, l)
        if l >= 2:
            out = out + a * l * (l - 1) * np.power(r, alpha) * np.power(y, l - 2)
    return out


PHI_TERMS = ((1.0, -2.0, 3), (-1.0, 0.0, 1))


def phi(r: np.ndarray, y: np.ndarray) -> np.ndarray:
    """The degree-one Jacobi field y^3 r^-2 - y of C x R."""
    return y**3 / r**2 - y


def verify_phi_jacobi(
    r: np.ndarray, y: np.ndarray, params: Optional[ConeParams] = None
) -> PhiJacobiReport:
    params = params or ConeParams()
    r, y = np.broadcast_arrays(np.asarray(r, dtype=float), np.asarray(y, dtype=float))
    if np.any(r <= 0):
        raise SpectrumError("grid must avoid the singular axis r = 0")

    residual = invariant_jacobi_residual(PHI_TERMS, r, y, params)
    return PhiJacobiReport(
        max_scaled_residual=float(np.max(np.abs(residual) * r**3)),
        residual=residual,
        r=r,
        y=y,
    )


def sample_annulus(n_rho: int = 6, n_theta: int = 16) -> AnnulusSamples:
    """Product quadrature: 24-cell on each S^3, Gauss in radius and latitude."""
    a = b = 1 / math.sqrt(2)
    x_rho, w_rho = np.polynomial.legendre.leggauss(n_rho)
    rho = 0.75 + 0.25 * x_rho
    w_rho = 0.25 * w_rho * rho**7
    x_theta, w_theta = np.polynomial.legendre.leggauss(n_theta)
    theta = 0.5 * math.pi * x_theta
    w_theta = 0.5 * math.pi * w_theta * np.cos(theta) ** 6

    first, second = np.meshgrid(np.arange(24), np.arange(24), indexing="ij")
    first, second = first.ravel(), second.ravel()
    sphere_weight = (2 * math.pi**2 / 24) ** 2 * a**3 * b**3

    points, weights = [], []
    for rho_, wr in zip(rho, w_rho):
        for theta_, wt in zip(theta, w_theta):
            c = rho_ * math.cos(theta_)
            block = np.column_stack(
                (
                    c * a * CELL_24[first],
                    c * b * CELL_24[second],
                    np.full(len(first), rho_ * math.sin(theta_)),
                )
            )
            points.append(block)
            weights.append(np.full(len(first), wr * wt * sphere_weight))

    return AnnulusSamples(points=np.vstack(points), weights=np.concatenate(weights))


def cone_normal(points: np.ndarray) -> np.ndarray:
    x1, x2 = points[:, :4], points[:, 4:8]
    nu = np.hstack(
        (
            x1 / np.linalg.norm(x1, axis=1)[:, None],
            -x2 / np.linalg.norm(x2, axis=1)[:, None],
            np.zeros((len(points), 1)),
        )
    )
    return nu / math.sqrt(2)


def skew_generators(dim: int = 9) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(dim) for j in range(i + 1, dim)]


def rotation_field(skew: np.ndarray, points: np.ndarray) -> np.ndarray:
    """The Jacobi field (A z) . nu(z) of the rotation generated by A."""
    return np.sum((points @ skew.T) * cone_normal(points), axis=1)


def decompose_degree_one(
    values: np.ndarray,
    samples: Optional[AnnulusSamples] = None,
    rank_tol: float = 1e-10,
) -> DegreeOneDecomposition:
    """Weighted least squares onto rotation fields plus span{phi}."""
    samples = samples or sample_annulus()
    points = samples.points
    nu = cone_normal(points)

    pairs = skew_generators(points.shape[1])
    columns = [points[:, j] * nu[:, i] - points[:, i] * nu[:, j] for i, j in pairs]
    columns.append(phi(samples.r, samples.y))
    design = np.column_stack(columns)

    root_w = np.sqrt(samples.weights)
    solution, _, rank, singular = np.linalg.lstsq(
        design * root_w[:, None], values * root_w, rcond=rank_tol
    )

    if rank != DEGREE_ONE_RANK:
        raise SpectrumError(
            "rank-deficient sample set: rank [{}], expected [{}]".format(
                rank, DEGREE_ONE_RANK
            )
        )

    skew = np.zeros((points.shape[1], points.shape[1]))
    for c, (i, j) in zip(solution[:-1], pairs):
        skew[i, j] = c
        skew[j, i] = -c

    residual = samples.norm(values - design @ solution)
    return DegreeOneDecomposition(
        skew=skew, lambda_phi=float(solution[-1]), residual=residual, rank=int(rank)
    )


def stability_conditions(params: ConeParams, count: int = 60) -> StabilityReport:
    """Integer degrees in ((3-n)/2, 0) and the degree 0/1 symmetry count."""
    n = params.p + params.q + 2
    window = (Fraction(3 - n, 2), Fraction(0))
    flagged = []
    translations = rotations = True

    for entry in link_eigenvalues(params, count):
        root = indicial_roots(entry.eigenvalue, params)
        mu = root.mu_plus
        if mu > 1:
            break

        integral = isinstance(mu, Fraction) and mu.denominator == 1
        if integral and window[0] < mu < window[1]:
            flagged.append((entry.mode, mu))
        if integral and mu == 0:
            translations = entry.multiplicity == n
        if integral and mu == 1:
            rotations = entry.multiplicity == (params.p + 1) * (params.q + 1)

    return StabilityReport(
        params=params,
        mu_real=params.indicial_radicand >= 0,
        integer_degrees=flagged,
        degree_zero_from_translations=translations,
        degree_one_from_rotations=rotations,
    )


class SpectrumError(Exception):
    """Spectral data unavailable"""
