from fractions import Fraction

import numpy as np
import pytest

from conelab import jacobi_spectrum
from conelab.geometry_core import ConeParams
from conelab.jacobi_spectrum import SpectrumError


@pytest.fixture(scope="module")
def samples():
    return jacobi_spectrum.sample_annulus()


def test_lowest_link_eigenvalues_simons():
    entries = jacobi_spectrum.link_eigenvalues(ConeParams(), 3)
    assert [e.eigenvalue for e in entries] == [-6, 0, 6]
    assert entries[0].mode == (0, 0)
    assert entries[0].invariant_sector
    assert entries[1].modes == ((0, 1), (1, 0))
    assert entries[1].multiplicity == 8
    assert (1, 1) in entries[2].modes
    assert entries[2].multiplicity == 16


def test_laplace_eigenvalue_closed_form():
    for k, l in [(0, 0), (1, 2), (3, 1)]:
        expected = 2 * (k * (k + 2) + l * (l + 2))
        assert jacobi_spectrum.laplace_eigenvalue(k, l, ConeParams()) == expected


def test_lowest_eigenvalue_is_minus_curvature():
    for params in [ConeParams(3, 3), ConeParams(2, 4), ConeParams(3, 5)]:
        lowest = jacobi_spectrum.link_eigenvalues(params, 1)[0]
        assert lowest.eigenvalue == -(params.p + params.q)
        assert -lowest.eigenvalue == params.link_curvature_sq


def test_link_eigenvalues_count():
    with pytest.raises(SpectrumError):
        jacobi_spectrum.link_eigenvalues(ConeParams(), 0)


@pytest.mark.parametrize(
    "eigenvalue, plus, minus", [(-6, -2, -3), (0, 0, -5), (6, 1, -6)]
)
def test_indicial_roots(eigenvalue, plus, minus):
    root = jacobi_spectrum.indicial_roots(eigenvalue, ConeParams())
    assert (root.mu_plus, root.mu_minus) == (plus, minus)
    assert root.exact


def test_indicial_roots_satisfy_polynomial():
    for entry in jacobi_spectrum.link_eigenvalues(ConeParams(), 12):
        root = jacobi_spectrum.indicial_roots(entry.eigenvalue, ConeParams())
        for mu in (root.mu_plus, root.mu_minus):
            assert float(mu * mu + 5 * mu - entry.eigenvalue) == pytest.approx(
                0.0, abs=1e-9
            )


def test_indicial_roots_irrational():
    root = jacobi_spectrum.indicial_roots(1, ConeParams())
    assert not root.exact
    assert root.mu_plus == pytest.approx(-2.5 + np.sqrt(7.25))


def test_below_indicial_threshold():
    with pytest.raises(SpectrumError, match="below indicial threshold"):
        jacobi_spectrum.indicial_roots(-7, ConeParams())


def test_indicial_polynomial_forms():
    normal = jacobi_spectrum.indicial_polynomial(ConeParams(), "normal")
    assert normal.coefficients == (1, 5, 6)
    assert normal.roots == (Fraction(-2), Fraction(-3))
    assert normal.roots[0] == jacobi_spectrum.indicial_roots(-6, ConeParams()).mu_plus

    rf = jacobi_spectrum.indicial_polynomial(ConeParams(), "rf")
    assert rf.coefficients == (1, 7, 12)
    assert rf.roots == (Fraction(-3), Fraction(-4))


def test_indicial_polynomial_uses_link_curvature():
    for params in [ConeParams(2, 4), ConeParams(3, 5)]:
        normal = jacobi_spectrum.indicial_polynomial(params, "normal")
        assert normal.coefficients[2] == params.link_curvature_sq
        assert isinstance(params.link_curvature_sq, Fraction)


def test_enumerate_degrees_simons():
    modes = jacobi_spectrum.enumerate_homogeneous_jacobi(ConeParams(), max_degree=1)
    assert {m.mu for m in modes} == {-2, 0, 1}
    for mode in modes:
        assert mode.degree == mode.mu + mode.y_degree
        for _, power, l in mode.terms:
            assert power + l == mode.degree
    assert not any(-3 < m.degree < -2 for m in modes)


def test_enumerate_contains_phi():
    modes = jacobi_spectrum.enumerate_homogeneous_jacobi(ConeParams(), max_degree=1)
    phi = [m for m in modes if m.mu == -2 and m.y_degree == 3]
    assert len(phi) == 1
    assert [(float(a), float(p), l) for a, p, l in phi[0].terms] == [
        (1.0, -2.0, 3),
        (-1.0, 0.0, 1),
    ]


def test_invariant_modes_are_jacobi_fields():
    modes = jacobi_spectrum.enumerate_homogeneous_jacobi(ConeParams(), max_degree=2)
    r, y = np.meshgrid(np.linspace(0.1, 1.0, 7), np.linspace(-1.0, 1.0, 9))
    for mode in modes:
        if mode.entry.invariant_sector:
            residual = jacobi_spectrum.invariant_jacobi_residual(
                mode.terms, r, y, ConeParams()
            )
            assert np.max(np.abs(residual)) < 1e-9


def test_degree_two_invariant_mode():
    modes = jacobi_spectrum.enumerate_homogeneous_jacobi(ConeParams(), max_degree=2)
    (mode,) = [m for m in modes if m.mu == -2 and m.y_degree == 4]
    assert [a for a, _, _ in mode.terms] == [1, -2, Fraction(1, 5)]


def test_enumerate_max_degree():
    with pytest.raises(SpectrumError):
        jacobi_spectrum.enumerate_homogeneous_jacobi(ConeParams(), max_degree=3)


def test_verify_phi_jacobi():
    r, y = np.meshgrid(np.linspace(0.1, 1.0, 25), np.linspace(-1.0, 1.0, 25))
    report = jacobi_spectrum.verify_phi_jacobi(r, y)
    assert report.max_scaled_residual < 1e-10


def test_pure_cubic_term_is_not_jacobi():
    r, y = np.meshgrid(np.linspace(0.1, 1.0, 5), np.linspace(-1.0, 1.0, 5))
    residual = jacobi_spectrum.invariant_jacobi_residual(
        [(1.0, -2.0, 3)], r, y, ConeParams()
    )
    np.testing.assert_allclose(np.abs(residual), 6 * np.abs(y) * r**-2.0)


def test_verify_phi_rejects_axis():
    with pytest.raises(SpectrumError):
        jacobi_spectrum.verify_phi_jacobi(np.array([0.0, 1.0]), np.array([0.5, 0.5]))


def test_decompose_phi(samples):
    values = jacobi_spectrum.phi(samples.r, samples.y)
    result = jacobi_spectrum.decompose_degree_one(values, samples)
    assert result.lambda_phi == pytest.approx(1.0, abs=1e-10)
    assert np.max(np.abs(result.skew)) < 1e-10
    assert result.residual < 1e-10
    assert result.rank == 25


def test_decompose_rotation(samples):
    skew = np.zeros((9, 9))
    skew[0, 8], skew[8, 0] = 1.0, -1.0
    values = jacobi_spectrum.rotation_field(skew, samples.points)
    result = jacobi_spectrum.decompose_degree_one(values, samples)
    np.testing.assert_allclose(result.skew, skew, atol=1e-8)
    assert result.lambda_phi == pytest.approx(0.0, abs=1e-10)
    np.testing.assert_allclose(result.skew, -result.skew.T)


def test_decompose_is_projection(samples):
    skew = np.zeros((9, 9))
    skew[1, 5], skew[5, 1] = 0.3, -0.3
    values = jacobi_spectrum.rotation_field(
        skew, samples.points
    ) + 2.0 * jacobi_spectrum.phi(samples.r, samples.y)
    first = jacobi_spectrum.decompose_degree_one(values, samples)
    projected = jacobi_spectrum.rotation_field(
        first.skew, samples.points
    ) + first.lambda_phi * jacobi_spectrum.phi(samples.r, samples.y)
    second = jacobi_spectrum.decompose_degree_one(projected, samples)
    np.testing.assert_allclose(second.skew, first.skew, atol=1e-10)
    assert second.lambda_phi == pytest.approx(first.lambda_phi, abs=1e-10)


def test_decompose_phi_plus_degree_two(samples):
    r, y = samples.r, samples.y
    degree_two = y**4 / r**2 - 2 * y**2 + 0.2 * r**2
    values = jacobi_spectrum.phi(r, y) + degree_two
    result = jacobi_spectrum.decompose_degree_one(values, samples)
    assert result.lambda_phi == pytest.approx(1.0, abs=1e-8)
    assert result.residual == pytest.approx(samples.norm(degree_two), rel=1e-6)


def test_decompose_rank_deficient():
    samples = jacobi_spectrum.sample_annulus(n_rho=1, n_theta=1)
    with pytest.raises(SpectrumError, match="rank-deficient"):
        jacobi_spectrum.decompose_degree_one(np.ones(len(samples.weights)), samples)


def test_stability_conditions_flag_simons():
    for params in [ConeParams(3, 3), ConeParams(2, 4)]:
        report = jacobi_spectrum.stability_conditions(params)
        assert report.mu_real
        assert report.integer_degrees == [((0, 0), -2)]
        assert report.degree_zero_from_translations
        assert report.degree_one_from_rotations
        assert not report.satisfied


def test_stability_conditions_higher_dimension():
    report = jacobi_spectrum.stability_conditions(ConeParams(3, 4))
    assert report.integer_degrees == []
    assert report.satisfied
