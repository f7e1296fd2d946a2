import math

import numpy as np
import pytest

from conelab import link_smoothing, log_perturbation
from conelab.geometry_core import ProfileCurve
from conelab.link_smoothing import GlueConfig
from conelab.log_perturbation import (
    AnnulusDomain,
    DoublyWeightedNormSpec,
    LogPerturbationError,
)


def arc(radius=1.0, n=400):
    t = np.linspace(0.2, 1.3, n)
    return ProfileCurve(s=radius * t, u=radius * np.cos(t), v=radius * np.sin(t))


def cone_line(n=201):
    r = np.linspace(1.0, 2.0, n)
    return ProfileCurve(s=r, u=r / math.sqrt(2), v=r / math.sqrt(2))


@pytest.fixture(scope="module")
def solved():
    leaves = link_smoothing.hardt_simon_leaves(xi_max=1e5, tol=1e-10)
    return link_smoothing.solve_smoothed_link(
        GlueConfig(delta=1e-3, n_nodes=301), leaves
    )


@pytest.fixture(scope="module")
def surface(solved):
    return log_perturbation.build_T_delta(solved, kappa=0.05)


def test_radial_identity_on_log():
    rho = np.geomspace(0.5, 2.0, 401)
    r, values = log_perturbation.radial_mode_identity(np.log(rho), rho)
    np.testing.assert_allclose(values, 8 * r**-2.0, rtol=1e-6)


@pytest.mark.parametrize("a", [1.0, 2.0, -2.5])
def test_radial_identity_on_powers(a):
    rho = np.geomspace(0.5, 2.0, 401)
    r, values = log_perturbation.radial_mode_identity(rho**a, rho)
    np.testing.assert_allclose(values, a * (a + 8) * r ** (a - 2), rtol=1e-6)


@pytest.mark.parametrize("a", [0.0, -8.0])
def test_radial_identity_kernel(a):
    rho = np.geomspace(0.5, 2.0, 401)
    r, values = log_perturbation.radial_mode_identity(rho**a, rho)
    assert np.max(np.abs(values * r ** (2 - a))) < 1e-4


def test_log_constant_on_cone():
    constant = log_perturbation.radial_log_constant()
    assert constant.value == pytest.approx(1 / 8, abs=1e-6)
    assert constant.matches == "1/8"
    assert constant.candidates["1/7"] > 1e-2


def test_annulus_domain():
    domain = AnnulusDomain.build(1e-2, kappa=0.05)
    assert domain.t[-1] == pytest.approx(1e-2**-0.05)
    assert domain.rho_range[0] == pytest.approx(math.exp(-(1e-2**-0.05)))
    assert AnnulusDomain.build(0.0).t[-1] == 6.0
    assert AnnulusDomain.build(1e-30, kappa=0.5, log_rho_cap=2.0).t[-1] == 2.0


def test_annulus_domain_rejects_kappa():
    with pytest.raises(LogPerturbationError, match="kappa"):
        AnnulusDomain.build(1e-2, kappa=0.0)


def test_doubly_weighted_norm_homogeneous():
    base = link_smoothing.sigma0_curve(n=401)
    spec = DoublyWeightedNormSpec(gamma=1.0, tau=-2.5)
    norms = []
    for n_t in (41, 81):
        domain = AnnulusDomain.build(0.0, log_rho_cap=2.0, n_t=n_t)
        values = domain.rho[:, None] * base.r[None, :] ** spec.tau
        norms.append(log_perturbation.doubly_weighted_norm(values, spec, domain, base))
    for norm in norms:
        assert 4.0 <= norm <= 2**2.5 + 1e-9
    assert norms[0] == pytest.approx(norms[1], rel=0.2)


def test_doubly_weighted_norm_zero():
    base = link_smoothing.sigma0_curve(n=201)
    domain = AnnulusDomain.build(0.0, log_rho_cap=1.0, n_t=21)
    values = np.zeros((21, 201))
    assert log_perturbation.doubly_weighted_norm(
        values, DoublyWeightedNormSpec(k=1), domain, base
    ) == 0.0


def test_graph_geometry_concentric_sphere():
    curve = arc()
    result = log_perturbation.graph_geometry(curve, np.full(len(curve), 0.01))
    np.testing.assert_allclose(result.area_ratio, 1.01**7, rtol=1e-9)
    np.testing.assert_allclose(result.first_order_ratio, 1.07, rtol=1e-6)
    assert result.e1 < 1e-12


def test_graph_geometry_errors_are_quadratic():
    curve = arc()
    large = log_perturbation.graph_geometry(curve, np.full(len(curve), 0.01))
    small = log_perturbation.graph_geometry(curve, np.full(len(curve), 0.005))
    assert large.e2 / small.e2 == pytest.approx(4.0, rel=0.2)

    line = cone_line()
    steep = log_perturbation.graph_geometry(line, 0.05 * line.s)
    shallow = log_perturbation.graph_geometry(line, 0.025 * line.s)
    assert steep.e1 == pytest.approx(math.sqrt(1 + 0.05**2) - 1, rel=1e-6)
    assert steep.e1 / shallow.e1 == pytest.approx(4.0, rel=0.2)


def test_graph_geometry_smallness():
    curve = arc()
    with pytest.raises(LogPerturbationError, match="smallness"):
        log_perturbation.graph_geometry(curve, np.full(len(curve), 0.6))


def test_graph_geometry_needs_planar_profile():
    curve = link_smoothing.sigma0_curve(n=101)
    with pytest.raises(LogPerturbationError, match="planar"):
        log_perturbation.graph_geometry(curve, np.zeros(101))


def test_cone_is_position_orthogonal():
    equator = link_smoothing.solve_smoothed_link(GlueConfig(delta=0.0, n_nodes=201))
    surface = log_perturbation.build_T_delta(equator, log_rho_cap=2.0)
    report = log_perturbation.monotonicity_integrand(surface)
    assert report.integral < 1e-12
    assert report.pointwise_error < 1e-10


@pytest.mark.slow
def test_T_delta_leading_cancellation(surface):
    assert surface.cancellation_residual <= 1.0
    assert surface.residual <= 1e-10
    assert np.max(np.abs(surface.f_corr[0])) < 1e-14
    assert np.isfinite(surface.f_corr_norm)


@pytest.mark.slow
def test_T_delta_meets_W_delta_at_unit_sphere(surface, solved):
    W = log_perturbation.build_W_delta(solved, surface.xi_delta)
    middle = np.argmin(np.abs(surface.domain.t))
    np.testing.assert_allclose(surface.f0[middle], W.offsets, atol=1e-14)

    distances = log_perturbation.scaling_distance(surface, W, [-0.5, 0.0, 0.5])
    assert all(np.isfinite(d) and d >= 0 for d in distances.values())


@pytest.mark.slow
def test_W_delta_mean_curvature(solved, surface):
    W = log_perturbation.build_W_delta(solved, surface.xi_delta)
    curve = solved.profile
    target = solved.h_fixed * surface.xi_delta.c_delta * surface.phi_delta.values
    scale = np.max(curve.r**2 * np.abs(target))
    assert np.max(curve.r**2 * np.abs(W.predicted - target)) < 1e-4 * scale
    assert W.linear_defect < 0.1


@pytest.mark.slow
def test_monotonicity_lower_bound(surface):
    report = log_perturbation.monotonicity_integrand(surface)
    assert report.integral > 0
    assert report.ratio > 0
    assert report.pointwise_error < 0.5


def window(n):
    values = np.zeros(n)
    values[1:-1] = np.hanning(n - 2)
    return values


@pytest.fixture(scope="module")
def small_annulus():
    curve = link_smoothing.sigma0_curve(n=61, r_min=0.05)
    t = np.linspace(-1.0, 1.0, 13)
    annulus = log_perturbation.AnnulusMap(t, curve)
    bump = 1e-3 * np.outer(window(len(t)), window(len(curve)) * curve.r)
    return annulus, bump


def test_annulus_jacobian_column(small_annulus):
    annulus, bump = small_annulus
    jac = annulus.jacobian(bump)
    n_s = annulus.shape[1]
    for node in [(4, 10), (6, 30), (8, 50)]:
        direction = np.zeros(annulus.shape)
        direction[node] = 1e-7
        fd = annulus.scaled(bump + direction) - annulus.scaled(bump - direction)
        fd /= 2e-7
        column = jac[:, node[0] * n_s + node[1]].toarray().reshape(fd.shape)
        atol = 1e-6 * np.max(np.abs(fd))
        np.testing.assert_allclose(column, fd, rtol=1e-4, atol=atol)
        assert np.count_nonzero(column) <= 25


def test_annulus_newton_recovers_offsets(small_annulus):
    annulus, bump = small_annulus
    f0 = np.zeros(annulus.shape)
    offset = -annulus.scaled(bump)
    weights = annulus.curve.r[annulus.cols] ** 2
    f, history = annulus.newton(f0, offset, weights, tol=1e-11, max_iter=10)
    assert history[-1] <= 1e-11
    assert len(history) <= 6
    assert all(b < a for a, b in zip(history, history[1:]))
    np.testing.assert_allclose(f, bump, atol=1e-8)
    assert np.all(f[:2] == 0) and np.all(f[:, -2:] == 0)


def test_annulus_newton_reports_stagnation(small_annulus):
    annulus, bump = small_annulus
    offset = -annulus.scaled(bump)
    weights = annulus.curve.r[annulus.cols] ** 2
    with pytest.raises(LogPerturbationError, match="Newton failure"):
        annulus.newton(np.zeros(annulus.shape), offset, weights, tol=0.0, max_iter=1)


@pytest.mark.slow
def test_T_delta_converges_on_coarse_grid(solved):
    coarse = log_perturbation.build_T_delta(solved, kappa=0.05, n_t=21)
    assert coarse.residual <= 1e-10
    assert coarse.iterations <= 8
    assert np.all(coarse.f_corr[:2] == 0)


def test_cancellation_defect_vanishes_on_equator_link():
    link = link_smoothing.solve_smoothed_link(GlueConfig(delta=0.0, n_nodes=301))
    assert log_perturbation.cancellation_defect(link) == 0.0
    with pytest.raises(LogPerturbationError, match="delta != 0"):
        log_perturbation.cancellation_refinement(link)


def test_refinement_order_from_defects():
    refinement = log_perturbation.CancellationRefinement(
        delta=1e-3, coarse=1.6e-5, fine=1e-6
    )
    assert refinement.order == pytest.approx(4.0)


@pytest.mark.slow
def test_surface_records_cancellation_defect(surface, solved):
    assert surface.cancellation_defect > 0
    assert surface.cancellation_defect == pytest.approx(
        log_perturbation.cancellation_defect(solved, kappa=0.05), rel=1e-10
    )


@pytest.mark.slow
def test_cancellation_defect_refines(solved):
    refinement = log_perturbation.cancellation_refinement(solved, kappa=0.05, n_t=13)
    assert refinement.fine < refinement.coarse
    assert refinement.order >= 1.8
