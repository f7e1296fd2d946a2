import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest

from conelab import geometry_core, hardt_simon
from conelab.geometry_core import ConeParams
from conelab.hardt_simon import HardtSimonError


@pytest.fixture(scope="module")
def profile():
    return hardt_simon.hardt_simon_profile(ConeParams(), xi_max=1e6, tol=1e-12)


@pytest.fixture(scope="module")
def trajectory(profile):
    return profile.trajectory


@pytest.fixture(scope="module")
def mirror():
    return hardt_simon.hardt_simon_profile(ConeParams(), side=-1, xi_max=1e5, tol=1e-10)


def test_series_first_coefficient():
    assert hardt_simon.davini_series_coeffs(1) == [Fraction(7, 8)]


def test_series_three_coefficients():
    assert hardt_simon.davini_series_coeffs(3) == [
        Fraction(7, 8),
        Fraction(0),
        Fraction(-35, 1024),
    ]


def test_series_residual_order():
    coeffs = hardt_simon.davini_series_coeffs(2)
    xi = np.linspace(1e-4, 1e-2, 50)
    w = hardt_simon.series_value(coeffs, xi)
    dw = sum(float(c) * (k + 1) * xi**k for k, c in enumerate(coeffs))
    rhs = (1 + w**2) * (7 * xi - 6 * w) / (2 * (1 + xi**2))
    assert np.all(np.abs(xi * dw - rhs) <= 10 * xi**3)


def test_series_general_sphere_dimensions():
    a1 = hardt_simon.davini_series_coeffs(1, ConeParams(2, 4))[0]
    assert a1 == pytest.approx(7 * math.sqrt(2) / 10)


@pytest.mark.parametrize("order", [0, 31])
def test_series_order_range(order):
    with pytest.raises(HardtSimonError):
        hardt_simon.davini_series_coeffs(order)


def test_integrate_rejects_tolerance():
    with pytest.raises(HardtSimonError, match="tol"):
        hardt_simon.integrate_davini(xi_max=10.0, tol=1e-3)


def test_integrate_rejects_short_range():
    with pytest.raises(HardtSimonError, match="xi_max"):
        hardt_simon.integrate_davini(xi_max=0.5)


def test_trajectory_matches_series(trajectory):
    w = np.interp(0.01, trajectory.xi, trajectory.w)
    assert w == pytest.approx(0.00875, abs=5e-7)


def test_trajectory_positive_and_above_subsolution(trajectory):
    assert np.all(trajectory.w > 0)
    assert np.interp(100.0, trajectory.xi, trajectory.w) > 200 / 3


def test_integrators_agree(trajectory):
    assert trajectory.agreement < 10 * trajectory.tol


def test_richardson_order():
    order = hardt_simon.richardson_order()
    assert 3.7 <= order <= 4.3


def test_w_minus_leading_term_positive_increasing(trajectory):
    tail = trajectory.xi >= 10
    excess = trajectory.w[tail] - 2 / 3 * trajectory.xi[tail]
    assert np.all(excess > 0)
    assert np.all(np.diff(excess) > 0)


def test_subsolution_defect_closed_form():
    eps = 0.01
    xi = np.geomspace(1e-3, 1e3, 40)
    expected = (
        4 / 3 * eps * xi**2 - 5 * eps**2 * xi + 5 / 3 * xi - 6 * eps**3 - 6 * eps
    )
    np.testing.assert_allclose(
        hardt_simon.subsolution_defect(xi, eps), expected, rtol=1e-9, atol=1e-12
    )


def test_subsolution_defect_at_sqrt_eps():
    eps = 1e-4
    defect = hardt_simon.subsolution_defect(np.sqrt(eps), eps)
    assert defect > 0
    assert defect == pytest.approx(5 / 3 * math.sqrt(eps), abs=10 * eps)


def test_subsolution_defect_positive_at_ten():
    assert hardt_simon.subsolution_defect(10.0, 0.01) > 0


def test_check_subsolution(trajectory):
    report = hardt_simon.check_subsolution(trajectory, 0.01)
    assert report.satisfied
    assert report.crossing_xi < 1
    assert report.min_gap_beyond_one > 0


def test_check_subsolution_eps_range(trajectory):
    with pytest.raises(HardtSimonError, match="eps"):
        hardt_simon.check_subsolution(trajectory, 0.5)


def synthetic_trajectory(w_of_xi):
    xi = np.geomspace(1e3, 1e6, 400)
    zeros = np.zeros_like(xi)
    return hardt_simon.DaviniTrajectory(
        xi=xi,
        w=w_of_xi(xi),
        t=zeros,
        z=zeros,
        gap=zeros,
        params=ConeParams(),
        series_order=10,
        tol=1e-12,
    )


def test_extract_b_synthetic():
    traj = synthetic_trajectory(lambda xi: 2 / 3 * xi + xi ** (2 / 3))
    fit = hardt_simon.extract_b(traj, (1e3, 1e6))
    assert fit.b == pytest.approx(-9 * 2 ** (-2 / 3), rel=1e-9)
    assert fit.method_tag == "w-asymptotics"


def test_extract_b_window_too_narrow():
    traj = synthetic_trajectory(lambda xi: 2 / 3 * xi)
    with pytest.raises(HardtSimonError, match="window too narrow"):
        hardt_simon.extract_b(traj, (1e4, 5e4))


def test_extract_b_needs_equal_spheres(trajectory):
    traj = replace(trajectory, params=ConeParams(2, 4))
    with pytest.raises(HardtSimonError, match="p = q"):
        hardt_simon.extract_b(traj)


def test_b_negative_and_stable(trajectory):
    low = hardt_simon.extract_b(trajectory, (5e3, 6e4))
    high = hardt_simon.extract_b(trajectory, (8e4, 1e6))
    assert low.b < 0
    assert high.b == pytest.approx(low.b, rel=1e-2)


def test_graph_fit_normalized(profile):
    fit = hardt_simon.graph_expansion_fit(profile)
    assert fit.leading == pytest.approx(1.0, abs=1e-4)
    assert fit.b < 0


def test_graph_fit_synthetic():
    r = np.geomspace(5.0, 200.0, 300)
    graph = geometry_core.GraphOverCone.from_rf(r, r**-3.0 - 0.5 * r**-4.0)
    curve = geometry_core.graph_to_profile(graph)
    profile = hardt_simon.HardtSimonProfile(
        curve=curve,
        normalization=1.0,
        side=1,
        trajectory=None,
        radius=curve.r,
        gap=np.zeros(len(r)),
        slope=np.zeros(len(r)),
    )
    fit = hardt_simon.graph_expansion_fit(profile, window=(5.0, 200.0))
    assert fit.leading == pytest.approx(1.0, abs=1e-9)
    assert fit.b == pytest.approx(-0.5, abs=1e-8)


def test_cross_method_b(profile, trajectory):
    from_w = hardt_simon.extract_b(trajectory)
    from_graph = hardt_simon.graph_expansion_fit(profile)
    assert abs(from_w.b - from_graph.b) / abs(from_graph.b) < 0.02


def test_graph_fit_without_intermediate_powers(profile):
    base = hardt_simon.graph_expansion_fit(profile)
    extended = hardt_simon.graph_expansion_fit(profile, extra_terms=1)
    assert extended.b == pytest.approx(base.b, rel=5e-3)


def test_profile_is_minimal(profile):
    curve = profile.curve
    m = geometry_core.mean_curvature(curve, width=5)
    interior = slice(2, -2)
    assert np.max(np.abs(m[interior]) * curve.r[interior]) < 1e-6


def test_profile_leaves_axis_radially(profile, trajectory):
    curve = profile.curve
    assert curve.v[0] == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(
        curve.v[1:11] / curve.u[1:11], np.tan(trajectory.t[:10]), rtol=1e-9
    )


def test_profile_xi_relation(profile, trajectory):
    graph = geometry_core.profile_to_graph(
        replace(
            profile.curve,
            s=profile.curve.s[-500:],
            u=profile.curve.u[-500:],
            v=profile.curve.v[-500:],
        )
    )
    f = graph.values / graph.grid
    np.testing.assert_allclose(
        (1 - f**2) / (2 * f), trajectory.xi[-500:], rtol=1e-8
    )
    r = graph.grid
    leading = 2 * trajectory.xi[-500:] * (1 + profile.b / r) / r**3
    assert np.all(np.abs(leading - 1) < 1e-4)


def test_profile_needs_coverage():
    traj = hardt_simon.integrate_davini(xi_max=100.0, tol=1e-8, n_points=400)
    with pytest.raises(HardtSimonError, match="insufficient coverage"):
        hardt_simon.profile_from_w(traj)


def test_mirror_leaf(mirror):
    curve = mirror.curve
    assert curve.u[0] == pytest.approx(0.0, abs=1e-14)
    assert np.all(curve.v[1:] > curve.u[1:])
    fit = hardt_simon.graph_expansion_fit(mirror)
    assert fit.leading == pytest.approx(1.0, abs=1e-4)


def test_scaling_field_asymptotics(profile):
    field = hardt_simon.scaling_jacobi_field(profile)
    assert np.all(field.phi > 0)
    i = np.argmin(np.abs(field.r - 100.0))
    r = field.r[i]
    expected = 1 + 4 / 3 * profile.b / r
    assert field.phi[i] * r**2 == pytest.approx(expected, abs=1e-3)


def test_scaling_field_is_jacobi(profile):
    field = hardt_simon.scaling_jacobi_field(profile)
    lphi = geometry_core.jacobi_operator(profile.curve, field.phi, width=5)
    interior = slice(2, -2)
    assert np.max(np.abs(lphi[interior]) * field.r[interior] ** 4) < 1e-6


def test_scaling_field_finite_difference(profile):
    exact = hardt_simon.scaling_jacobi_field(profile)
    fd = hardt_simon.scaling_jacobi_field(profile, method="finite-difference")
    nodes = np.searchsorted(exact.r, fd.r)
    np.testing.assert_allclose(fd.phi, exact.phi[nodes], rtol=1e-4)


def test_leaf_graph_over_h_is_scaling_field(profile):
    lam = 0.01
    field = hardt_simon.scaling_jacobi_field(profile)
    nodes = np.arange(1, len(profile.curve) - 10, 97)
    leaf = hardt_simon.foliation_leaf(1 + lam, profile).curve
    sample = replace(leaf, s=leaf.s[nodes], u=leaf.u[nodes], v=leaf.v[nodes])
    graph = geometry_core.profile_to_graph(sample, base=profile.curve, tag="curve")
    assert np.all(
        np.abs(graph.values - lam * field.phi[nodes]) <= 2 * lam**2 * field.phi[nodes]
    )


def test_foliation_leaf_scaling(profile):
    leaf = hardt_simon.foliation_leaf(8.0, profile)
    np.testing.assert_allclose(leaf.curve.u, 2 * profile.curve.u)


def test_foliation_leaf_errors(profile):
    with pytest.raises(HardtSimonError, match="nonzero"):
        hardt_simon.foliation_leaf(0.0, profile)
    with pytest.raises(HardtSimonError, match="mirror"):
        hardt_simon.foliation_leaf(-1.0, profile)


def test_foliation_leaf_negative(profile, mirror):
    leaf = hardt_simon.foliation_leaf(-8.0, profile, mirror)
    np.testing.assert_allclose(leaf.curve.v, 2 * mirror.curve.v)


def test_radius_at_matches_nodes(profile):
    nodes = np.array([10, 500, 2000])
    np.testing.assert_allclose(
        profile.radius_at(profile.gap[nodes]), profile.radius[nodes], rtol=1e-12
    )


def test_radius_at_beyond_data(profile):
    gap = profile.gap[-1] / 8
    radius = profile.radius_at(np.array([gap]))[0]
    assert radius == pytest.approx(2 * profile.radius[-1], rel=1e-2)


def test_supersolution_zero(profile):
    field = hardt_simon.build_F_a(0.0, profile)
    r = field.r[field.interior]
    assert np.min(r**2 * field.jacobi[field.interior]) > 0
    assert field.margin >= 3.0
    assert field.constant > 0


def test_negative_field_positive(profile):
    field = hardt_simon.build_F_a(-2.1, profile)
    assert field.indicial_value == pytest.approx(-0.09)
    assert np.all(field.jacobi[field.interior] < 0)
    assert field.minimum > 0


@pytest.mark.parametrize("a", [-2.0, -3.0])
def test_resonant_exponent(profile, a):
    with pytest.raises(HardtSimonError, match="resonant exponent"):
        hardt_simon.build_F_a(a, profile)


def test_general_sphere_dimensions_minimal():
    profile = hardt_simon.hardt_simon_profile(ConeParams(2, 4), xi_max=1e5, tol=1e-11)
    curve = profile.curve
    m = geometry_core.mean_curvature(curve, width=5)
    interior = slice(2, -2)
    assert np.max(np.abs(m[interior]) * curve.r[interior]) < 1e-5
    assert np.isfinite(profile.b)
