import math

import numpy as np
import pytest
from scipy import integrate

from conelab import link_smoothing
from conelab.geometry_core import ConeParams, ProfileCurve
from conelab.jacobi_spectrum import phi
from conelab.link_smoothing import (
    GlueConfig,
    LinkSolveError,
    SmoothedLink,
    WeightedNormSpec,
)


@pytest.fixture(scope="module")
def leaves():
    return link_smoothing.hardt_simon_leaves(xi_max=1e5, tol=1e-10)


@pytest.fixture(scope="module")
def sigma0():
    return link_smoothing.sigma0_curve(n=801)


@pytest.fixture(scope="module")
def solved(leaves):
    return link_smoothing.solve_smoothed_link(
        GlueConfig(delta=1e-3, n_nodes=401), leaves
    )


def test_phi_norm_simons():
    assert link_smoothing.phi_norm_sq() == pytest.approx(math.pi**5 / 64, rel=1e-10)


def test_h_constant_simons():
    assert link_smoothing.h_constant() == pytest.approx(64 / math.pi, rel=1e-10)


def test_glue_moment():
    assert link_smoothing.glue_moment() == pytest.approx(1.0, rel=1e-10)


@pytest.mark.parametrize("support", [0.5, 0.25])
def test_zeta_normalization(support):
    zeta = link_smoothing.make_zeta(support)
    theta = np.linspace(-math.pi / 2, math.pi / 2, 20001)
    y, r = np.sin(theta), np.cos(theta)
    phi_r2 = y**3 - y * r**2
    paired = integrate.simpson(zeta.values(y) * phi_r2 * r**4, x=theta)
    total = integrate.simpson(phi_r2**2 * r**2, x=theta)
    assert paired / total == pytest.approx(1.0, rel=1e-7)


def test_zeta_odd_and_supported():
    zeta = link_smoothing.make_zeta(0.5)
    y = np.linspace(-0.9, 0.9, 181)
    np.testing.assert_allclose(zeta.values(-y), -zeta.values(y), atol=1e-14)
    assert np.all(zeta.values(y[np.abs(y) >= 0.5]) == 0)
    assert zeta.profile.shape == zeta.y.shape


def test_zeta_support_touching_poles():
    with pytest.raises(LinkSolveError, match="touches the poles"):
        link_smoothing.make_zeta(1.0)


def test_shrinking_support_raises_normalization():
    wide = link_smoothing.make_zeta(0.5).normalization_c
    narrow = link_smoothing.make_zeta(0.25).normalization_c
    assert narrow > wide > 0


def test_glue_config_from_mapping():
    cfg = GlueConfig.from_mapping({"delta": "0.008", "alpha": 0.92, "n_nodes": 301})
    assert cfg.delta == 0.008
    assert cfg.alpha == 0.92
    assert cfg.n_nodes == 301
    assert cfg.width == 5
    assert cfg.epsilon == pytest.approx(0.2)
    assert GlueConfig(delta=-0.008).sign == -1


@pytest.mark.parametrize(
    "cfg, message",
    [
        (GlueConfig(delta=0.2), "outside solvable range"),
        (GlueConfig(delta=1e-3, alpha=0.8), "alpha"),
        (GlueConfig(delta=1e-3, params=ConeParams(3, 4)), "mu = -2"),
        (GlueConfig(delta=1e-3, width=4), "discretization"),
    ],
)
def test_glue_config_validate(cfg, message):
    with pytest.raises(LinkSolveError, match=message):
        cfg.validate()


def test_weight_range_for_solver():
    WeightedNormSpec(tau=-2.5).check_solver_range()
    with pytest.raises(LinkSolveError):
        WeightedNormSpec(tau=-2.0).check_solver_range()


def test_sigma0_curve(sigma0):
    assert sigma0.is_link
    np.testing.assert_allclose(sigma0.rho, 1.0, rtol=1e-14)
    np.testing.assert_allclose(sigma0.u, sigma0.v, rtol=1e-14)
    assert sigma0.r.min() == pytest.approx(1e-3, rel=1e-8)


def test_phi_norm_on_sampled_link(sigma0):
    values = phi(sigma0.r, sigma0.y)
    norm = link_smoothing.link_inner_product(sigma0, values, values)
    assert norm == pytest.approx(math.pi**5 / 64, rel=1e-3)


def test_weighted_norm_of_inverse_square(sigma0):
    spec = WeightedNormSpec(k=0, tau=-2.5)
    value = link_smoothing.weighted_norm(sigma0.r**-2.0, spec, sigma0)
    assert value == pytest.approx(4.0, rel=0.05)


def test_weighted_norm_derivatives_add(sigma0):
    values = sigma0.r**-2.0
    plain = link_smoothing.weighted_norm(values, WeightedNormSpec(k=0), sigma0)
    with_slope = link_smoothing.weighted_norm(values, WeightedNormSpec(k=1), sigma0)
    assert with_slope > plain


def test_weighted_norm_empty_annulus():
    r = np.array([0.001, 0.0011, 0.0012, 0.9, 0.95, 1.0])
    curve = ProfileCurve.from_points(np.column_stack((r, r)) / math.sqrt(2))
    with pytest.raises(LinkSolveError, match="empty annulus coverage"):
        link_smoothing.weighted_norm(np.ones(6), WeightedNormSpec(), curve)


def test_area_excess_of_sigma0(sigma0):
    assert link_smoothing.area_excess(sigma0) == pytest.approx(0.0, abs=1e-9)


def test_fit_synthetic_power_law():
    deltas = np.geomspace(1e-4, 1e-2, 6)
    hs = -2.0 * deltas ** (4 / 3) * (1 + 0.01 * deltas ** (1 / 3))
    fit = link_smoothing.fit_h_exponent(deltas, hs, b=-0.5)
    assert fit.exponent == pytest.approx(4 / 3, abs=0.02)
    assert fit.confidence[0] <= fit.exponent <= fit.confidence[1]
    assert fit.prefactor == pytest.approx(-2.0, rel=0.05)
    assert fit.h_constant_measured == pytest.approx(4.0, rel=0.05)
    assert fit.r_squared > 0.999


@pytest.mark.parametrize(
    "deltas, hs, message",
    [
        ([1e-4, 1e-3, 1e-2], [-1e-5, -1e-4, -1e-3], "at least 4"),
        ([1e-3, 2e-3, 4e-3, 8e-3], [-1, -2, -3, -4], "1.5 decades"),
        ([1e-4, 1e-3, 1e-2, 1e-1], [-1, -3, -2, -4], "nonmonotone"),
        ([1e-4, 1e-3, 1e-2, 1e-1], [-1, -2, 3, -4], "changes sign"),
    ],
)
def test_fit_rejects(deltas, hs, message):
    with pytest.raises(LinkSolveError, match=message):
        link_smoothing.fit_h_exponent(deltas, hs)


def test_area_derivative_too_sparse(sigma0):
    links = [
        SmoothedLink(profile=sigma0, delta=d, h=-d, newton_iters=0, final_residual=0.0)
        for d in (1e-3, 2e-3)
    ]
    with pytest.raises(LinkSolveError, match="sweep too sparse"):
        link_smoothing.area_derivative(links)


def test_equator_link():
    link = link_smoothing.solve_smoothed_link(GlueConfig(delta=0.0, n_nodes=301))
    assert link.h == 0.0
    assert link.newton_iters == 0
    with pytest.raises(LinkSolveError, match="no Jacobian"):
        link_smoothing.build_phi_delta(link)


def test_bad_anchor(leaves):
    with pytest.raises(LinkSolveError, match="bad anchor"):
        link_smoothing.solve_smoothed_link(
            GlueConfig(delta=1e-3, r0_anchor=1 / math.sqrt(2)), leaves
        )


def test_approximate_link_shape(leaves):
    curve = link_smoothing.build_approximate_link(
        GlueConfig(delta=1e-3, n_nodes=401), leaves
    )
    assert len(curve) == 401
    np.testing.assert_allclose(curve.rho, 1.0, rtol=1e-12)
    assert np.all(np.diff(curve.y) > 0)
    assert curve.u[0] == 0.0
    assert curve.v[-1] == 0.0


def test_approximate_link_is_delta_phi_graph_away_from_poles(leaves):
    delta = 1e-3
    curve = link_smoothing.build_approximate_link(
        GlueConfig(delta=delta, n_nodes=401), leaves
    )
    a, b = ConeParams().link_radii
    middle = np.abs(curve.y) < 0.5
    theta = np.arctan2(curve.y, curve.u * a + curve.v * b)[middle]
    offset = np.arcsin(b * curve.u[middle] - a * curve.v[middle])
    expected = delta * phi(np.cos(theta), np.sin(theta))
    assert np.max(np.abs(offset - expected)) < 1e-4 * delta


def test_negative_delta_mirrors_link(leaves):
    plus = link_smoothing.build_approximate_link(
        GlueConfig(delta=1e-3, n_nodes=301), leaves
    )
    minus = link_smoothing.build_approximate_link(
        GlueConfig(delta=-1e-3, n_nodes=301), leaves
    )
    np.testing.assert_allclose(minus.u, plus.v, atol=1e-10)
    np.testing.assert_allclose(minus.v, plus.u, atol=1e-10)


@pytest.mark.slow
def test_solved_link_converges(solved):
    assert solved.final_residual <= solved.config.tol
    assert solved.h < 0
    assert solved.residual_history[0] > solved.residual_history[-1]
    assert solved.profile.v[-1] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.slow
def test_h_even_in_delta(solved, leaves):
    mirror = link_smoothing.solve_smoothed_link(
        GlueConfig(delta=-1e-3, n_nodes=401), leaves
    )
    assert mirror.h == pytest.approx(solved.h, rel=1e-4)


@pytest.mark.slow
def test_moment_constant_drifts_to_link_volume(leaves):
    checks = [
        link_smoothing.moment_check(GlueConfig(delta=delta), leaves)
        for delta in (1e-4, 1e-5, 1e-6)
    ]
    gaps = [abs(check.ratio - 1) for check in checks]

    assert checks[0].expected == pytest.approx(math.pi**4 / 2)
    assert gaps[0] <= 0.2
    assert gaps[0] > gaps[1] > gaps[2]


def test_moment_glue_radius_grows_against_eps(leaves):
    ratios = []
    for delta in (1e-4, 1e-9):
        cfg = GlueConfig(delta=delta)
        r_glue = link_smoothing.moment_glue_radius(cfg, leaves)
        assert r_glue >= link_smoothing.glue_radius(cfg, leaves)
        ratios.append(r_glue / cfg.epsilon)
    assert ratios[1] > ratios[0]


def test_moment_check_rejects_delta_zero(leaves):
    with pytest.raises(LinkSolveError, match="delta != 0"):
        link_smoothing.moment_check(GlueConfig(delta=0.0), leaves)


def test_glue_radius_override_outside_core(leaves):
    cfg = GlueConfig(delta=1e-4, n_nodes=301)
    with pytest.raises(LinkSolveError, match="inside twice the core"):
        link_smoothing.build_approximate_link(cfg, leaves, r_glue=cfg.epsilon / 10)


@pytest.mark.slow
def test_phi_delta_and_xi_delta(solved):
    phi_delta = link_smoothing.build_phi_delta(solved)
    curve = solved.profile
    anchor = solved.anchor
    expected = phi(curve.r[anchor], curve.y[anchor])
    assert phi_delta.values[anchor] == pytest.approx(expected)
    assert phi_delta.h_prime < 0

    xi_delta = link_smoothing.build_xi_delta(solved, phi_delta)
    overlap = link_smoothing.link_inner_product(
        curve, xi_delta.values, phi_delta.values
    )
    scale = link_smoothing.link_inner_product(curve, phi_delta.values, phi_delta.values)
    assert abs(overlap) < 1e-8 * scale


def test_solve_sweep_empty():
    assert link_smoothing.solve_sweep([]) == []


@pytest.mark.slow
def test_solve_sweep_on_workers(leaves):
    configs = [GlueConfig(delta=delta, n_nodes=401) for delta in (1e-2, 4e-3)]

    serial = link_smoothing.solve_sweep(configs, leaves)
    pooled = link_smoothing.solve_sweep(configs, leaves, workers=2)

    assert [link.delta for link in pooled] == [1e-2, 4e-3]
    assert [link.h for link in pooled] == [link.h for link in serial]


@pytest.mark.slow
def test_h_prime_centered_matches_linear_solve(solved, leaves):
    centered = link_smoothing.h_prime_centered(solved.config, leaves)
    linear = link_smoothing.build_phi_delta(solved).h_prime

    assert centered < 0
    assert 0.5 < centered / linear < 2


@pytest.mark.slow
def test_alpha_sensitivity(solved, leaves):
    hs = link_smoothing.alpha_sensitivity(solved.config, leaves)

    assert sorted(hs) == [0.9, 0.95, 0.99]
    for h in hs.values():
        assert h == pytest.approx(solved.h, rel=0.2)


@pytest.fixture(scope="module")
def sweep(leaves):
    configs = [GlueConfig(delta=delta) for delta in np.geomspace(9e-4, 3e-2, 6)]
    return link_smoothing.solve_sweep(configs, leaves)


@pytest.mark.slow
def test_h_scaling_law(sweep):
    fit = link_smoothing.fit_h_exponent(
        [link.delta for link in sweep], [link.h for link in sweep]
    )

    assert all(link.h < 0 for link in sweep)
    assert fit.exponent == pytest.approx(4 / 3, abs=0.07)


@pytest.mark.slow
def test_phi_delta_inverse_square_near_poles(solved):
    phi_delta = link_smoothing.build_phi_delta(solved)
    curve = solved.profile
    eps = solved.config.epsilon
    north = (curve.y > 0) & (curve.r >= eps) & (curve.r <= 0.5)

    scaled = curve.r[north] ** 2 * phi_delta.values[north]
    assert north.sum() > 10
    assert np.all(scaled > 0.1)
    assert np.all(scaled < 10)


@pytest.mark.slow
def test_c_delta_tends_to_one(sweep):
    gaps = []
    for link in (sweep[-1], sweep[0]):
        phi_delta = link_smoothing.build_phi_delta(link)
        xi_delta = link_smoothing.build_xi_delta(link, phi_delta)
        gaps.append(abs(xi_delta.c_delta - 1))

    assert gaps[1] < 0.5 * gaps[0]
    assert gaps[1] < 0.25


@pytest.mark.slow
def test_area_grows_with_delta(sweep):
    rows = link_smoothing.area_derivative(sweep[2:])

    assert [row.delta for row in rows] == sorted(link.delta for link in sweep[2:])
    assert all(row.area_excess > 0 for row in rows)
    assert all(row.derivative > 0 for row in rows)
    constants = [row.bound_constant for row in rows]
    assert max(constants) <= 10 * min(constants)


def test_glue_error_beats_eps_cubed(leaves):
    configs = [GlueConfig(delta=delta, alpha=0.9) for delta in (1e-2, 1e-3, 1e-4)]
    errors = [link_smoothing.glue_error(cfg, leaves) for cfg in configs]
    eps = [cfg.epsilon for cfg in configs]

    slope = np.polyfit(np.log(eps), np.log(errors), 1)[0]
    assert slope > 3