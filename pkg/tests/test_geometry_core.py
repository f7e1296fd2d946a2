import math

import numpy as np
import pytest

from conelab import geometry_core
from conelab.geometry_core import ConeParams, GeometryError, GraphOverCone, ProfileCurve


def arc(radius=2.0, n=400, lo=0.2, hi=1.3, orientation=1):
    t = np.linspace(lo, hi, n)
    return ProfileCurve(
        s=radius * t,
        u=radius * np.cos(t),
        v=radius * np.sin(t),
        orientation=orientation,
    )


def cone_line(r_lo=1.0, r_hi=2.0, n=201):
    r = np.linspace(r_lo, r_hi, n)
    return ProfileCurve(s=r, u=r / math.sqrt(2), v=r / math.sqrt(2))


def equator(n=2001):
    a, b = ConeParams().link_radii
    theta = np.linspace(-math.pi / 2, math.pi / 2, n)
    points = np.column_stack((a * np.cos(theta), b * np.cos(theta), np.sin(theta)))
    return ProfileCurve.from_points(points)


def test_cone_params_simons():
    params = ConeParams()
    assert params.ambient_dim == 8
    assert params.cone_dim == 7
    assert params.mu == pytest.approx(-2.0)
    assert params.w_exponent == pytest.approx(3.0)
    assert params.link_radii == pytest.approx((1 / math.sqrt(2), 1 / math.sqrt(2)))


def test_cone_params_mu_in_stable_window():
    for p, q in [(3, 3), (2, 4), (3, 4), (5, 5)]:
        params = ConeParams(p, q)
        n = params.ambient_dim
        assert (3 - n) / 2 < params.mu < 0


def test_cone_params_complex_growth_rates():
    with pytest.raises(GeometryError, match="complex growth rates"):
        ConeParams(2, 2)


def test_cone_params_small_sphere():
    with pytest.raises(GeometryError, match="at least 2"):
        ConeParams(1, 5)


def test_profile_rejects_negative_radius():
    with pytest.raises(GeometryError, match="graph leaves quadrant"):
        ProfileCurve(
            s=np.arange(3.0), u=np.array([1.0, 0.5, -0.1]), v=np.ones(3)
        )


def test_cone_is_minimal():
    m = geometry_core.mean_curvature(cone_line())
    assert np.nanmax(np.abs(m)) < 1e-10


def test_round_sphere_mean_curvature():
    curve = arc(radius=2.0)
    m = geometry_core.profile_mean_curvature(curve, 200, width=5)
    assert m == pytest.approx(-7 / 2.0, rel=1e-8)


def test_orientation_flips_sign():
    m = geometry_core.profile_mean_curvature(arc(), 150)
    flipped = geometry_core.profile_mean_curvature(arc(orientation=-1), 150)
    assert flipped == pytest.approx(-m, rel=1e-14)


def test_swap_preserves_mean_curvature():
    t = np.linspace(0.3, 1.1, 300)
    curve = ProfileCurve.from_points(
        np.column_stack(((1 + 0.2 * t) * np.cos(t), (1 + 0.2 * t) * np.sin(t)))
    )
    m = geometry_core.mean_curvature(curve)
    swapped = geometry_core.mean_curvature(curve.swapped())
    np.testing.assert_allclose(swapped[1:-1], m[1:-1], rtol=1e-12, atol=1e-12)


def test_mean_curvature_second_order():
    def value(n):
        t = np.linspace(0.2, 1.2, n + 1)
        radius = 1 + 0.3 * np.sin(2 * t)
        curve = ProfileCurve.from_points(
            np.column_stack((radius * np.cos(t), radius * np.sin(t)))
        )
        return geometry_core.profile_mean_curvature(curve, n // 2)

    coarse, mid, fine = value(50), value(100), value(200)
    order = math.log2(abs(coarse - mid) / abs(mid - fine))
    assert 1.8 <= order <= 2.2


def test_needs_interior_stencil():
    with pytest.raises(GeometryError, match="needs interior stencil"):
        geometry_core.profile_mean_curvature(arc(), 0)


def test_orbit_degenerate():
    curve = ProfileCurve.from_points(np.array([[0.5, 1.0], [0.0, 1.1], [0.5, 1.2]]))
    with pytest.raises(GeometryError, match="orbit degenerate"):
        geometry_core.profile_mean_curvature(curve, 1)


def test_graph_to_profile_cone():
    r = np.linspace(1.0, 5.0, 9)
    curve = geometry_core.graph_to_profile(GraphOverCone(grid=r, values=np.zeros(9)))
    np.testing.assert_allclose(curve.u, curve.v, rtol=1e-15)


def test_graph_to_profile_substitution():
    r = np.array([9.0, 10.0, 11.0])
    graph = GraphOverCone.from_rf(r, r**-3.0)
    curve = geometry_core.graph_to_profile(graph)
    assert curve.u[1] == pytest.approx(10 * 1.001 / math.sqrt(2), rel=1e-14)
    assert curve.v[1] == pytest.approx(10 * 0.999 / math.sqrt(2), rel=1e-14)


def test_graph_leaves_quadrant():
    r = np.linspace(1.0, 2.0, 5)
    with pytest.raises(GeometryError, match="graph leaves quadrant"):
        geometry_core.graph_to_profile(GraphOverCone.from_rf(r, np.full(5, -2.0)))


def test_round_trip_over_cone():
    r = np.geomspace(1.0, 100.0, 50)
    graph = GraphOverCone.from_rf(r, 0.01 * r**-3.0)
    back = geometry_core.profile_to_graph(geometry_core.graph_to_profile(graph))
    np.testing.assert_allclose(back.grid, graph.grid, rtol=1e-12)
    np.testing.assert_allclose(back.values, graph.values, rtol=1e-7)


def test_identical_curves_zero_offsets():
    curve = arc(n=60)
    graph = geometry_core.profile_to_graph(curve, base=curve)
    assert np.max(np.abs(graph.values)) < 1e-12


def test_outside_tubular_neighborhood():
    curve = ProfileCurve.from_points(np.array([[1.0, 0.1], [1.0, 0.2], [1.0, 0.3]]))
    with pytest.raises(GeometryError, match="outside tubular neighborhood"):
        geometry_core.profile_to_graph(curve)


def test_link_volume_simons():
    assert geometry_core.link_volume(ConeParams()) == pytest.approx(math.pi**4 / 2)


def test_equator_area():
    area = geometry_core.weighted_area(equator())
    assert area == pytest.approx(5 * math.pi**5 / 32, rel=1e-4)


def test_area_additive_over_windows():
    curve = equator(501)
    split = 0.37 * curve.s[-1]
    total = geometry_core.weighted_area(curve)
    parts = geometry_core.weighted_area(
        curve, (0.0, split)
    ) + geometry_core.weighted_area(curve, (split, curve.s[-1]))
    assert parts == pytest.approx(total, rel=1e-13)


def test_empty_window_area():
    curve = equator(101)
    assert geometry_core.weighted_area(curve, (0.5, 0.5)) == 0.0


@pytest.mark.parametrize("a, coefficient", [(0.0, 6.0), (1.0, 12.0), (-2.1, -0.09)])
def test_jacobi_operator_on_cone(a, coefficient):
    curve = cone_line()
    r = curve.r
    lf = geometry_core.jacobi_operator(curve, r**a, width=5)
    interior = slice(2, -2)
    np.testing.assert_allclose(
        lf[interior], coefficient * r[interior] ** (a - 2), rtol=1e-6
    )


def test_phi_restricts_to_link_jacobi_field():
    a, b = ConeParams().link_radii
    theta = np.linspace(-1.2, 1.2, 1201)
    points = np.column_stack((a * np.cos(theta), b * np.cos(theta), np.sin(theta)))
    curve = ProfileCurve.from_points(points)
    r_sq = curve.u**2 + curve.v**2
    phi = curve.y**3 / r_sq - curve.y
    lphi = geometry_core.jacobi_operator(curve, phi, width=5)
    assert np.nanmax(np.abs(lphi[2:-2])) < 1e-4


def test_smoothstep_cutoff():
    assert geometry_core.smoothstep_cutoff(0.5) == 1.0
    assert geometry_core.smoothstep_cutoff(2.5) == 0.0
    assert geometry_core.smoothstep_cutoff(1.5) == pytest.approx(0.5)
    assert geometry_core.smoothstep_cutoff(1.0, derivative=1) == 0.0


def test_save_and_load_profile(tmp_path):
    curve = equator(51)
    path = tmp_path / "equator.txt"
    geometry_core.save_profile(curve, path)
    loaded = geometry_core.load_profile(path)
    np.testing.assert_array_equal(loaded.points, curve.points)
    assert path.read_text().splitlines()[0] == "s u v y"


def test_load_profile_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("a b c d\n0 1 1 0\n")
    with pytest.raises(GeometryError, match="unexpected header"):
        geometry_core.load_profile(path)
