import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from setflow.barriers import constant_field, radial_barrier, radial_field, shrinking_ball
from setflow.brakke import (CurveError, CurveTrack, PolygonalCurve, brakke_report, brakke_sides, bump,
                            bump_suite, check_brakke_inequality, check_refinement,
                            check_support_is_weak_flow, circle_curve, curve_step, ellipse_curve,
                            mass, plateau, rasterize, remesh, rhs_forms, simulate_curve)
from setflow.grid import Grid


def mean_radius(c):
    return float(np.linalg.norm(c.vertices, axis=1).mean())


# --- curves ----------------------------------------------------------------------


def test_curve_invariants():
    with pytest.raises(ValueError):
        circle_curve(1.0, n=12)
    th = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    eight = PolygonalCurve(np.stack([np.sin(2 * th), np.sin(th)], 1))
    assert not eight.is_simple()
    with pytest.raises(CurveError):
        simulate_curve(eight, None, 1e-5, 1e-4)
    assert circle_curve(1.0).is_simple()


@given(st.floats(1.0, 4.0), st.integers(32, 256))
def test_remesh_balances_edges(aspect, n):
    th = np.linspace(0, 2 * np.pi, 400, endpoint=False) ** 1.5 / (2 * np.pi) ** 0.5
    c = PolygonalCurve(np.stack([aspect * np.cos(th), np.sin(th)], 1))
    r = remesh(c, n)
    assert len(r) == n
    assert 1 / 3 <= r.edge_ratio() <= 3
    assert 0.97 * c.length() <= r.length() <= c.length() * (1 + 1e-3)


def test_circle_radius_law():
    tr = simulate_curve(circle_curve(1.0), None, 5e-5, 0.2)
    assert mean_radius(tr.curves[-1]) == pytest.approx(math.sqrt(1 - 0.4), rel=0.01)


def test_circle_with_radial_field_is_stationary():
    tr = simulate_curve(circle_curve(1.0), radial_field(1.0), 1e-4, 0.1)
    assert mean_radius(tr.curves[-1]) == pytest.approx(1.0, rel=0.01)


def test_zero_step_is_the_identity():
    c = ellipse_curve(1.0, 0.5, 64)
    assert curve_step(c, constant_field((1.0, 0.0)), 0.0) is c
    with pytest.raises(ValueError):
        curve_step(c, None, 1.0)


# --- test functions --------------------------------------------------------------


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0, 0.5))
def test_bump_derivatives(x, y, t):
    b = bump((0.1, -0.2), 1.2, velocity=(0.5, 0.25))
    p = np.array([[x, y]])
    e = 1e-6
    assert b.phi(p, t)[0] >= 0
    fd = [(b.phi(p + e * d, t) - b.phi(p - e * d, t))[0] / (2 * e) for d in np.eye(2)]
    assert np.allclose(b.grad(p, t)[0], fd, atol=1e-6)
    fdh = np.array([(b.grad(p + e * d, t) - b.grad(p - e * d, t))[0] / (2 * e) for d in np.eye(2)])
    assert np.allclose(b.hess(p, t)[0], fdh, atol=1e-5)
    fdt = (b.phi(p, t + e) - b.phi(p, t - e))[0] / (2 * e)
    assert b.dt(p, t)[0] == pytest.approx(fdt, abs=1e-6)


def test_bump_vanishes_outside_its_support():
    b = bump((0.0, 0.0), 0.5)
    far = np.array([[0.6, 0.0], [0.0, -0.51], [3.0, 3.0]])
    assert np.all(b.phi(far, 0.0) == 0) and np.all(b.grad(far, 0.0) == 0)


# --- the two sides ---------------------------------------------------------------


@pytest.mark.parametrize("r", [0.5, 1.0])
def test_length_decay_of_a_circle(r):
    c = circle_curve(r, 256)
    dt = 0.2 * min(c.edge_lengths()) ** 2
    one = plateau((0.0, 0.0), 1.5, 2.0)
    with pytest.warns(UserWarning, match="bounding box"):
        lhs, rhs = brakke_sides(c, curve_step(c, None, dt), None, one)
    assert lhs == pytest.approx(-2 * math.pi / r, rel=0.02)
    assert rhs == pytest.approx(-2 * math.pi / r, rel=0.02)


def test_far_test_function_gives_zero():
    c = circle_curve(0.5, 128)
    far = bump((3.0, 0.0), 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lhs, rhs = brakke_sides(c, curve_step(c, None, 1e-5), None, far)
    assert lhs == 0.0 and rhs == 0.0


def test_support_beyond_the_bounding_box_warns():
    c = circle_curve(0.5, 128)
    with pytest.warns(UserWarning, match="bounding box"):
        brakke_sides(c, curve_step(c, None, 1e-5), None, bump((0.0, 0.0), 2.0))


def test_constant_transport_leaves_rhs_unchanged():
    c = circle_curve(0.7, 256)
    one = plateau((0.0, 0.0), 1.5, 2.0)
    r0 = rhs_forms(c, None, one)[1]
    rX = rhs_forms(c, constant_field((0.8, -0.3)), one)[1]
    assert rX == pytest.approx(r0, rel=0.02)


def test_forms_and_routes_agree():
    c = ellipse_curve(1.0, 0.6, 256)
    X = radial_field(0.7)
    for phi in bump_suite(scale=0.8):
        a1, a2, scale = rhs_forms(c, X, phi)
        f1, f2, _ = rhs_forms(c, X, phi, finite_differences=True)
        assert abs(a1 - a2) <= 0.01 * max(abs(a1), abs(a2), scale)
        assert f2 == pytest.approx(a2, rel=1e-3, abs=1e-6)
        assert f1 == a1


# --- the inequality --------------------------------------------------------------


def test_circle_family_passes():
    tr = simulate_curve(circle_curve(1.0, 128), None, 2e-4, 0.05)
    for phi in bump_suite():
        rep = check_brakke_inequality(tr, None, phi, every=5)
        assert rep.passed and rep.form_gap <= 0.01


def test_stationary_circle_has_vanishing_sides():
    # at 128 vertices the smallest bump's rhs quadrature error (2e-5) exceeds the 1e-6 floor
    tr = simulate_curve(circle_curve(1.0, 256), radial_field(1.0), 5e-5, 0.005)
    for phi in bump_suite():
        rep = check_brakke_inequality(tr, radial_field(1.0), phi, every=10)
        assert rep.passed
        if np.any(phi.dt(tr.curves[0].vertices, 0.0)):
            # the moving bump: both sides equal the integral of d_t phi
            assert np.allclose(rep.lhs, rep.rhs, atol=5e-4)
        else:
            assert np.abs(rep.lhs).max() <= 1e-3 and np.abs(rep.rhs).max() <= 1e-3


def test_ellipse_agrees_with_a_refined_run():
    out = check_refinement(lambda n: ellipse_curve(1.0, 0.5, n), None, bump((0.0, 0.0), 2.0), 64, 2e-4, 0.02, 5)
    assert out["passed"]


def test_growing_length_is_a_violation():
    # a step that inflates the circle cannot satisfy the inequality
    c = circle_curve(0.5, 128)
    grown = PolygonalCurve(1.01 * c.vertices, c.time + 1e-4)
    rep = check_brakke_inequality(CurveTrack([c, grown], [(c, grown)], 1e-4), None, plateau((0, 0), 1.0, 1.5))
    assert not rep.passed
    assert mass(grown, plateau((0, 0), 1.0, 1.5)) > mass(c, plateau((0, 0), 1.0, 1.5))


def test_brakke_report_record():
    tr = simulate_curve(circle_curve(1.0, 128), None, 2e-4, 0.02)
    rep = brakke_report(tr, None, bump_suite(), every=10)
    assert rep.passed and len(rep.details["functions"]) == 5


# --- the support as a weak set flow ----------------------------------------------


def test_rasterize_signs():
    g = Grid.box((-1, -1), (1, 1), 1 / 32)
    u = rasterize(circle_curve(0.5, 256), g)
    R = np.linalg.norm(g.coords(), axis=-1)
    assert np.abs(u.values - (R - 0.5)).max() <= 2e-3


def test_support_avoids_strong_barriers():
    g = Grid.box((-1, -1), (1, 1), 1 / 32)
    tr = simulate_curve(circle_curve(0.6, 128), None, 1e-4, 0.06)
    assert check_support_is_weak_flow(tr, None, g, n_barriers=4, samples=7).passed
    inner = shrinking_ball((0.0, 0.0), 0.3, 3.0, (0.0, 0.02))
    outer = shrinking_ball((0.0, 0.9), 0.08, 3.0, (0.0, 0.002))
    late = radial_barrier((0.0, 0.0), math.sqrt(0.04 + 3.0 * 5.0), -3.0, (5.0, 5.01))
    rep = check_support_is_weak_flow(tr, None, g, barriers=[inner, outer, late], samples=7)
    assert rep.passed and rep.details["contacts"] == 0
