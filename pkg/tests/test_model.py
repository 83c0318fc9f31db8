import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evgaze.model import (
    CircleParams,
    DegenerateConicError,
    EllipseParams,
    Event,
    EyeModel,
    Frame,
    ParabolaParams,
    circle_residual,
    eccentricity,
    ellipse_center,
    ellipse_from_geometry,
    ellipse_mask,
    ellipse_orientation,
    ellipse_radii,
    ellipse_residual,
    is_real_ellipse,
    parabola_residual,
    project_onto_ellipse,
    projection_distance,
)

geometry = st.tuples(
    st.floats(20, 320), st.floats(20, 240),   # center
    st.floats(5, 60), st.floats(0.3, 1.0),     # major radius, minor/major ratio
    st.floats(-math.pi / 2, math.pi / 2),
)


def test_circle_center_and_radii():
    e = ellipse_from_geometry(100.0, 50.0, 10.0, 10.0)
    assert ellipse_center(e) == pytest.approx((100.0, 50.0), abs=1e-9)
    assert ellipse_radii(e) == pytest.approx((10.0, 10.0), rel=1e-9)
    assert eccentricity(e) == pytest.approx(1.0)


def test_axis_aligned_coefficients_by_hand():
    # (x-3)^2/4 + y^2 = 1  ->  x^2/4 - 3x/2 + y^2 + 9/4 - 1 = 0, scale by -1/(5/4)
    e = ellipse_from_geometry(3.0, 0.0, 2.0, 1.0)
    k = -1.0 / 1.25
    np.testing.assert_allclose(e.as_array(), [0.25 * k, 0.0, k, -1.5 * k, 0.0], atol=1e-12)
    assert ellipse_radii(e) == pytest.approx((2.0, 1.0))
    assert ellipse_orientation(e) == pytest.approx(0.0, abs=1e-12)


@given(geometry)
@settings(max_examples=200, deadline=None)
def test_geometry_round_trip(g):
    cx, cy, r, ratio, ang = g
    e = ellipse_from_geometry(cx, cy, r, r * ratio, ang)
    assert ellipse_center(e) == pytest.approx((cx, cy), rel=1e-7, abs=1e-7)
    assert ellipse_radii(e) == pytest.approx((r, r * ratio), rel=1e-7)
    if ratio < 0.99:
        d = (ellipse_orientation(e) - ang) % math.pi
        assert min(d, math.pi - d) < 1e-6


@given(geometry, st.floats(0, 2 * math.pi))
@settings(max_examples=200, deadline=None)
def test_points_on_curve_satisfy_implicit_form(g, t):
    cx, cy, r, ratio, ang = g
    e = ellipse_from_geometry(cx, cy, r, r * ratio, ang)
    x0, y0 = r * math.cos(t), r * ratio * math.sin(t)
    p = (cx + x0 * math.cos(ang) - y0 * math.sin(ang), cy + x0 * math.sin(ang) + y0 * math.cos(ang))
    assert abs(ellipse_residual(e, p)) < 1e-7
    assert projection_distance(e, p) < 1e-6


@given(geometry, st.floats(0, 2 * math.pi), st.floats(0.2, 3.0))
@settings(max_examples=200, deadline=None)
def test_radial_projection_lands_on_curve(g, t, s):
    cx, cy, r, ratio, ang = g
    e = ellipse_from_geometry(cx, cy, r, r * ratio, ang)
    p = (cx + s * r * math.cos(t), cy + s * r * math.sin(t))
    q = project_onto_ellipse(e, p)
    assert abs(ellipse_residual(e, q)) < 1e-7
    # the projection is collinear with the center and the point
    cross = (p[0] - cx) * (q[1] - cy) - (p[1] - cy) * (q[0] - cx)
    assert abs(cross) < 1e-6 * r * r * max(s, 1)


def test_projection_distance_for_circle_is_radial_gap():
    e = ellipse_from_geometry(50.0, 50.0, 10.0, 10.0)
    assert projection_distance(e, (63.0, 50.0)) == pytest.approx(3.0)
    assert projection_distance(e, (50.0, 45.0)) == pytest.approx(5.0)


def test_projection_from_center_is_degenerate():
    e = ellipse_from_geometry(50.0, 50.0, 10.0, 10.0)
    with pytest.raises(DegenerateConicError):
        project_onto_ellipse(e, (50.0, 50.0))


def test_parabola_has_no_center():
    # y = x^2 written in the d = -1 form cannot be an ellipse: h^2 - 4ab = 0
    e = EllipseParams(1.0, 0.0, 0.0, 0.0, -1.0)
    with pytest.raises(DegenerateConicError):
        ellipse_center(e)
    assert not is_real_ellipse(e)


def test_hyperbola_and_imaginary_ellipse_rejected():
    assert not is_real_ellipse(EllipseParams(1.0, 0.0, -1.0, 0.0, 0.0))
    # x^2 + y^2 = -1 has no real points
    assert not is_real_ellipse(EllipseParams(-1.0, 0.0, -1.0, 0.0, 0.0))
    with pytest.raises(DegenerateConicError):
        ellipse_radii(EllipseParams(-1.0, 0.0, -1.0, 0.0, 0.0))


def test_origin_on_curve_cannot_be_normalized():
    with pytest.raises(DegenerateConicError):
        ellipse_from_geometry(10.0, 0.0, 10.0, 5.0)


def test_parabola_and_circle_residuals():
    p = ParabolaParams(0.5, -1.0, 3.0)
    assert parabola_residual(p, (0.5 * 4 - 2 + 3, 2.0)) == pytest.approx(0.0)
    c = CircleParams(1.0, 2.0, 3.0)
    assert circle_residual(c, (4.0, 2.0)) == pytest.approx(0.0)
    # d^2 - r^2 at distance 5
    assert circle_residual(c, (1.0, 7.0)) == pytest.approx(25.0 - 9.0)


def test_mask_area_close_to_analytic():
    e = ellipse_from_geometry(100.3, 80.7, 30.0, 18.0, 0.4)
    m = ellipse_mask(e, 200, 160)
    assert m.shape == (160, 200)
    assert abs(m.sum() - math.pi * 30 * 18) / (math.pi * 30 * 18) < 0.01
    assert m[81, 100] and not m[0, 0]


def test_event_and_frame_validation():
    with pytest.raises(ValueError):
        Event(0, 1, 1, 0)
    with pytest.raises(ValueError):
        Frame(0, np.zeros((4, 4), np.float32))
    with pytest.raises(ValueError):
        Frame(0, np.zeros(4, np.uint8))
    f = Frame(5, np.zeros((3, 4), np.uint8))
    assert (f.width, f.height) == (4, 3)


def test_eye_model_center_requires_valid_ellipse():
    e = ellipse_from_geometry(40.0, 30.0, 8.0, 6.0)
    assert EyeModel(ellipse=e).pupil_center is None
    assert EyeModel(ellipse=e, ellipse_valid=True).pupil_center == pytest.approx((40.0, 30.0))


UNIT_CIRCLE = EllipseParams(1.0, 0.0, 1.0, 0.0, 0.0)


def test_unit_circle_examples():
    assert ellipse_residual(UNIT_CIRCLE, (1.0, 0.0)) == 0.0
    assert ellipse_residual(UNIT_CIRCLE, (0.0, 0.0)) == -1.0
    assert ellipse_center(UNIT_CIRCLE) == (0.0, 0.0)
    assert project_onto_ellipse(UNIT_CIRCLE, (2.0, 0.0)) == pytest.approx((1.0, 0.0))
    assert project_onto_ellipse(UNIT_CIRCLE, (0.5, 0.0)) == pytest.approx((1.0, 0.0))
    assert eccentricity(UNIT_CIRCLE) == 1.0


def test_shifted_circle_center_from_expanded_form():
    # (x-3)^2 + (y-4)^2 = 1  ->  x^2 + y^2 - 6x - 8y + 24 = 0, divided by -24
    k = -1.0 / 24.0
    e = EllipseParams(k, 0.0, k, -6.0 * k, -8.0 * k)
    assert ellipse_center(e) == pytest.approx((3.0, 4.0), abs=1e-12)
    assert ellipse_center(ellipse_from_geometry(10.0, 20.0, 4.0, 2.0)) == pytest.approx((10.0, 20.0))


def test_projection_onto_axis_aligned_ellipse():
    e = EllipseParams(0.25, 0.0, 1.0, 0.0, 0.0)  # x^2/4 + y^2 = 1
    assert project_onto_ellipse(e, (0.0, 3.0)) == pytest.approx((0.0, 1.0))


def test_eccentricity_examples():
    assert eccentricity(ellipse_from_geometry(7.0, 9.0, 4.0, 2.0)) == pytest.approx(2.0)
    assert eccentricity(ellipse_from_geometry(7.0, 9.0, 3.0, 1.0, math.pi / 4)) == pytest.approx(3.0, abs=1e-9)


def test_parabola_and_circle_residual_examples():
    unit = ParabolaParams(1.0, 0.0, 0.0)  # u = v^2
    assert parabola_residual(unit, (4.0, 2.0)) == 0.0
    assert parabola_residual(unit, (0.0, 2.0)) == 4.0
    c = CircleParams(0.0, 0.0, 1.0)
    assert circle_residual(c, (1.0, 0.0)) == 0.0
    assert circle_residual(c, (0.0, 0.0)) == -1.0
    assert circle_residual(CircleParams(3.0, 4.0, 2.0), (5.0, 4.0)) == 0.0
