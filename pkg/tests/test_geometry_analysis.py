import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemolimit.analysis import (NoInterfaceError, directed_distance, extract_interface, fit_rate, generation_check,
                                 hausdorff, interface_length, layer_thickness)
from chemolimit.geometry import Polyline, contour_segments, distance_to_polylines, inside_polylines
from chemolimit.kinetics import u0, u0_inverse
from chemolimit.numerics import Grid
from oracles import brute_hausdorff, circle_points

LAYER_RATIO = 2.0 * u0_inverse(0.1)  # 2 * 2 sqrt 2 * artanh(0.8)


def circle(c, r, n=400):
    return Polyline(circle_points(c, r, n), True)


def radial(grid, c=(0.5, 0.5)):
    X, Y = grid.mesh()
    return np.hypot(X - c[0], Y - c[1])


def test_polyline_validation():
    with pytest.raises(ValueError):
        Polyline(np.zeros((2, 2)) + [[0, 0], [1, 0]], True)
    with pytest.raises(ValueError):
        Polyline(np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 1.0]]), False)
    sq = Polyline(np.array([[0, 0], [1, 0], [1, 1], [0, 1]], float), True)
    assert sq.length() == 4.0 and sq.signed_area() == 1.0


def test_extract_circle_of_radial_field():
    for n, tol in ((65, 2e-3), (129, 5e-4)):
        g = Grid(n, n)
        lines = extract_interface(g.field(radial(g)), 0.3)
        assert len(lines) == 1 and lines[0].closed
        r = np.hypot(*(lines[0].points - 0.5).T)
        assert np.max(np.abs(r - 0.3)) < tol


def test_extract_constant_is_empty():
    g = Grid(16, 16)
    assert extract_interface(g.full(0.2), 0.5) == []


def test_extract_profile_recovers_circle():
    g = Grid(129, 129)
    eps = 0.02
    u = g.field(u0((radial(g) - 0.3) / eps))
    (line,) = extract_interface(u, 0.5)
    assert np.max(np.abs(np.hypot(*(line.points - 0.5).T) - 0.3)) < 1e-3
    # high side (inside) on the left: counter-clockwise
    assert line.signed_area() > 0


def test_extract_deterministic_and_open_curves():
    g = Grid(40, 30)
    X, Y = g.mesh()
    u = g.field(X + 0.3 * Y)
    a, b = extract_interface(u, 0.5), extract_interface(u, 0.5)
    assert len(a) == 1 and not a[0].closed
    assert np.array_equal(a[0].points, b[0].points)
    assert np.allclose(a[0].points[:, 0] + 0.3 * a[0].points[:, 1], 0.5)


def test_saddle_resolution_is_deterministic():
    # corners (0,0) and (1,1) high; the cell average decides which pair of corners is cut off
    joined = contour_segments(np.array([[1.0, 0.0], [0.0, 1.0]]), 0.5)
    assert sorted(joined) == sorted([((0, 0, 0), (1, 1, 0)), ((0, 0, 1), (1, 0, 0))])
    split = contour_segments(np.array([[0.6, 0.0], [0.0, 0.6]]), 0.5)
    assert sorted(split) == sorted([((1, 0, 0), (0, 0, 0)), ((1, 1, 0), (0, 0, 1))])
    assert contour_segments(np.array([[1.0, 0.0], [0.0, 1.0]]), 0.5) == joined


def test_hausdorff_basic():
    a = circle((0.5, 0.5), 0.3, 2000)
    assert hausdorff(a, a) <= 1e-14
    assert hausdorff(a, circle((0.5, 0.5), 0.25, 2000)) == pytest.approx(0.05, abs=1e-4)
    with pytest.raises(NoInterfaceError):
        hausdorff([], a)


@pytest.mark.parametrize("s", [0.01, 0.1, 0.3])
def test_hausdorff_offset_circles(s):
    a, b = circle((0.0, 0.0), 0.3, 1000), circle((s, 0.0), 0.3, 1000)
    val = hausdorff(a, b)
    assert val == pytest.approx(brute_hausdorff(circle_points((0, 0), 0.3, 30000), circle_points((s, 0), 0.3, 30000)),
                                abs=1e-4)
    assert val == pytest.approx(s, abs=1e-4)


def test_directed_distance():
    inner, outer = circle((0, 0), 0.2), circle((0, 0), 0.3)
    assert directed_distance(inner, outer) == pytest.approx(0.1, abs=1e-3)
    line = Polyline(np.array([[0.0, 0.0], [1.0, 0.0]]), False)
    pts = np.array([[0.5, 0.2], [-0.3, 0.4], [1.0, -0.1]])
    assert np.allclose(distance_to_polylines(pts, [line]), [0.2, 0.5, 0.1])


def test_inside_even_odd():
    lines = [circle((0, 0), 0.3), circle((0, 0), 0.1)]
    pts = np.array([[0.0, 0.0], [0.2, 0.0], [0.5, 0.0]])
    assert inside_polylines(pts, lines).tolist() == [False, True, False]


shapes = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.1, 0.5), st.integers(5, 40))


@settings(max_examples=30, deadline=None)
@given(shapes, shapes, shapes)
def test_hausdorff_metric_properties(p, q, r):
    a, b, c = (circle((x, y), rad, n) for x, y, rad, n in (p, q, r))
    res = 0.002
    ab, ba = hausdorff(a, b, res), hausdorff(b, a, res)
    assert ab == ba and ab >= 0
    assert hausdorff(a, a, res) <= 1e-14
    assert hausdorff(a, c, res) <= ab + hausdorff(b, c, res) + 2 * res


@settings(max_examples=20, deadline=None)
@given(st.floats(0.15, 0.35), st.floats(0.4, 0.6), st.floats(0.4, 0.6))
def test_contour_of_signed_distance_round_trip(rad, cx, cy):
    g = Grid(65, 65)
    ref = circle((cx, cy), rad, 300)
    X, Y = g.mesh()
    pts = np.column_stack([X.ravel(), Y.ravel()])
    d = distance_to_polylines(pts, [ref]).reshape(g.shape)
    d = np.where(inside_polylines(pts, [ref]).reshape(g.shape), -d, d)
    lines = extract_interface(g.field(d), 0.0)
    assert hausdorff(lines, ref, g.hx / 4) <= g.hx


def test_layer_thickness_exact_profile():
    for eps in (0.04, 0.02):
        g = Grid(int(round(1.2 / (eps / 4))) + 1, int(round(1.2 / (eps / 4))) + 1, 1.2, 1.2)
        u = g.field(u0((radial(g, (0.6, 0.6)) - 0.35) / eps))
        assert layer_thickness(u, 0.1) == pytest.approx(LAYER_RATIO * eps, rel=0.05)
    assert LAYER_RATIO == pytest.approx(6.215, abs=1e-3)


def test_layer_thickness_scaling():
    g = Grid(241, 241, 1.2, 1.2)
    th = [layer_thickness(g.field(u0((radial(g, (0.6, 0.6)) - 0.35) / e)), 0.1) for e in (0.04, 0.02)]
    assert th[0] / th[1] == pytest.approx(2.0, rel=0.15)


def test_layer_thickness_step():
    g = Grid(101, 101)
    u = g.field((radial(g) < 0.3).astype(float))
    assert layer_thickness(u, 0.1) <= 1.01 * g.hx * math.sqrt(2)
    with pytest.raises(ValueError):
        layer_thickness(u, 0.3)
    with pytest.raises(NoInterfaceError):
        layer_thickness(g.full(1.0), 0.1)


def test_fit_rate_exact_lines():
    eps = [0.04, 0.02, 0.01]
    fit = fit_rate([(e, 3 * e) for e in eps])
    assert fit.slope == pytest.approx(1.0, abs=1e-12) and fit.intercept == pytest.approx(math.log(3), abs=1e-12)
    assert fit_rate([(e, e * e) for e in eps]).slope == pytest.approx(2.0, abs=1e-12)
    assert fit.predict(0.5) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (0.2, 2.0)])
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (0.2, 0.0), (0.3, 1.0)])
    with pytest.raises(ValueError):
        fit_rate([(0.1, 1.0), (0.1, 2.0), (0.3, 1.0)])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.1, 10.0), min_size=3, max_size=3), st.floats(0.01, 100.0))
def test_fit_rate_scale_invariance(metrics, c):
    samples = list(zip([0.04, 0.02, 0.01], metrics))
    a = fit_rate(samples)
    b = fit_rate([(e, c * m) for e, m in samples])
    assert b.slope == pytest.approx(a.slope, abs=1e-9)
    assert b.intercept - a.intercept == pytest.approx(math.log(c), abs=1e-9)


def test_generation_check_step_and_profile():
    g = Grid(101, 101)
    eps = 0.02
    r = radial(g)
    start = g.field(0.5 + 0.4 * np.cos(np.pi * np.clip(r / 0.6, 0, 1)))
    step = g.field((start.values >= 0.5).astype(float))
    rep = generation_check(step, start, eps, 1.0)
    assert rep.passed and rep.high_margin == pytest.approx(0.1) and rep.low_margin == pytest.approx(0.1)
    # a layer of profile shape passes once the offset covers the band where u lies in (eta, 1 - eta)
    d = r - 0.3
    u = g.field(u0(d / eps))
    slope = 0.4 * np.pi / 0.6  # |grad start| at the 1/2-level
    M0 = 1.05 * slope * u0_inverse(0.1)
    assert generation_check(u, start, eps, M0).passed
    bad = generation_check(u, start, eps, 0.2 * M0)
    assert not bad.passed and bad.failures
    assert interface_length(extract_interface(u)) == pytest.approx(2 * math.pi * 0.3, rel=1e-3)
