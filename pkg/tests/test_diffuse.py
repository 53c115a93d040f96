import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chemolimit.analysis import extract_interface
from chemolimit.diffuse import (BlowUpError, ChiSpec, InterfaceMarginError, ModelParams, boundary_slope,
                                chemotaxis_divergence, constraint_residual, cutoff_values, initial_data,
                                initial_state, run, step)
from chemolimit.kinetics import u0 as front
from chemolimit.numerics import Grid, laplacian_neumann


def params(n=101, L=1.0, **kw):
    base = dict(eps=0.02, alpha=0.5, gamma=1.0, grid=Grid(n, n, L, L), d0=0.05)
    base.update(kw)
    return ModelParams(**base)


def enclosed_radius(u):
    lines = extract_interface(u, 0.5)
    return math.sqrt(abs(sum(ln.signed_area() for ln in lines)) / math.pi)


def test_model_params_validation():
    p = params()
    assert p.dt == pytest.approx(0.2 * 0.02**2)
    assert ModelParams(0.02, 0.5, 1.0, Grid(20, 20, 2.0, 3.0)).d0 == pytest.approx(0.2)
    with pytest.raises(ValueError, match="asymptotic regime"):
        params(eps=0.5)
    with pytest.raises(ValueError):
        params(dt=1e-3)
    with pytest.raises(ValueError):
        params(gamma=0.0)
    with pytest.raises(ValueError):
        ChiSpec("quadratic", 1.0)
    with pytest.raises(ValueError):
        ChiSpec("linear", -1.0)


def test_chi_forms():
    v = np.array([0.0, 0.5, 2.0])
    sat = ChiSpec("saturating", 2.0)
    assert np.allclose(sat(v), 2 * v / (1 + v))
    h = 1e-6
    assert np.allclose(sat.derivative(v), (sat(v + h) - sat(v - h)) / (2 * h), rtol=1e-8)
    assert np.allclose(ChiSpec("linear", 3.0).derivative(v), 3.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.3), st.lists(st.floats(-2, 2), min_size=2, max_size=20))
def test_cutoff_properties(d0, s):
    s = np.sort(np.array(s))
    c = cutoff_values(s, d0)
    assert np.all(np.diff(c) >= -1e-15)
    assert np.allclose(cutoff_values(-s, d0), -c)
    assert np.all(np.abs(c) <= 3 * d0 + 1e-15)
    inner = np.abs(s) <= 2 * d0
    assert np.array_equal(c[inner], s[inner])
    assert np.allclose(c[np.abs(s) >= 3 * d0], np.sign(s[np.abs(s) >= 3 * d0]) * 3 * d0)


def test_cutoff_is_c2_at_the_joins():
    d0 = 0.1
    for x in (2 * d0, 3 * d0):
        h = 1e-5
        s = np.array([x - 2 * h, x - h, x, x + h, x + 2 * h])
        c = cutoff_values(s, d0)
        left = (c[2] - c[1]) / h, (c[2] - 2 * c[1] + c[0]) / h**2
        right = (c[3] - c[2]) / h, (c[4] - 2 * c[3] + c[2]) / h**2
        assert left[0] == pytest.approx(right[0], abs=1e-4)
        assert left[1] == pytest.approx(right[1], abs=1e-2 / d0)


def test_prepared_initial_data():
    p = params()
    u = initial_data("prepared", p, radius=0.25)
    (line,) = extract_interface(u, 0.5)
    assert np.max(np.abs(np.hypot(*(line.points - 0.5).T) - 0.25)) < 1e-3
    assert boundary_slope(u.values, p.grid) <= 1e-10


def test_unprepared_initial_data_bounds():
    p = params(c0=1.05)
    u = initial_data("unprepared", p, radius=0.25, width=0.1)
    vals = u.values
    assert boundary_slope(vals, p.grid) <= 1e-10
    assert np.max(np.abs(vals)) <= 1.0
    assert np.max(np.abs(np.gradient(vals, p.grid.hx))) <= 0.4 / 0.1 * 1.01
    # the Laplacian scales like amplitude / width^2 and is not bounded by c0 at this width
    lap = np.max(np.abs(laplacian_neumann(u).values))
    assert p.c0 < lap < 3 * 0.4 / 0.1**2
    # a wider layer and a gentler cutoff bring it down by a factor of four
    q = params(n=231, L=2.3, alpha=0.15, d0=0.15)
    lap_w = [np.max(np.abs(laplacian_neumann(initial_data("unprepared", q, radius=0.5, width=w)).values))
             for w in (0.1, 0.25)]
    assert lap_w[1] < lap_w[0] / 4


def test_initial_data_errors():
    p = params()
    with pytest.raises(InterfaceMarginError):
        initial_data("prepared", p, radius=0.45)
    with pytest.raises(ValueError):
        initial_data("spiral", p)
    with pytest.raises(ValueError):
        initial_data("custom", p, expression="__import__('os')")
    with pytest.raises(ValueError, match="flat"):
        initial_data("custom", p, expression="0.5 + 0.4*tanh((0.25 - hypot(x-0.5, y-0.5))/0.1) + 0.01*x")
    r = "hypot(x - 0.5, y - 0.5)"
    u = initial_data("custom", p, expression=f"where({r} < 0.4, 0.5 + 0.4*cos(pi*{r}/0.4), 0.1)")
    assert u.values[50, 50] == pytest.approx(0.9) and u.values[0, 0] == pytest.approx(0.1)


@pytest.mark.parametrize("value,v_expected", [(0.0, 0.0), (1.0, 1.0 / 2.5)])
def test_constant_equilibria(value, v_expected):
    p = params(n=33, gamma=2.5, chi=ChiSpec("linear", 1.0))
    state = initial_state(p.grid.full(value), p)
    for _ in range(5):
        state = step(state, p)
    assert np.all(state.u.values == value)
    assert np.allclose(state.v.values, v_expected, rtol=0, atol=1e-15)


def test_blow_up_guard():
    p = params(n=17, eps=0.2)
    with pytest.raises(BlowUpError, match="blow-up guard tripped"):
        step(initial_state(p.grid.full(10.0), p), p)
    with pytest.raises(ValueError):
        step(initial_state(p.grid.full(0.5), p), p, dt=2 * p.dt)


def test_chemotaxis_flux_conserves_mass():
    g = Grid(41, 31, 1.3, 1.0)
    rng = np.random.default_rng(3)
    u = rng.random(g.shape)
    chi = rng.standard_normal(g.shape)
    for upwind in (False, True):
        div = chemotaxis_divergence(u, chi, g, upwind)
        assert abs(g.integrate(div)) <= 1e-12 * np.max(np.abs(div))


def test_constraint_and_mass_after_every_step():
    p = params(n=65, chi=ChiSpec("saturating", 2.0), t_end=0.004)
    u = initial_data("unprepared", p, radius=0.25, width=0.1)
    seen = []

    def check(tag, state):
        seen.append(constraint_residual(state, p.gamma))
        assert p.gamma * p.grid.integrate(state.v.values) == pytest.approx(p.grid.integrate(state.u.values),
                                                                           rel=1e-11)

    state = initial_state(u, p)
    for _ in range(20):
        state = step(state, p)
        check("step", state)
    run(p, u, probe_times=[0.001, 0.002], on_record=check)
    assert max(seen) <= 1e-8


def test_run_zero_length_and_records():
    p = params(n=33, t_end=0.0)
    traj = run(p, initial_data("prepared", p, radius=0.25))
    assert len(traj.records) == 1 and traj.snapshots[0][2] == "initial"
    p = params(n=33, t_end=0.01)
    traj = run(p, initial_data("prepared", p, radius=0.25), probe_times=[0.005])
    tags = [tag for _, _, tag in traj.snapshots]
    assert tags[0] == "initial" and tags[-1] == "final" and "generation" in tags
    t_gen = dict((tag, t) for t, _, tag in traj.snapshots)["generation"]
    assert t_gen == p.generation_time
    assert traj.final.t == 0.01
    assert any(tag.startswith("probe@") for tag in tags)
    with pytest.raises(ValueError):
        run(p, traj.snapshots[0][1], probe_times=[0.02])


def test_run_is_deterministic():
    p = params(n=41, chi=ChiSpec("linear", 1.0), t_end=0.003)
    u = initial_data("unprepared", p, radius=0.25)
    a = run(p, u, probe_times=[0.001])
    b = run(p, u, probe_times=[0.001])
    assert [r.as_row() for r in a.records] == [r.as_row() for r in b.records]
    assert np.array_equal(a.final.u.values, b.final.u.values)


def test_circle_shrink_rate_without_chemotaxis():
    alpha, R = 1.0, 0.25
    p = params(alpha=alpha, t_end=0.012)
    traj = run(p, initial_data("prepared", p, radius=R), generation_probe=False, extra_stops=[0.002])
    t1, u1 = traj.snapshot("stop@0.002")
    t2, u2 = traj.final.t, traj.final.u
    rate = (enclosed_radius(u2) - enclosed_radius(u1)) / (t2 - t1)
    Rm = 0.5 * (enclosed_radius(u1) + enclosed_radius(u2))
    assert rate == pytest.approx(-1.0 / Rm + math.sqrt(2.0) * alpha, rel=0.1)


def test_allen_cahn_profile_is_recovered():
    p = params(n=161, alpha=1e-12, t_end=0.004)
    u = initial_data("unprepared", p, radius=0.28, width=0.05)
    final = run(p, u, generation_probe=False).final.u
    R = enclosed_radius(final)
    X, Y = p.grid.mesh()
    d = np.hypot(X - 0.5, Y - 0.5) - R
    band = np.abs(d) < 0.15
    assert np.max(np.abs(final.values - front(d / p.eps))[band]) < 0.05
