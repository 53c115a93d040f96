"""End-to-end acceptance checks, one test per criterion.

Each test records a one-line verdict through the ``criterion`` fixture;
the lines are printed in the "acceptance criteria" section of the pytest
summary.
"""
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.integrate import quad

from chemolimit import cli, experiments, sharp
from chemolimit.analysis import extract_interface
from chemolimit.config import parse_config
from chemolimit.diffuse import ChiSpec, initial_data
from chemolimit.kinetics import (BistableSpec, amplification_A, f, flow_Y, flow_Y_xi, g, generation_time, u0,
                                 u0_inverse, u0_prime, u0_second)
from chemolimit.numerics import Grid, solve_helmholtz_neumann
from oracles import augmented_flow, bisect_roots, mcf_radius

DEMOS = Path(__file__).resolve().parents[1] / "demos"
HALF_WIDTH = u0_inverse(0.1)  # 2 sqrt 2 artanh(0.8): distance from the 1/2-level to the eta-level of the profile


def load(name):
    text = (DEMOS / name).read_text()
    return parse_config(text), text


# -- 1. profile identities ----------------------------------------------------------------------

def test_criterion_1_profile_identities(criterion):
    criterion(1, False, "did not complete")
    t0 = time.perf_counter()
    z = np.linspace(-30.0, 30.0, 60001)
    U = u0(z)
    ode = float(np.max(np.abs(u0_second(z) + f(U))))
    energy, _ = quad(lambda s: u0_prime(s) ** 2, -40, 40, epsabs=1e-14, epsrel=1e-13, limit=200)
    energy_err = abs(energy - 1.0 / (6.0 * math.sqrt(2.0)))
    growth = max(float(np.max(np.abs(math.sqrt(2.0) * a * u0_prime(z) + g(U, BistableSpec(a)))))
                 for a in (0.5, 1.0, 2.0))
    elapsed = time.perf_counter() - t0
    ok = ode <= 1e-12 and energy_err <= 1e-8 and growth <= 1e-12 and elapsed < 1.0
    criterion(1, ok, f"ode residual {ode:.2e}, energy error {energy_err:.2e}, growth identity {growth:.2e}, "
                     f"{elapsed:.2f}s")
    assert ode <= 1e-12 and energy_err <= 1e-8 and growth <= 1e-12
    assert elapsed < 1.0


# -- 2. flow identities -------------------------------------------------------------------------

def test_criterion_2_flow_identities(criterion):
    criterion(2, False, "did not complete")
    t0 = time.perf_counter()
    taus = np.linspace(0.25, 5.0, 10)
    deltas = np.linspace(-0.04, 0.04, 10)
    h, kw = 1e-3, dict(atol=1e-14, rtol=1e-12)
    worst_xi = worst_A = 0.0
    points = 0
    for d in deltas:
        roots = np.array(bisect_roots(float(d)))
        xs = np.linspace(-2.0, 2.0, 400)
        xs = xs[np.min(np.abs(xs[:, None] - roots[None]), axis=1) > 0.05]  # equilibria are excluded
        xs = xs[np.linspace(0, len(xs) - 1, 10).round().astype(int)]
        for tau in taus:
            Y = lambda x: flow_Y(tau, x, d, **kw)
            fd = (8 * (Y(xs + h) - Y(xs - h)) - (Y(xs + 2 * h) - Y(xs - 2 * h))) / (12 * h)
            ident = flow_Y_xi(tau, xs, d)
            worst_xi = max(worst_xi, float(np.max(np.abs(fd - ident) / np.abs(ident))))
            A = amplification_A(tau, xs, d)
            _, _, integral = augmented_flow(tau, xs, d)
            worst_A = max(worst_A, float(np.max(np.abs(integral - A) / np.maximum(np.abs(A), 1.0))))
            points += len(xs)
    elapsed = time.perf_counter() - t0
    ok = points == 1000 and worst_xi <= 1e-5 and worst_A <= 1e-6 and elapsed < 30
    criterion(2, ok, f"{points} points, derivative identity {worst_xi:.2e}, amplification integral {worst_A:.2e}, "
                     f"{elapsed:.1f}s")
    assert points == 1000
    assert worst_xi <= 1e-5 and worst_A <= 1e-6
    assert elapsed < 30


# -- 3. elliptic solver -------------------------------------------------------------------------

def test_criterion_3_elliptic_solver(criterion):
    criterion(3, False, "did not complete")
    t0 = time.perf_counter()
    gamma = 1.0
    hs, errs, mass = [], [], 0.0
    for n in (64, 128, 256):
        g_ = Grid(n, n)
        X, Y = g_.mesh()
        exact = np.cos(np.pi * X) * np.cos(np.pi * Y)
        rhs = g_.field((gamma + 2 * np.pi**2) * exact + 0.5)  # shift keeps the mass nonzero
        v = solve_helmholtz_neumann(rhs, gamma, 1e-12)
        errs.append(float(np.max(np.abs(v.values - exact - 0.5 / gamma))))
        hs.append(g_.hx)
        mass = max(mass, abs(gamma * g_.integrate(v.values) - g_.integrate(rhs.values)) / abs(g_.integrate(rhs.values)))
    # extra solves on rough data for the mass identity
    rng = np.random.default_rng(11)
    for n, gam in ((64, 0.3), (128, 4.0), (256, 25.0)):
        g_ = Grid(n, n)
        rhs = g_.field(rng.random(g_.shape))
        v = solve_helmholtz_neumann(rhs, gam, 1e-10)
        mass = max(mass, abs(gam * g_.integrate(v.values) - g_.integrate(rhs.values)) / abs(g_.integrate(rhs.values)))
    slopes = np.diff(np.log(errs)) / np.diff(np.log(hs))
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(np.abs(slopes - 2) <= 0.2)) and mass <= 1e-9 and elapsed < 60
    criterion(3, ok, f"slopes {', '.join(f'{s:.3f}' for s in slopes)}, worst relative mass error {mass:.1e}, "
                     f"{elapsed:.1f}s")
    assert np.all(np.abs(slopes - 2) <= 0.2)
    assert mass <= 1e-9
    assert elapsed < 60


# -- 4. level-set solver vs oracles --------------------------------------------------------------

def test_criterion_4_sharp_oracles(criterion):
    criterion(4, False, "did not complete")
    t0 = time.perf_counter()
    # pure curvature flow until R = 0.1
    g_ = Grid(256, 256)
    p = sharp.SharpParams(alpha=0.0, gamma=1.0, d0=0.04, k_redist=10)
    R0 = 0.3
    t_stop = (R0**2 - 0.1**2) / 2
    state = sharp.circle_levelset(g_, p, R0)
    mcf_err = 0.0
    for t in np.linspace(0, t_stop, 9)[1:]:
        state = sharp.advance(state, float(t), p)
        mcf_err = max(mcf_err, abs(sharp.enclosed_radius(state) / float(mcf_radius(R0, t)) - 1))

    # stationary radius 1/sqrt(2) with alpha = 1, k = 0: a circle 1% inside shrinks, 1% outside grows
    g_ = Grid(256, 256, 2.0, 2.0)
    p = sharp.SharpParams(alpha=1.0, gamma=1.0, chi=ChiSpec("linear", 0.0), d0=0.06, k_redist=10)
    R_star = 1.0 / math.sqrt(2.0)
    rates = []
    for frac in (0.99, 1.01):
        s = sharp.circle_levelset(g_, p, frac * R_star)
        r_a = sharp.enclosed_radius(s)
        r_b = sharp.enclosed_radius(sharp.advance(s, 0.01, p))
        rates.append(((r_a + r_b) / 2, (r_b - r_a) / 0.01))
    (ra, va), (rb, vb) = rates
    R_fit = ra - va * (rb - ra) / (vb - va)  # zero of the measured rate
    stationary_err = abs(R_fit / R_star - 1)

    # full drift against the radial oracle
    g_ = Grid(161, 161, 1.6, 1.6)
    p = sharp.SharpParams(alpha=1.0, gamma=4.0, chi=ChiSpec("linear", 1.0), d0=0.07, k_redist=10)
    state = sharp.advance(sharp.circle_levelset(g_, p, 0.5), 0.1, p)
    ref = sharp.radial_oracle(0.5, p, 0.1, [0.1], r_out=sharp.equal_area_radius(g_)).R[-1]
    drift_err = abs(sharp.enclosed_radius(state) / ref - 1)
    elapsed = time.perf_counter() - t0

    ok = mcf_err <= 0.01 and va < 0 < vb and stationary_err <= 0.01 and drift_err <= 0.01 and elapsed < 300
    criterion(4, ok, f"curvature flow {mcf_err:.2%}, stationary radius {R_fit:.4f} ({stationary_err:.2%}), "
                     f"drift {drift_err:.2%}, {elapsed:.0f}s")
    assert mcf_err <= 0.01
    assert va < 0 < vb and stationary_err <= 0.01
    assert drift_err <= 0.01
    assert elapsed < 300


# -- 5, 6. generation and envelope containment ---------------------------------------------------

@pytest.fixture(scope="module")
def generation():
    cfg, _ = load("generation.cfg")
    params = cfg.model_params()
    kw = cfg.initial_kwargs()
    u_init = initial_data(cfg.get("initial", "kind"), params, **kw)
    t0 = time.perf_counter()
    study = experiments.generation_study(
        params, u_init, eta=cfg.get("bounds", "eta"), C6=cfg.get("bounds", "C6"), K=cfg.get("bounds", "K"),
        motion=True, sharp_params=cfg.sharp_params(), sharp_grid=cfg.sharp_grid(), radius=kw["radius"])
    return study, time.perf_counter() - t0


def test_criterion_5_generation(criterion, generation):
    criterion(5, False, "did not complete")
    study, elapsed = generation
    eps = study.params.eps
    t_gen, u_gen = study.trajectory.snapshot("generation")
    chk = study.check
    in_range = -0.1 <= float(u_gen.values.min()) and float(u_gen.values.max()) <= 1.1
    ok = (t_gen == pytest.approx(4 * eps**2 * abs(math.log(eps)), rel=1e-12) and in_range and chk.passed
          and chk.high_nodes > 0 and chk.low_nodes > 0 and elapsed < 180)
    criterion(5, ok, f"t_eps {t_gen:.5f}, u in [{chk.min_u:.3f}, {chk.max_u:.3f}], M0 {study.thresholds.M0:.2f}, "
                     f"margins high {chk.high_margin:.3f} low {chk.low_margin:.3f}, run {elapsed:.0f}s")
    assert t_gen == pytest.approx(generation_time(eps), rel=1e-12)
    assert in_range
    assert chk.passed and chk.high_nodes > 0 and chk.low_nodes > 0
    assert elapsed < 180


def test_criterion_6_envelope_containment(criterion, generation):
    criterion(6, False, "did not complete")
    study, elapsed = generation
    g_rep, m_rep = study.gen_report, study.motion_report
    expected_slack = 10 * study.params.grid.h**2 + study.params.dt
    ok = (study.slack == pytest.approx(expected_slack) and g_rep.contained and m_rep is not None
          and m_rep.contained and elapsed < 300)
    criterion(6, ok, f"C6 {study.generation.C6:g} (history {study.C6_history}), K {study.motion.K:g}, "
                     f"L {study.motion.L:.2f}, generation worst {max(g_rep.max_lower_violation, g_rep.max_upper_violation):.2e}, "
                     f"motion worst {max(m_rep.max_lower_violation, m_rep.max_upper_violation):.2e}, "
                     f"slack {study.slack:.1e}")
    assert study.slack == pytest.approx(expected_slack)
    assert g_rep.contained and g_rep.checked > 0
    assert m_rep.contained and m_rep.checked > 0
    assert elapsed < 300


# -- 7, 8. eps sweep -----------------------------------------------------------------------------

@pytest.fixture(scope="module")
def sweep():
    cfg, _ = load("sweep.cfg")
    probes = cfg.get("experiment", "probes")
    kw = cfg.initial_kwargs()
    t0 = time.perf_counter()
    reference = experiments.sharp_reference(cfg.sharp_params(), cfg.sharp_grid(), kw["radius"], probes)
    results = []
    for eps in cfg.eps_values:
        params = cfg.model_params(eps)
        u_init = initial_data(cfg.get("initial", "kind"), params, **kw)
        results.append(experiments.compare_run(params, u_init, reference, probes, cfg.get("analysis", "eta")))
    fits = experiments.fit_sweep(results, probes)
    return cfg, reference, results, fits, time.perf_counter() - t0


def test_criterion_7_thickness(criterion, sweep):
    criterion(7, False, "did not complete")
    cfg, _, results, fits, elapsed = sweep
    assert all(r.trajectory.final.u.grid.h <= r.eps / 2 + 1e-12 for r in results)
    final = fits[-1]
    assert final.t == 0.1
    ratios = [next(rec.thickness for rec in r.trajectory.records if rec.t == 0.1) / r.eps for r in results]
    slope = final.thickness.slope
    ok = abs(slope - 1) <= 0.25 and all(5.3 <= q <= 7.2 for q in ratios) and elapsed < 1200
    criterion(7, ok, f"thickness slope {slope:.3f}, thickness/eps {', '.join(f'{q:.2f}' for q in ratios)} "
                     f"(profile value {2 * HALF_WIDTH:.3f}), sweep {elapsed:.0f}s")
    assert abs(slope - 1) <= 0.25
    assert all(5.3 <= q <= 7.2 for q in ratios)
    assert elapsed < 1200


def test_criterion_8_hausdorff(criterion, sweep):
    criterion(8, False, "did not complete")
    cfg, reference, results, fits, _ = sweep
    slopes = {f.t: f.hausdorff.slope for f in fits}
    C = max(f.C for f in fits)
    # containment in the C eps neighbourhood at every probe time and every eps
    margins = []
    for r in results:
        for t, ref in reference.items():
            u = next(v for s, v, _ in r.trajectory.snapshots if abs(s - t) <= 1e-12)
            lines = extract_interface(u)
            margins.append(experiments.containment_margin(lines, ref, C, r.eps, 0.25 * u.grid.h))
    bound = 2 * math.sqrt(2) * math.atanh(1 - 2 * cfg.get("analysis", "eta"))
    ok = all(abs(s - 1) <= 0.3 for s in slopes.values()) and min(margins) >= 0 and C <= bound
    criterion(8, ok, "Hausdorff slopes " + ", ".join(f"t={t:g}: {s:.3f}" for t, s in slopes.items())
              + f", measured C {C:.2f} (layer half-width {bound:.3f}), min containment margin {min(margins):.1e}")
    assert all(abs(s - 1) <= 0.3 for s in slopes.values())
    assert min(margins) >= 0
    assert C <= bound


# -- 9. determinism ------------------------------------------------------------------------------

def test_criterion_9_determinism(criterion, tmp_path):
    criterion(9, False, "did not complete")
    cfg_path = DEMOS / "generation.cfg"
    outs = [tmp_path / "a", tmp_path / "b"]
    codes = [cli.main(["generation-check", "--config", str(cfg_path), "--out", str(o), "--quiet"]) for o in outs]
    name = "generation_eps0.02_metrics.csv"
    a, b = ((o / name).read_bytes() for o in outs)
    ok = codes == [0, 0] and a == b and len(a) > 0
    criterion(9, ok, f"exit codes {codes}, metrics CSV {len(a)} bytes, identical: {a == b}")
    assert codes == [0, 0]
    assert a == b
