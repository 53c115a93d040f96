"""Orchestration shared by the command line and the acceptance tests.

``generation_study`` runs the diffuse system from unprepared data through
the generation time (and optionally on to ``t_end``), calibrates the
envelope constants and checks containment.  ``compare_run`` pairs one
diffuse run with a level-set reference; ``fit_sweep`` turns a list of
those into convergence fits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from . import bounds, sharp
from .analysis import ConvergenceFit, GenerationReport, directed_distance, fit_rate, generation_check
from .diffuse import ModelParams, Trajectory, circle_distance, cutoff_values, run
from .kinetics import generation_time


def motion_constants_for(eps: float, K: float, d0: float, T: float, eta: float = 0.1) -> bounds.MotionConstants:
    """Motion constants with the smallest ``eps0 >= eps`` that satisfies the window.

    With ``L = ln(d0/(4 eps0))/T`` the window ``exp(LT) + K <= d0/(2 eps)``
    reads ``eps0 >= d0 / (4 (d0/(2 eps) - K))``.
    """
    room = d0 / (2.0 * eps) - K
    if not room > 1.0:
        raise bounds.EnvelopeWindowError(f"epsilon too large for (K, L, d0): need d0/(2eps) - K > 1, "
                                         f"got {room:.4g} (K={K}, d0={d0}, eps={eps})")
    eps0 = max(eps, d0 / (4.0 * room))
    return bounds.derive_motion_constants(eta, K=K, d0=d0, T=T, eps0=eps0)


def _worst(reports) -> float:
    return max((max(r.max_lower_violation, r.max_upper_violation) for r in reports), default=0.0)


@dataclass
class GenerationStudy:
    params: ModelParams
    u_init: object
    trajectory: Trajectory
    generation: bounds.GenerationConstants
    C6_history: list
    thresholds: bounds.Thresholds
    check: GenerationReport
    gen_report: bounds.EnvelopeReport
    slack: float
    motion: bounds.MotionConstants | None = None
    K_history: list = field(default_factory=list)
    motion_report: bounds.EnvelopeReport | None = None

    @property
    def passed(self) -> bool:
        ok = self.check.passed and self.gen_report.contained
        if self.motion_report is not None:
            ok = ok and self.motion_report.contained
        return ok

    def constants(self) -> dict:
        groups = dict(generation=self.generation, thresholds=self.thresholds, slack=self.slack)
        if self.motion is not None:
            groups["motion"] = self.motion
        return bounds.constants_record(**groups)


def generation_study(params: ModelParams, u_init, *, eta: float = 0.1, C6: float = 1.0, K: float = 2.0,
                     n_times: int = 10, max_doublings: int = 10, motion: bool = False,
                     sharp_params: sharp.SharpParams | None = None, sharp_grid=None, center=None,
                     radius: float | None = None, slack: float | None = None, k_doublings: int = 4,
                     log=None) -> GenerationStudy:
    """Generation check plus envelope calibration for one diffuse run.

    Containment of the generation envelopes is tested at ``n_times``
    equally spaced times in ``(0, t_eps]``; C6 is doubled from ``C6`` until
    it holds.  With ``motion`` the run continues to ``t_end`` and the motion
    envelopes around the level-set solution (started from the circle of
    ``radius`` about ``center``) are tested at ``n_times`` times in
    ``[t_eps, t_end]`` with K doubled from ``K``.
    """
    log = log or (lambda *a: None)
    eps = params.eps
    t_gen = generation_time(eps)
    gen_times = [t_gen * k / n_times for k in range(1, n_times + 1)]
    stops = list(gen_times)
    if motion:
        if params.t_end <= t_gen:
            raise ValueError("motion envelopes need t_end beyond the generation time")
        stops += [t_gen + (params.t_end - t_gen) * k / n_times for k in range(1, n_times + 1)]
    else:
        params = ModelParams(params.eps, params.alpha, params.gamma, params.grid, params.chi, params.dt,
                             t_gen, params.c0, params.d0, params.upwind)
    traj = run(params, u_init, extra_stops=stops)
    snaps = [(t, u) for t, u, _ in traj.snapshots]
    grid = params.grid
    if slack is None:
        slack = bounds.default_slack(grid.h, params.dt)

    gen0 = bounds.generation_constants(params.spec, C6)
    early = [(t, u) for t, u in snaps if 0 < t <= t_gen * (1 + 1e-12)]

    def gen_reports(c6):
        c = gen0.with_C6(c6)
        out = []
        for t, u in early:
            lo, hi = bounds.generation_envelope(u_init, t, eps, c)
            out.append(bounds.check_envelope(u, lo, hi, slack, t))
        return out

    def gen_ok(c6):
        w = _worst(gen_reports(c6))
        log(f"C6 = {c6:g}: worst generation-envelope violation {w:.3g}")
        return w == 0.0

    c6, c6_hist = bounds.calibrate(gen_ok, C6, max_doublings)
    gen = gen0.with_C6(c6)
    rep = bounds.EnvelopeReport()
    for r in gen_reports(c6):
        rep.merge(r)

    if center is None:
        center = (0.5 * grid.lx, 0.5 * grid.ly)
    d_init = None
    if radius is not None:
        d_init = grid.field(cutoff_values(circle_distance(grid, center, radius).values, params.d0))
    T = max(params.t_end - t_gen, 1e-12) if motion else 0.1
    mc = motion_constants_for(eps, K, params.d0, T, eta) if motion else bounds.derive_motion_constants(eta)
    th = bounds.fit_thresholds(eta, eps, gen, mc, u_init, d_init)
    _, u_gen = traj.snapshot("generation")
    check = generation_check(u_gen, u_init, eps, th.M0, eta)
    study = GenerationStudy(params, u_init, traj, gen, c6_hist, th, check, rep, slack)
    if not motion:
        return study

    if sharp_params is None or radius is None:
        raise ValueError("motion envelopes need sharp_params and the initial radius")
    sgrid = grid if sharp_grid is None else sharp_grid
    state = sharp.circle_levelset(sgrid, sharp_params, radius, center)
    late = [(t, u) for t, u in snaps if t >= t_gen * (1 - 1e-12)]
    pairs = []
    for t, u in late:
        state = sharp.advance(state, t - t_gen, sharp_params)
        pairs.append((t - t_gen, u, sharp.transfer_distance(state, grid, params.d0)))

    def motion_reports(k):
        m = motion_constants_for(eps, k, params.d0, T, eta)
        out = []
        for s, u, d in pairs:
            lo, hi = bounds.motion_envelope(d, s, eps, m)
            out.append(bounds.check_envelope(u, lo, hi, slack, s + t_gen))
        return m, out

    def k_ok(k):
        try:
            _, reps = motion_reports(k)
        except bounds.EnvelopeWindowError as exc:
            log(f"K = {k:g}: {exc}")
            return False
        w = _worst(reps)
        log(f"K = {k:g}: worst motion-envelope violation {w:.3g}")
        return w == 0.0

    try:
        k_val, k_hist = bounds.calibrate(k_ok, K, k_doublings)
    except bounds.CalibrationError:
        k_val, k_hist = K, [(K, False)]
    m, reps = motion_reports(k_val)
    mrep = bounds.EnvelopeReport()
    for r in reps:
        mrep.merge(r)
    study.motion, study.K_history, study.motion_report = m, k_hist, mrep
    study.thresholds = bounds.fit_thresholds(eta, eps, gen, m, u_init, d_init)
    return study


# -- diffuse vs sharp -------------------------------------------------------------------------

@dataclass
class CompareResult:
    eps: float
    trajectory: Trajectory
    reference: dict  # t -> polylines of the level-set interface


def sharp_reference(sparams: sharp.SharpParams, grid, radius: float, times, center=None,
                    initial=None) -> dict:
    """Level-set interfaces at the requested times (circle start unless ``initial`` is a state)."""
    state = initial if initial is not None else sharp.circle_levelset(grid, sparams, radius, center)
    out = {}
    for t in sorted(set(float(t) for t in times)):
        state = sharp.advance(state, t, sparams)
        out[t] = sharp.zero_level_set(state.d)
    return out


def compare_run(params: ModelParams, u_init, reference: dict, probes=(), eta: float = 0.1) -> CompareResult:
    """Diffuse run landing exactly on the reference times, with Hausdorff distances recorded there."""
    times = sorted(t for t in reference if 0 < t <= params.t_end)

    def ref(t):
        for s in reference:
            if abs(s - t) <= 1e-12 * max(1.0, s):
                return reference[s]
        return None

    traj = run(params, u_init, probes, extra_stops=times, reference=ref, eta=eta)
    return CompareResult(params.eps, traj, reference)


@dataclass
class SweepFit:
    t: float
    hausdorff: ConvergenceFit | None
    thickness: ConvergenceFit | None
    C: float  # max of hausdorff / eps over the sweep


def fit_sweep(results, times) -> list[SweepFit]:
    out = []
    for t in times:
        hs, ts = [], []
        for res in results:
            for rec in res.trajectory.records:
                if abs(rec.t - t) <= 1e-12 * max(1.0, t):
                    if math.isfinite(rec.hausdorff):
                        hs.append((res.eps, rec.hausdorff))
                    if math.isfinite(rec.thickness):
                        ts.append((res.eps, rec.thickness))
                    break
        fh = fit_rate(hs) if len(hs) >= 3 and all(m > 0 for _, m in hs) else None
        ft = fit_rate(ts) if len(ts) >= 3 and all(m > 0 for _, m in ts) else None
        C = max((m / e for e, m in hs), default=math.nan)
        out.append(SweepFit(float(t), fh, ft, C))
    return out


def containment_margin(lines, reference, C: float, eps: float, resolution: float) -> float:
    """``C eps - sup over lines of dist(., reference)`` (nonnegative means contained)."""
    return C * eps - directed_distance(lines, reference, resolution)

