"""Command line entry point.

Subcommands: simulate-diffuse, simulate-sharp, compare, generation-check,
profile-tools.  Exit codes: 0 success, 1 configuration error, 2 numerical
failure, 3 acceptance-check failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import bounds, experiments, io, kinetics, plots, sharp
from .analysis import NoInterfaceError, extract_interface
from .config import ConfigError, ExperimentConfig, parse_config, schema_doc
from .diffuse import METRIC_COLUMNS, BlowUpError, InterfaceMarginError, initial_data, run
from .geometry import distance_to_polylines, inside_polylines
from .numerics import HelmholtzConvergenceError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 1, 2, 3

NUMERIC_ERRORS = (BlowUpError, HelmholtzConvergenceError, sharp.InterfaceVanishedError, sharp.CFLError,
                  kinetics.RootsCoalesceError, kinetics.StepSizeUnderflowError, kinetics.EquilibriumError,
                  bounds.AdmissibilityError, bounds.EnvelopeWindowError, bounds.CalibrationError, NoInterfaceError)

SUBCOMMAND_MODE = {"simulate-diffuse": "diffuse", "simulate-sharp": "sharp", "compare": "compare",
                   "generation-check": "generation", "profile-tools": "profile-tools"}

log = logging.getLogger("chemolimit")


class AcceptanceFailure(RuntimeError):
    pass


class Outputs:
    """Writes files into one directory and keeps the manifest inventory."""

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}
        self.notices: list[str] = []

    def path(self, name: str) -> Path:
        return self.root / name

    def text(self, name: str, content: str) -> Path:
        p = self.path(name)
        p.write_text(content)
        return self.add(p)

    def add(self, p: Path) -> Path:
        self.files[p.name] = io.sha256(p)
        return p

    def notice(self, msg: str):
        log.warning(msg)
        self.notices.append(msg)

    def manifest(self, cfg: ExperimentConfig | None, constants: dict, timings: dict, status: str):
        data = {
            "config": cfg.echo() if cfg is not None else None,
            "constants": {k: (float(v) if isinstance(v, (int, float, np.floating)) else str(v))
                          for k, v in constants.items()},
            "files": [{"name": n, "sha256": h} for n, h in sorted(self.files.items())],
            "timings": timings,
            "notices": self.notices,
            "status": status,
        }
        p = self.path("manifest.json")
        p.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
        return data


def _safe(tag: str) -> str:
    return tag.replace("@", "_t").replace("/", "_")


def _eps_tag(eps: float) -> str:
    return f"eps{eps:g}"


# -- diffuse ------------------------------------------------------------------------------

def _diffuse_member(cfg_text: str, eps: float):
    cfg = parse_config(cfg_text)
    params = cfg.model_params(eps)
    u0 = initial_data(cfg.get("initial", "kind"), params, **cfg.initial_kwargs())
    t0 = time.perf_counter()
    traj = run(params, u0, cfg.get("experiment", "probes"), eta=cfg.get("analysis", "eta"))
    return eps, traj.records, [(t, u.values, tag) for t, u, tag in traj.snapshots], time.perf_counter() - t0


def _map(fn, cfg_text, eps_values, jobs):
    if jobs > 1 and len(eps_values) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, [cfg_text] * len(eps_values), eps_values))
    return [fn(cfg_text, e) for e in eps_values]


def _profile_curves(u, eps, lines):
    """``u`` along the horizontal line through the domain centre, and ``U0(d/eps)``
    with ``d`` the signed distance to the extracted interface."""
    g = u.grid
    j = g.ny // 2
    pts = np.column_stack([g.x, np.full(g.nx, g.y[j])])
    d = distance_to_polylines(pts, lines)
    d = np.where(inside_polylines(pts, lines), -d, d)
    return g.x, [("u", u.values[:, j]), ("U0(d/eps)", kinetics.u0(d / eps))]


def cmd_diffuse(cfg: ExperimentConfig, cfg_text: str, out: Outputs, jobs: int) -> dict:
    timings = {}
    rows = []
    name = cfg.get("experiment", "name")
    results = _map(_diffuse_member, cfg_text, list(cfg.eps_values), jobs)
    overlay = []
    for eps, records, snaps, seconds in results:
        timings[_eps_tag(eps)] = seconds
        rows += [r.as_row() for r in records]
        grid = cfg.grid(eps)
        frames = []
        for t, vals, tag in snaps:
            u = grid.field(vals)
            out.add(io.write_snapshot(out.path(f"{name}_{_eps_tag(eps)}_{_safe(tag)}.txt"), u, t, eps))
            frames.append((t, extract_interface(u)))
        out.add(io.write_polylines(out.path(f"{name}_{_eps_tag(eps)}_interfaces.csv"), frames))
        t_last, lines_last = frames[-1]
        if lines_last:
            overlay.append((f"eps={eps:g}, t={t_last:.3g}", lines_last))
            s, curves = _profile_curves(grid.field(snaps[-1][1]), eps, lines_last)
            out.text(f"{name}_{_eps_tag(eps)}_profile.svg", plots.profile_plot(s, curves, f"profile, eps={eps:g}"))
        else:
            out.notice(f"eps={eps:g}: empty interface at t={t_last:.3g}; overlay frame omitted")
    out.add(io.write_csv(out.path(f"{name}_metrics.csv"), METRIC_COLUMNS, rows))
    if overlay:
        out.text(f"{name}_overlay.svg", plots.overlay_plot(overlay, (cfg.get("grid", "lx"), cfg.get("grid", "ly"))))
    return {"timings": timings, "constants": {}}


# -- sharp ----------------------------------------------------------------------------------

def _initial_levelset(cfg: ExperimentConfig):
    sp = cfg.sharp_params()
    grid = cfg.sharp_grid()
    kind = cfg.get("initial", "kind")
    kw = cfg.initial_kwargs()
    if kind == "custom":
        from .diffuse import eval_expression
        d_tilde = grid.field(0.5 - eval_expression(kw["expression"], grid))
        return sp, sharp.initial_levelset(d_tilde, sp)
    return sp, sharp.circle_levelset(grid, sp, kw["radius"], kw["center"])


def _sharp_times(cfg: ExperimentConfig):
    return sorted({float(t) for t in cfg.get("experiment", "probes") if t > 0} | {cfg.get("time", "t_end")})


def cmd_sharp(cfg: ExperimentConfig, cfg_text: str, out: Outputs, jobs: int) -> dict:
    name = cfg.get("experiment", "name")
    sp, state = _initial_levelset(cfg)
    t0 = time.perf_counter()
    frames, rows = [], []
    states = [state] + sharp.run_levelset(state, [t for t in _sharp_times(cfg) if t > 0], sp)
    for st in states:
        lines = sharp.zero_level_set(st.d)
        frames.append((st.t, lines))
        area = sum(abs(ln.signed_area()) for ln in lines if ln.closed)
        rows.append((st.t, area, math.sqrt(area / math.pi), sum(ln.length() for ln in lines)))
        out.add(io.write_snapshot(out.path(f"{name}_levelset_t{st.t:.6g}.txt"), st.d, st.t, math.nan))
    out.add(io.write_polylines(out.path(f"{name}_interfaces.csv"), frames))
    out.add(io.write_csv(out.path(f"{name}_sharp_metrics.csv"), ("t", "area", "equal_area_radius", "length"), rows))
    out.text(f"{name}_overlay.svg", plots.overlay_plot([(f"t={t:.3g}", ls) for t, ls in frames if ls],
                                                       (cfg.get("grid", "lx"), cfg.get("grid", "ly"))))
    return {"timings": {"sharp": time.perf_counter() - t0}, "constants": {}}


# -- compare ----------------------------------------------------------------------------------

def _compare_member(cfg_text: str, eps: float, reference=None):
    cfg = parse_config(cfg_text)
    params = cfg.model_params(eps)
    u0 = initial_data(cfg.get("initial", "kind"), params, **cfg.initial_kwargs())
    t0 = time.perf_counter()
    res = experiments.compare_run(params, u0, reference, eta=cfg.get("analysis", "eta"))
    return res, time.perf_counter() - t0


class _Member:
    def __init__(self, reference):
        self.reference = reference

    def __call__(self, cfg_text, eps):
        return _compare_member(cfg_text, eps, self.reference)


def cmd_compare(cfg: ExperimentConfig, cfg_text: str, out: Outputs, jobs: int) -> dict:
    name = cfg.get("experiment", "name")
    times = sorted({float(t) for t in cfg.get("experiment", "probes") if t > 0}) or [cfg.get("time", "t_end")]
    t0 = time.perf_counter()
    sp, state = _initial_levelset(cfg)
    reference = experiments.sharp_reference(sp, state.d.grid, None, times, initial=state)
    timings = {"sharp": time.perf_counter() - t0}
    results = _map(_Member(reference), cfg_text, list(cfg.eps_values), jobs)
    rows, overlay = [], []
    for res, seconds in results:
        timings[_eps_tag(res.eps)] = seconds
        for rec in res.trajectory.records:
            if any(abs(rec.t - t) <= 1e-12 * max(1.0, t) for t in times):
                rows.append(rec.as_row())
        t_last, u_last, _ = res.trajectory.snapshots[-1]
        lines = extract_interface(u_last)
        if lines:
            overlay.append((f"eps={res.eps:g}", lines))
        frames = [(t, extract_interface(u)) for t, u, _ in res.trajectory.snapshots]
        out.add(io.write_polylines(out.path(f"{name}_{_eps_tag(res.eps)}_interfaces.csv"), frames))
    out.add(io.write_csv(out.path(f"{name}_metrics.csv"), METRIC_COLUMNS, rows))
    out.add(io.write_polylines(out.path(f"{name}_sharp_interfaces.csv"), sorted(reference.items())))
    constants = {}
    failed = []
    if len(results) < 3:
        out.notice(f"sweep has {len(results)} eps value(s); rate fit skipped (needs 3)")
    else:
        fits = experiments.fit_sweep([r for r, _ in results], times)
        fit_rows, series = [], []
        lo, hi = cfg.get("analysis", "slope_min"), cfg.get("analysis", "slope_max")
        for f in fits:
            for metric, fit in (("hausdorff", f.hausdorff), ("thickness", f.thickness)):
                if fit is None:
                    out.notice(f"t={f.t:g}: no {metric} fit (missing samples)")
                    continue
                fit_rows.append((f.t, metric, fit.slope, fit.intercept, fit.residual, f.C if metric == "hausdorff"
                                 else math.nan))
                series.append((f"{metric} t={f.t:g}", list(fit.samples), fit))
                constants[f"fit.{metric}.t{f.t:g}.slope"] = fit.slope
            constants[f"fit.hausdorff.t{f.t:g}.C"] = f.C
            if f.hausdorff is None or not lo <= f.hausdorff.slope <= hi:
                failed.append(f"t={f.t:g}: Hausdorff slope "
                              f"{'missing' if f.hausdorff is None else f'{f.hausdorff.slope:.3f}'} outside [{lo}, {hi}]")
        out.add(io.write_csv(out.path(f"{name}_fit.csv"), ("t", "metric", "slope", "intercept", "residual", "C"),
                             fit_rows))
        if series:
            out.text(f"{name}_rates.svg", plots.rate_plot(series, "convergence in eps"))
    ref_last = reference[max(reference)]
    if ref_last:
        overlay.append(("limit", ref_last))
    if overlay:
        out.text(f"{name}_overlay.svg", plots.overlay_plot(overlay, (cfg.get("grid", "lx"), cfg.get("grid", "ly"))))
    res0 = results[-1][0]
    t_last, u_last, _ = res0.trajectory.snapshots[-1]
    lines = extract_interface(u_last)
    if lines:
        s, curves = _profile_curves(u_last, res0.eps, lines)
        out.text(f"{name}_profile.svg", plots.profile_plot(s, curves, f"profile, eps={res0.eps:g}"))
    if failed:
        raise AcceptanceFailure("; ".join(failed), {"timings": timings, "constants": constants})
    return {"timings": timings, "constants": constants}


# -- generation ----------------------------------------------------------------------------------

def cmd_generation(cfg: ExperimentConfig, cfg_text: str, out: Outputs, jobs: int) -> dict:
    name = cfg.get("experiment", "name")
    kw = cfg.initial_kwargs()
    timings, constants, failed = {}, {}, []
    for eps in cfg.eps_values:
        params = cfg.model_params(eps)
        u0 = initial_data(cfg.get("initial", "kind"), params, **kw)
        t0 = time.perf_counter()
        motion = cfg.get("bounds", "motion")
        slack = cfg.get("bounds", "slack_h2") * params.grid.h**2 + cfg.get("bounds", "slack_dt") * params.dt
        radius = kw["radius"] if cfg.get("initial", "kind") != "custom" else None
        study = experiments.generation_study(
            params, u0, eta=cfg.get("bounds", "eta"), C6=cfg.get("bounds", "C6"), K=cfg.get("bounds", "K"),
            n_times=cfg.get("bounds", "envelope_times"), max_doublings=cfg.get("bounds", "max_doublings"),
            motion=motion, sharp_params=cfg.sharp_params() if motion else None,
            sharp_grid=cfg.sharp_grid() if motion else None, center=kw["center"], radius=radius, slack=slack,
            log=log.info)
        timings[_eps_tag(eps)] = time.perf_counter() - t0
        tag = _eps_tag(eps)
        out.add(io.write_csv(out.path(f"{name}_{tag}_metrics.csv"), METRIC_COLUMNS,
                             [r.as_row() for r in study.trajectory.records]))
        t_gen, u_gen = study.trajectory.snapshot("generation")
        out.add(io.write_snapshot(out.path(f"{name}_{tag}_generation.txt"), u_gen, t_gen, eps))
        record = study.constants()
        out.text(f"{name}_{tag}_constants.txt", bounds.format_constants(record))
        constants.update({f"{tag}.{k}": v for k, v in record.items()})
        chk = study.check
        lines = [f"eps = {eps!r}", f"t_gen = {t_gen!r}", f"passed = {study.passed}",
                 f"generation_check = {chk.passed}", f"min_u = {chk.min_u!r}", f"max_u = {chk.max_u!r}",
                 f"high_margin = {chk.high_margin!r}", f"low_margin = {chk.low_margin!r}",
                 f"high_nodes = {chk.high_nodes}", f"low_nodes = {chk.low_nodes}",
                 f"C6 = {study.generation.C6!r}", f"C6_history = {study.C6_history}",
                 f"generation_envelope_contained = {study.gen_report.contained}",
                 f"generation_envelope_worst = {max(study.gen_report.max_lower_violation, study.gen_report.max_upper_violation)!r}"]
        if study.motion_report is not None:
            lines += [f"K = {study.motion.K!r}", f"K_history = {study.K_history}",
                      f"motion_envelope_contained = {study.motion_report.contained}"]
        lines += [f"failure = {msg}" for msg in chk.failures]
        # an empty offset region makes the generation check vacuous
        empty = [side for side, n in (("high", chk.high_nodes), ("low", chk.low_nodes)) if n == 0]
        if empty:
            lines.append(f"failure = empty {' and '.join(empty)} region at M0 = {study.thresholds.M0:.4g}")
        out.text(f"{name}_{tag}_report.txt", "\n".join(lines) + "\n")
        if not study.passed or empty:
            failed.append(f"eps={eps:g}: " + ("; ".join(chk.failures) or ("empty check region" if empty else
                                                                        "envelope containment failed")))
    result = {"timings": timings, "constants": constants}
    if failed:
        raise AcceptanceFailure("; ".join(failed), result)
    return result


# -- profile tools ------------------------------------------------------------------------------

def cmd_profile(cfg: ExperimentConfig | None, cfg_text: str, out: Outputs, jobs: int) -> dict:
    alpha = cfg.get("model", "alpha") if cfg else 0.5
    c0 = cfg.get("model", "c0") if cfg else 1.05
    eta = cfg.get("bounds", "eta") if cfg else 0.1
    z = np.linspace(-30.0, 30.0, 601)
    U = kinetics.u0(z)
    out.add(io.write_csv(out.path("profile.csv"), ("z", "U0", "U0_prime", "U0_second", "ode_residual"),
                         zip(z, U, kinetics.u0_prime(z), kinetics.u0_second(z),
                             kinetics.u0_second(z) + kinetics.f(U))))
    deltas = np.linspace(-0.04, 0.04, 17)
    roots = [kinetics.perturbed_roots(float(d)) for d in deltas]
    out.add(io.write_csv(out.path("roots.csv"), ("delta", "alpha_minus", "a", "alpha_plus", "mu_delta"),
                         [(float(d), r.alpha_minus, r.a, r.alpha_plus, r.mu_delta) for d, r in zip(deltas, roots)]))
    rows = []
    for delta in (-0.01, 0.0, 0.01):
        for tau in (0.0, 1.0, 2.0, 5.0):
            for xi in (0.1, 0.3, 0.45, 0.55, 0.7, 0.9):
                y = float(kinetics.flow_Y(tau, xi, delta))
                rows.append((tau, xi, delta, y, float(kinetics.flow_Y_xi(tau, xi, delta)),
                             float(kinetics.amplification_A(tau, xi, delta))))
    out.add(io.write_csv(out.path("flow.csv"), ("tau", "xi", "delta", "Y", "Y_xi", "A"), rows))
    mc = bounds.derive_motion_constants(eta)
    gc = bounds.generation_constants(kinetics.BistableSpec(alpha, c0))
    record = bounds.constants_record(motion=mc, generation=gc, profile_margin=bounds.profile_margin(mc),
                                     half_width=float(kinetics.u0_inverse(eta)))
    out.text("constants.txt", bounds.format_constants(record))
    return {"timings": {}, "constants": record}


HANDLERS = {"simulate-diffuse": cmd_diffuse, "simulate-sharp": cmd_sharp, "compare": cmd_compare,
            "generation-check": cmd_generation, "profile-tools": cmd_profile}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="chemolimit", description=__doc__.splitlines()[0],
                                formatter_class=argparse.RawDescriptionHelpFormatter,
                                epilog="configuration schema:\n" + schema_doc())
    sub = p.add_subparsers(dest="command", required=True)
    for name in HANDLERS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, required=name != "profile-tools", help="configuration file")
        s.add_argument("--out", type=Path, default=Path("out"), help="output directory")
        s.add_argument("--jobs", type=int, default=1, help="parallel sweep members")
        s.add_argument("--quiet", action="store_true", help="only report errors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO, format="%(message)s")
    cfg, cfg_text = None, ""
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        if args.config is not None:
            cfg_text = args.config.read_text()
            cfg = parse_config(cfg_text)
            mode = SUBCOMMAND_MODE[args.command]
            if cfg.mode is not None and cfg.mode != mode:
                raise ConfigError(f"config mode {cfg.mode!r} does not match subcommand {args.command!r}")
            cfg.model_params(min(cfg.eps_values))  # surface parameter errors as configuration errors
    except (OSError, ConfigError, ValueError) as exc:
        log.error(f"configuration error: {exc}")
        return EXIT_CONFIG
    out = Outputs(args.out)
    start = time.perf_counter()
    status, code, result = "ok", EXIT_OK, {"timings": {}, "constants": {}}
    try:
        result = HANDLERS[args.command](cfg, cfg_text, out, args.jobs)
    except AcceptanceFailure as exc:
        msg, result = exc.args
        status, code = f"acceptance failure: {msg}", EXIT_ACCEPT
    except NUMERIC_ERRORS as exc:
        status, code = f"numerical failure: {type(exc).__name__}: {exc}", EXIT_NUMERIC
    except (InterfaceMarginError, ConfigError) as exc:
        status, code = f"configuration error: {exc}", EXIT_CONFIG
    result["timings"]["total"] = time.perf_counter() - start
    out.manifest(cfg, result["constants"], result["timings"], status)
    if code != EXIT_OK:
        log.error(status)
    else:
        log.info(f"wrote {len(out.files)} files to {out.root}")
    return code


if __name__ == "__main__":
    sys.exit(main())
