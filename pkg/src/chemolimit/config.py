"""Experiment configuration: ``[section]`` headers with ``key = value`` lines.

Every key must appear in :data:`SCHEMA`; unknown keys, bad values and
inconsistent combinations are reported with the offending line number.
Comments start with ``#``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

from .diffuse import ChiSpec, ModelParams
from .numerics import Grid
from .sharp import SharpParams

MODES = ("diffuse", "sharp", "compare", "generation", "profile-tools")
EPS_MAX = ModelParams.EPS_MAX
H_RULE = 0.5  # h <= H_RULE * eps


class ConfigError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _float(s):
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _int(s):
    return int(s)


def _bool(s):
    low = s.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError("expected true or false")


def _floats(s):
    return tuple(_float(p) for p in s.replace(",", " ").split())


def _str(s):
    return s.strip()


def _positive(v):
    return v > 0


def _choice(*opts):
    return lambda v: v in opts


# section -> key -> (parser, default, check, description)
SCHEMA = {
    "experiment": {
        "mode": (_str, None, _choice(*MODES), "one of " + ", ".join(MODES) + " (optional)"),
        "name": (_str, "run", None, "label used in file names"),
        "probes": (_floats, (), None, "probe times"),
        "sweep": (_floats, (), None, "eps values for a sweep (empty: model eps only)"),
    },
    "model": {
        "eps": (_float, 0.02, lambda v: 0 < v <= EPS_MAX, f"interface width, 0 < eps <= {EPS_MAX}"),
        "alpha": (_float, 0.5, _positive, "growth imbalance"),
        "gamma": (_float, 1.0, _positive, "decay rate of v"),
        "chi": (_str, "linear", _choice("linear", "saturating"), "sensitivity kind"),
        "k": (_float, 0.0, lambda v: v >= 0, "sensitivity strength"),
        "c0": (_float, 1.05, lambda v: v > 1, "a-priori bound on |u0|"),
        "d0": (_float, None, _positive, "cutoff radius (default 0.1 min(lx, ly))"),
        "upwind": (_bool, False, None, "upwind the chemotaxis flux"),
    },
    "grid": {
        "lx": (_float, 1.0, _positive, "domain length in x"),
        "ly": (_float, 1.0, _positive, "domain length in y"),
        "nx": (_int, None, lambda v: v >= 8, "nodes in x"),
        "ny": (_int, None, lambda v: v >= 8, "nodes in y"),
        "h_over_eps": (_float, None, lambda v: 0 < v <= H_RULE, "spacing as a multiple of eps (per sweep member)"),
    },
    "time": {
        "t_end": (_float, 0.1, lambda v: v >= 0, "final time"),
        "dt_factor": (_float, 0.2, lambda v: 0 < v <= 0.2, "dt = dt_factor * eps^2"),
    },
    "initial": {
        "kind": (_str, "unprepared", _choice("prepared", "unprepared", "custom"), "initial data kind"),
        "radius": (_float, 0.25, _positive, "circle radius"),
        "center_x": (_float, None, None, "circle centre (default: domain centre)"),
        "center_y": (_float, None, None, "circle centre (default: domain centre)"),
        "amplitude": (_float, 0.4, lambda v: 0 < v <= 0.5, "unprepared amplitude"),
        "width": (_float, 0.1, _positive, "unprepared tanh width"),
        "expression": (_str, None, None, "custom u0(x, y)"),
    },
    "sharp": {
        "h": (_float, None, _positive, "spacing of the level-set grid (default: diffuse spacing)"),
        "k_redist": (_int, 5, lambda v: v >= 1, "steps between redistancing"),
        "dt_factor": (_float, 0.2, lambda v: 0 < v <= 0.2, "dt = dt_factor * h^2"),
    },
    "bounds": {
        "eta": (_float, 0.1, lambda v: 0 < v < 0.25, "threshold eta"),
        "C6": (_float, 1.0, _positive, "starting C6"),
        "K": (_float, 2.0, lambda v: v > 1, "starting K"),
        "max_doublings": (_int, 10, lambda v: v >= 0, "calibration doublings"),
        "envelope_times": (_int, 10, lambda v: v >= 1, "generation-envelope check times"),
        "motion": (_bool, False, None, "also check motion envelopes up to t_end"),
        "slack_h2": (_float, 10.0, lambda v: v >= 0, "slack = slack_h2 h^2 + slack_dt dt"),
        "slack_dt": (_float, 1.0, lambda v: v >= 0, "slack = slack_h2 h^2 + slack_dt dt"),
    },
    "analysis": {
        "eta": (_float, 0.1, lambda v: 0 < v < 0.25, "thickness threshold"),
        "slope_min": (_float, 0.7, None, "accepted Hausdorff slope range"),
        "slope_max": (_float, 1.3, None, "accepted Hausdorff slope range"),
    },
}


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)  # (section, key) -> value, defaults filled
    explicit: set = field(default_factory=set)

    def get(self, section: str, key: str):
        return self.values[(section, key)]

    def __getitem__(self, item: str):
        section, _, key = item.partition(".")
        return self.get(section, key)

    @property
    def mode(self):
        return self.get("experiment", "mode")

    @property
    def eps_values(self) -> tuple[float, ...]:
        sweep = self.get("experiment", "sweep")
        return tuple(sweep) if sweep else (self.get("model", "eps"),)

    def grid(self, eps: float | None = None) -> Grid:
        lx, ly = self.get("grid", "lx"), self.get("grid", "ly")
        ratio = self.get("grid", "h_over_eps")
        if ratio is not None:
            e = self.get("model", "eps") if eps is None else eps
            h = ratio * e
            return Grid(int(math.ceil(lx / h - 1e-9)) + 1, int(math.ceil(ly / h - 1e-9)) + 1, lx, ly)
        return Grid(self.get("grid", "nx"), self.get("grid", "ny"), lx, ly)

    def chi(self) -> ChiSpec:
        return ChiSpec(self.get("model", "chi"), self.get("model", "k"))

    def d0(self) -> float:
        d0 = self.get("model", "d0")
        return 0.1 * min(self.get("grid", "lx"), self.get("grid", "ly")) if d0 is None else d0

    def model_params(self, eps: float | None = None) -> ModelParams:
        e = self.get("model", "eps") if eps is None else eps
        return ModelParams(e, self.get("model", "alpha"), self.get("model", "gamma"), self.grid(e), self.chi(),
                           dt=self.get("time", "dt_factor") * e * e, t_end=self.get("time", "t_end"),
                           c0=self.get("model", "c0"), d0=self.d0(), upwind=self.get("model", "upwind"))

    def sharp_grid(self) -> Grid:
        h = self.get("sharp", "h")
        if h is None:
            return self.grid(min(self.eps_values))
        lx, ly = self.get("grid", "lx"), self.get("grid", "ly")
        return Grid(int(math.ceil(lx / h - 1e-9)) + 1, int(math.ceil(ly / h - 1e-9)) + 1, lx, ly)

    def sharp_params(self) -> SharpParams:
        return SharpParams(self.get("model", "alpha"), self.get("model", "gamma"), self.chi(), d0=self.d0(),
                           k_redist=self.get("sharp", "k_redist"), dt_factor=self.get("sharp", "dt_factor"))

    def initial_kwargs(self) -> dict:
        cx, cy = self.get("initial", "center_x"), self.get("initial", "center_y")
        center = None
        if cx is not None or cy is not None:
            center = (0.5 * self.get("grid", "lx") if cx is None else cx,
                      0.5 * self.get("grid", "ly") if cy is None else cy)
        return dict(center=center, radius=self.get("initial", "radius"), amplitude=self.get("initial", "amplitude"),
                    width=self.get("initial", "width"), expression=self.get("initial", "expression"))

    def echo(self) -> str:
        """Full configuration text, defaults included (unset optional keys are omitted)."""
        out = []
        for section, keys in SCHEMA.items():
            out.append(f"[{section}]")
            for key in keys:
                v = self.values[(section, key)]
                if v is None:
                    continue
                out.append(f"{key} = {_render(v)}")
            out.append("")
        return "\n".join(out)

    def as_dict(self) -> dict:
        return {f"{s}.{k}": v for (s, k), v in self.values.items()}


def _render(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def schema_doc() -> str:
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, default, _, desc) in keys.items():
            shown = "unset" if default is None else _render(default) if default != () else "empty"
            lines.append(f"  {key:<15} {desc} (default {shown})")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate; raises :class:`ConfigError` on the first problem."""
    cfg = ExperimentConfig({(s, k): spec[1] for s, keys in SCHEMA.items() for k, spec in keys.items()})
    where = {}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno)
            section = line[1:-1].strip()
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]", lineno)
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno)
        if section is None:
            raise ConfigError("key outside any [section]", lineno)
        key, _, val = (p.strip() for p in line.partition("="))
        if key not in SCHEMA[section]:
            raise ConfigError(f"unknown key {key!r} in [{section}]", lineno)
        if (section, key) in where:
            raise ConfigError(f"duplicate key {key!r} in [{section}] (first on line {where[(section, key)]})", lineno)
        parser, _, check, desc = SCHEMA[section][key]
        try:
            value = parser(val)
        except ValueError as exc:
            raise ConfigError(f"bad value for {section}.{key}: {val!r} ({exc})", lineno) from None
        if check is not None and not check(value):
            if section == "model" and key == "eps":
                raise ConfigError(f"eps={value} outside the asymptotic regime 0 < eps <= {EPS_MAX}", lineno)
            raise ConfigError(f"out-of-range value for {section}.{key}: {val!r} ({desc})", lineno)
        cfg.values[(section, key)] = value
        where[(section, key)] = lineno
        cfg.explicit.add((section, key))
    _validate(cfg, where)
    return cfg


def _validate(cfg: ExperimentConfig, where: dict) -> None:
    def line(*keys):
        found = [where[k] for k in keys if k in where]
        return max(found) if found else None

    sweep = cfg.get("experiment", "sweep")
    if len(set(sweep)) != len(sweep):
        raise ConfigError("sweep eps values must be distinct", line(("experiment", "sweep")))
    for e in sweep:
        if not 0 < e <= EPS_MAX:
            raise ConfigError(f"sweep eps={e} outside the asymptotic regime 0 < eps <= {EPS_MAX}",
                              line(("experiment", "sweep")))
    t_end = cfg.get("time", "t_end")
    for p in cfg.get("experiment", "probes"):
        if not 0 <= p <= t_end:
            raise ConfigError(f"probe time {p} outside [0, t_end={t_end}]", line(("experiment", "probes")))
    has_n = cfg.get("grid", "nx") is not None or cfg.get("grid", "ny") is not None
    ratio = cfg.get("grid", "h_over_eps")
    gkeys = [("grid", "nx"), ("grid", "ny"), ("grid", "h_over_eps")]
    if has_n and ratio is not None:
        raise ConfigError("give either nx/ny or h_over_eps, not both", line(*gkeys))
    if ratio is None:
        if cfg.get("grid", "nx") is None or cfg.get("grid", "ny") is None:
            raise ConfigError("grid needs nx and ny (or h_over_eps)", line(*gkeys))
        g = cfg.grid()
        e_min = min(cfg.eps_values)
        if max(g.hx, g.hy) > H_RULE * e_min * (1 + 1e-12):
            raise ConfigError(f"resolution rule h <= eps/2 violated: h={max(g.hx, g.hy):.4g} > "
                              f"{H_RULE * e_min:.4g} for eps={e_min}",
                              line(*gkeys, ("model", "eps"), ("experiment", "sweep"), ("grid", "lx"), ("grid", "ly")))
    if cfg.get("initial", "kind") == "custom" and not cfg.get("initial", "expression"):
        raise ConfigError("custom initial data needs initial.expression", line(("initial", "kind")))
    if cfg.get("analysis", "slope_min") > cfg.get("analysis", "slope_max"):
        raise ConfigError("analysis.slope_min exceeds slope_max", line(("analysis", "slope_min")))
