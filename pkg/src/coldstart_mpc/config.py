"""Experiment configuration: INI files, environment overrides, validation.

Sections and keys (all optional; an empty file gives the defaults)::

    [workload]  source, path, format, seed, duration, burst_min, burst_max,
                idle_min, idle_max, rate_min, rate_max, period, burst,
                rate, base_rate, amplitude
    [platform]  L_warm, L_cold, w_max, keepalive_ttl, service_noise,
                noise_sigma, initial_warm
    [control]   dt, H, alpha, beta, gamma, delta, eta, rho1, rho2
    [forecast]  harmonics, gamma_clip, stats_window, history_window, method
    [run]       policy, policies, output_dir, sample_interval

``workload.source`` is one of ``synthetic``, ``steady``, ``periodic``,
``sinusoid`` or ``file`` (then ``workload.path`` names the trace).
Environment variables ``COLDSTART_MPC_<SECTION>__<KEY>`` override file
values.
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .controller import ControllerError, MpcParams
from .forecast import ForecastConfig, ForecastError
from .policies import POLICIES
from .simcore import PlatformConfig
from .workload import (
    ArrivalTrace,
    SyntheticParams,
    TraceError,
    generate_synthetic,
    load_trace,
    periodic_trace,
    sinusoid_trace,
    steady_trace,
)

ENV_PREFIX = "COLDSTART_MPC_"


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _list(text: str) -> tuple[str, ...]:
    return tuple(p.strip() for p in text.split(",") if p.strip())


# (section, key) -> (type, default)
SCHEMA: dict[tuple[str, str], tuple] = {
    ("workload", "source"): (str, "synthetic"),
    ("workload", "path"): (str, ""),
    ("workload", "format"): (str, ""),
    ("workload", "seed"): (int, 0),
    ("workload", "duration"): (float, 3600.0),
    ("workload", "burst_min"): (float, 1.0),
    ("workload", "burst_max"): (float, 5.0),
    ("workload", "idle_min"): (float, 50.0),
    ("workload", "idle_max"): (float, 800.0),
    ("workload", "rate_min"): (float, 5.0),
    ("workload", "rate_max"): (float, 300.0),
    ("workload", "period"): (float, 900.0),
    ("workload", "burst"): (float, 5.0),
    ("workload", "rate"): (float, 20.0),
    ("workload", "base_rate"): (float, 0.0),
    ("workload", "amplitude"): (float, 0.5),
    ("platform", "L_warm"): (float, 0.28),
    ("platform", "L_cold"): (float, 10.5),
    ("platform", "w_max"): (int, 64),
    ("platform", "keepalive_ttl"): (float, 600.0),
    ("platform", "service_noise"): (_bool, False),
    ("platform", "noise_sigma"): (float, 0.1),
    ("platform", "initial_warm"): (int, 0),
    ("control", "dt"): (float, 1.0),
    ("control", "H"): (int, 20),
    ("control", "alpha"): (float, 1.0),
    ("control", "beta"): (float, 0.5),
    ("control", "gamma"): (float, 0.1),
    ("control", "delta"): (float, 0.3),
    ("control", "eta"): (float, 0.05),
    ("control", "rho1"): (float, 0.01),
    ("control", "rho2"): (float, 0.01),
    ("forecast", "harmonics"): (int, 10),
    ("forecast", "gamma_clip"): (float, 3.0),
    ("forecast", "stats_window"): (int, 60),
    ("forecast", "history_window"): (int, 600),
    ("forecast", "method"): (str, "fourier"),
    ("run", "policy"): (str, "mpc"),
    ("run", "policies"): (_list, ("mpc", "prewarm", "default")),
    ("run", "output_dir"): (str, "out"),
    ("run", "sample_interval"): (float, 60.0),
}
_CANON = {(s, k.lower()): (s, k) for s, k in SCHEMA}
SOURCES = ("synthetic", "steady", "periodic", "sinusoid", "file")


def canonical_key(dotted: str) -> tuple[str, str]:
    """``"Control.ALPHA"`` -> ``("control", "alpha")``; unknown keys raise."""
    if "." not in dotted:
        raise ConfigError(dotted, "expected <section>.<key>")
    sec, key = dotted.split(".", 1)
    canon = _CANON.get((sec.strip().lower(), key.strip().lower()))
    if canon is None:
        raise ConfigError(dotted, "unknown configuration key")
    return canon


@dataclass(frozen=True)
class WorkloadConfig:
    source: str = "synthetic"
    path: str = ""
    format: str = ""
    seed: int = 0
    duration: float = 3600.0
    burst_min: float = 1.0
    burst_max: float = 5.0
    idle_min: float = 50.0
    idle_max: float = 800.0
    rate_min: float = 5.0
    rate_max: float = 300.0
    period: float = 900.0
    burst: float = 5.0
    rate: float = 20.0
    base_rate: float = 0.0
    amplitude: float = 0.5

    def synthetic_params(self) -> SyntheticParams:
        return SyntheticParams(
            (self.burst_min, self.burst_max),
            (self.idle_min, self.idle_max),
            (self.rate_min, self.rate_max),
            self.duration,
            self.seed,
        )

    def build(self) -> ArrivalTrace:
        if self.source == "synthetic":
            return generate_synthetic(self.synthetic_params())
        if self.source == "steady":
            return steady_trace(self.period, self.duration)
        if self.source == "periodic":
            return periodic_trace(self.period, self.burst, self.rate, self.duration, self.base_rate)
        if self.source == "sinusoid":
            return sinusoid_trace(self.period, self.rate, self.duration, self.amplitude)
        with open(self.path, encoding="utf-8") as fh:
            return load_trace(fh, self.format or None)


@dataclass(frozen=True)
class ExperimentConfig:
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    platform: PlatformConfig = field(default_factory=PlatformConfig)
    mpc: MpcParams = field(default_factory=MpcParams)
    forecast: ForecastConfig = field(default_factory=ForecastConfig)
    initial_warm: int = 0
    policy: str = "mpc"
    policies: tuple[str, ...] = ("mpc", "prewarm", "default")
    output_dir: str = "out"
    sample_interval: float = 60.0
    values: Mapping[tuple[str, str], object] = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        out: dict = {}
        for (sec, key), val in sorted(self.values.items()):
            out.setdefault(sec, {})[key] = list(val) if isinstance(val, tuple) else val
        return out


def _parse_value(sec: str, key: str, text) -> object:
    typ, _ = SCHEMA[(sec, key)]
    if not isinstance(text, str):
        return text
    try:
        return typ(text.strip().strip('"').strip("'"))
    except ValueError as exc:
        raise ConfigError(f"{sec}.{key}", f"cannot parse {text!r} ({exc})") from None


def _build(values: dict) -> ExperimentConfig:
    def g(sec, key):
        return values[(sec, key)]

    wl = WorkloadConfig(**{k: g("workload", k) for (s, k) in SCHEMA if s == "workload"})
    if wl.source not in SOURCES:
        raise ConfigError("workload.source", f"must be one of {SOURCES}, got {wl.source!r}")
    if wl.source == "file" and not wl.path:
        raise ConfigError("workload.path", "required when workload.source = file")
    if wl.format and wl.format not in ("timestamps", "interarrivals"):
        raise ConfigError("workload.format", "must be timestamps or interarrivals")
    if wl.duration <= 0:
        raise ConfigError("workload.duration", "must be positive")
    for lo, hi in (("burst_min", "burst_max"), ("idle_min", "idle_max"), ("rate_min", "rate_max")):
        if not 0 < g("workload", lo) <= g("workload", hi):
            raise ConfigError(f"workload.{lo}", f"need 0 < {lo} <= {hi}")
    for key in ("period", "burst", "rate"):
        if g("workload", key) <= 0:
            raise ConfigError(f"workload.{key}", "must be positive")
    if not 0 <= g("workload", "amplitude") <= 1:
        raise ConfigError("workload.amplitude", "must lie in [0, 1]")

    pf_kwargs = {k: g("platform", k) for k in ("L_warm", "L_cold", "w_max", "keepalive_ttl", "service_noise", "noise_sigma")}
    checks = {
        "L_warm": lambda v: v > 0,
        "L_cold": lambda v: v >= 0,
        "w_max": lambda v: v >= 1,
        "keepalive_ttl": lambda v: v >= 0,
        "noise_sigma": lambda v: v >= 0,
    }
    for key, ok in checks.items():
        if not ok(pf_kwargs[key]):
            raise ConfigError(f"platform.{key}", f"invalid value {pf_kwargs[key]!r}")
    platform = PlatformConfig(**pf_kwargs)
    initial_warm = g("platform", "initial_warm")
    if not 0 <= initial_warm <= platform.w_max:
        raise ConfigError("platform.initial_warm", "must be within [0, w_max]")

    ctl = {k: g("control", k) for (s, k) in SCHEMA if s == "control"}
    if ctl["dt"] <= 0:
        raise ConfigError("control.dt", "must be positive")
    if ctl["H"] < 1:
        raise ConfigError("control.H", "must be >= 1")
    for key in ("alpha", "beta", "gamma", "delta", "eta", "rho1", "rho2"):
        if ctl[key] < 0:
            raise ConfigError(f"control.{key}", "weights must be non-negative")
    try:
        mpc = MpcParams(
            H=ctl["H"], dt=ctl["dt"], L_warm=platform.L_warm, L_cold=platform.L_cold, w_max=platform.w_max,
            alpha=ctl["alpha"], beta=ctl["beta"], gamma=ctl["gamma"], delta=ctl["delta"], eta=ctl["eta"],
            rho1=ctl["rho1"], rho2=ctl["rho2"],
        )
    except ControllerError as exc:
        raise ConfigError("control", str(exc)) from None

    fc = ForecastConfig(
        harmonics=g("forecast", "harmonics"),
        gamma_clip=g("forecast", "gamma_clip"),
        stats_window=g("forecast", "stats_window"),
        history_window=g("forecast", "history_window"),
        method=g("forecast", "method"),
    )
    try:
        fc.validate()
    except ForecastError as exc:
        key = str(exc).split()[0]
        raise ConfigError(key if key.startswith("forecast.") else "forecast", str(exc)) from None

    policy = g("run", "policy")
    if policy not in POLICIES:
        raise ConfigError("run.policy", f"must be one of {POLICIES}, got {policy!r}")
    for p in g("run", "policies"):
        if p not in POLICIES:
            raise ConfigError("run.policies", f"unknown policy {p!r}")
    if g("run", "sample_interval") <= 0:
        raise ConfigError("run.sample_interval", "must be positive")
    return ExperimentConfig(
        wl, platform, mpc, fc, initial_warm, policy, tuple(g("run", "policies")),
        g("run", "output_dir"), g("run", "sample_interval"), dict(values),
    )


def default_values() -> dict:
    return {k: default for k, (_, default) in SCHEMA.items()}


def load_config(
    path: str | os.PathLike | None = None,
    *,
    text: str | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, object] | None = None,
) -> ExperimentConfig:
    """Defaults <- config file (or ``text``) <- environment <- ``overrides``.

    ``overrides`` maps dotted keys (``"control.alpha"``) to values or strings.
    """
    values = default_values()
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("--config", f"no such file {str(p)!r}")
        parser.read_string(p.read_text(encoding="utf-8"), source=str(p))
    elif text is not None:
        parser.read_string(text)
    for sec in parser.sections():
        for key, raw in parser.items(sec):
            s, k = canonical_key(f"{sec}.{key}")
            values[(s, k)] = _parse_value(s, k, raw)
    env = os.environ if env is None else env
    for name, raw in sorted(env.items()):
        if not name.startswith(ENV_PREFIX):
            continue
        rest = name[len(ENV_PREFIX):]
        if "__" not in rest:
            raise ConfigError(name, "expected COLDSTART_MPC_<SECTION>__<KEY>")
        sec, key = rest.split("__", 1)
        s, k = canonical_key(f"{sec}.{key}")
        values[(s, k)] = _parse_value(s, k, raw)
    for dotted, raw in (overrides or {}).items():
        s, k = canonical_key(dotted)
        values[(s, k)] = _parse_value(s, k, raw)
    return _build(values)


def with_overrides(cfg: ExperimentConfig, overrides: Mapping[str, object]) -> ExperimentConfig:
    values = dict(cfg.values)
    for dotted, raw in overrides.items():
        s, k = canonical_key(dotted)
        values[(s, k)] = _parse_value(s, k, raw)
    return _build(values)
