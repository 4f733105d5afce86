"""Scenario files: INI-style sections holding one flat namespace of keys.

Section names are for grouping only (``[topology]``, ``[handover]``, ...);
every key must be unique across sections.  Two section families are special:

``[fap.N]``  scripted FAP ``N`` with ``x``, ``y`` and optionally ``csg``
             (``all`` or comma-separated UE ids) and ``tx_dbm``.
``[ue.N]``   scripted UE ``N`` with ``x``, ``y`` and optionally ``waypoint_x``,
             ``waypoint_y``, ``speed`` and ``service_class``.

Scripted FAPs/UEs replace the random placement of that kind.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .backhaul import DEFAULT_WEIGHTS
from .errors import ScenarioError
from .model import SERVICE_CLASSES, DeploymentType
from .radio import STRATEGIES
from .spectrum import SPLIT_MODES


@dataclass(frozen=True)
class ScriptedFap:
    id: int
    x: float
    y: float
    csg: Optional[tuple] = None  # None means every UE is authorised
    tx_dbm: Optional[float] = None


@dataclass(frozen=True)
class ScriptedUe:
    id: int
    x: float
    y: float
    waypoint_x: Optional[float] = None
    waypoint_y: Optional[float] = None
    speed: Optional[float] = None
    service_class: str = "voice"


@dataclass(frozen=True)
class ScenarioConfig:
    # topology
    deployment_type: str = "TypeC"
    macro_radius_m: float = 1000.0
    fap_count: int = 30
    ue_count: int = 10
    seed: int = 1
    fap_radius_m: float = 20.0
    fap_capacity: int = 4
    csg_auth_prob: float = 0.7
    neighbor_range_m: float = 100.0
    service_mix: dict = field(default_factory=lambda: {"voice": 0.5, "video": 0.25, "data": 0.25})
    # radio
    macro_tx_dbm: float = 46.0
    fap_tx_dbm: float = 10.0
    noise_floor_dbm: float = -98.0
    wall_loss_db: float = 10.0
    sinr_outage_threshold_db: float = 5.0
    processing_gain_db: float = 21.0
    shadowing: bool = False
    # spectrum
    strategy: str = "proposed"
    split_mode: str = "balanced"
    # mobility
    v_min_mps: float = 0.5
    v_max_mps: float = 2.0
    pause_s: float = 5.0
    mobility_dt_s: float = 0.5
    # handover
    threshold_velocity_mps: float = 10.0
    threshold_time_s: float = 5.0
    min_ebio_db: float = 7.0
    hop_latency_ms: float = 10.0
    air_latency_ms: float = 2.0
    detect_floor_dbm: float = -55.0
    retry_backoff_s: float = 2.0
    macro_hysteresis_db: float = 3.0
    # backhaul
    xdsl_capacity_mbps: float = 2.0
    sla_femto_reserved_mbps: float = 0.5
    wfq_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    queue_discipline: str = "wfq"
    isp_load_mbps: float = 1.6
    buffer_packets: int = 100
    renegotiation_period_s: float = 60.0
    monitor_window_s: float = 10.0
    packet_sim: bool = True
    # simulation
    sim_duration_s: float = 120.0
    metrics_interval_s: float = 10.0
    # outage sweep
    outage_strategies: tuple = STRATEGIES
    outage_fap_counts: tuple = (1000,)
    outage_thresholds_db: tuple = ()
    outage_drops: int = 1000
    # scripted entities
    scripted_faps: tuple = ()
    scripted_ues: tuple = ()

    def with_overrides(self, **kw) -> "ScenarioConfig":
        cfg = dataclasses.replace(self, **kw)
        validate(cfg)
        return cfg

    @property
    def thresholds(self) -> tuple:
        return self.outage_thresholds_db or (self.sinr_outage_threshold_db,)


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(x) for x in s.replace(";", ",").split(",") if x.strip())


def _ints(s):
    return tuple(int(x) for x in s.replace(";", ",").split(",") if x.strip())


def _strs(s):
    return tuple(x.strip() for x in s.replace(";", ",").split(",") if x.strip())


def _mapping(s):
    out = {}
    for item in _strs(s):
        k, sep, v = item.partition(":")
        if not sep:
            k, sep, v = item.partition("=")
        if not sep:
            raise ValueError(f"expected key:value, got {item!r}")
        out[k.strip()] = float(v)
    return out


_CONVERTERS = {field_.name: None for field_ in fields(ScenarioConfig)}
for _f in fields(ScenarioConfig):
    if _f.name in ("scripted_faps", "scripted_ues"):
        continue
    t = _f.type
    _CONVERTERS[_f.name] = {
        "str": str, "int": int, "float": float, "bool": _bool, "dict": _mapping,
    }.get(t)
_CONVERTERS.update(outage_strategies=_strs, outage_fap_counts=_ints, outage_thresholds_db=_floats)
_SETTABLE = {k for k, v in _CONVERTERS.items() if v is not None}


def _opt_float(sec, key):
    return float(sec[key]) if key in sec else None


def _parse_fap(idx: int, sec) -> ScriptedFap:
    csg = None
    raw = sec.get("csg", "all").strip()
    if raw.lower() != "all":
        csg = _ints(raw)
    return ScriptedFap(idx, float(sec["x"]), float(sec["y"]), csg, _opt_float(sec, "tx_dbm"))


def _parse_ue(idx: int, sec) -> ScriptedUe:
    return ScriptedUe(idx, float(sec["x"]), float(sec["y"]), _opt_float(sec, "waypoint_x"),
                      _opt_float(sec, "waypoint_y"), _opt_float(sec, "speed"),
                      sec.get("service_class", "voice").strip())


def parse_scenario(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"),
                                   default_section="\0")
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ScenarioError({"<file>": str(exc).splitlines()[0]}) from None
    values, errors, seen = {}, {}, {}
    faps, ues = [], []
    for name in cp.sections():
        sec = cp[name]
        kind, _, idx = name.partition(".")
        if kind in ("fap", "ue") and idx:
            try:
                parsed = (_parse_fap if kind == "fap" else _parse_ue)(int(idx), sec)
                (faps if kind == "fap" else ues).append(parsed)
            except (KeyError, ValueError) as exc:
                errors[f"[{name}]"] = f"bad scripted entry ({exc})"
            continue
        for key in sec:
            if key not in _SETTABLE:
                errors[key] = "unknown key"
                continue
            if key in seen and seen[key] != name:
                errors[key] = f"set in both [{seen[key]}] and [{name}]"
                continue
            seen[key] = name
            try:
                values[key] = _CONVERTERS[key](sec[key])
            except ValueError as exc:
                errors[key] = str(exc)
    faps.sort(key=lambda f: f.id)
    ues.sort(key=lambda u: u.id)
    if faps:
        values["fap_count"] = len(faps)
        values["scripted_faps"] = tuple(faps)
    if ues:
        values["ue_count"] = len(ues)
        values["scripted_ues"] = tuple(ues)
    cfg = ScenarioConfig(**values)
    try:
        validate(cfg)
    except ScenarioError as exc:
        # report range problems together with the parse errors
        errors = {**exc.errors, **errors}
    if errors:
        raise ScenarioError(errors)
    return cfg


def load_scenario(path) -> ScenarioConfig:
    p = Path(path)
    if not p.is_file():
        raise ScenarioError({"scenario": f"file not found: {p}"})
    return parse_scenario(p.read_text())


def validate(cfg: ScenarioConfig):
    """Raise ``ScenarioError`` naming every key whose value is out of range."""
    e = {}

    def check(key, ok, msg):
        if not ok:
            e[key] = msg

    try:
        dtype = DeploymentType(cfg.deployment_type)
    except ValueError:
        dtype = None
        e["deployment_type"] = "must be TypeA, TypeB or TypeC"
    check("macro_radius_m", cfg.macro_radius_m > 0, "must be > 0")
    check("fap_count", cfg.fap_count >= 0, "must be >= 0")
    if dtype is DeploymentType.TYPE_A:
        check("fap_count", cfg.fap_count == 1, "TypeA needs exactly 1 FAP")
    if dtype is DeploymentType.TYPE_B:
        check("fap_count", cfg.fap_count >= 2, "TypeB needs at least 2 FAPs")
    check("ue_count", cfg.ue_count >= 0, "must be >= 0")
    check("seed", 0 <= cfg.seed < 2 ** 64, "must be an unsigned 64-bit integer")
    check("fap_radius_m", cfg.fap_radius_m > 0, "must be > 0")
    check("fap_capacity", 2 <= cfg.fap_capacity <= 6, "must be in [2, 6]")
    check("csg_auth_prob", 0 <= cfg.csg_auth_prob <= 1, "must be in [0, 1]")
    check("neighbor_range_m", cfg.neighbor_range_m >= 0, "must be >= 0")
    check("service_mix", set(cfg.service_mix) <= set(SERVICE_CLASSES)
          and all(v >= 0 for v in cfg.service_mix.values())
          and sum(cfg.service_mix.values()) > 0, "weights over voice/video/data, not all zero")
    check("wall_loss_db", cfg.wall_loss_db >= 0, "must be >= 0")
    check("processing_gain_db", cfg.processing_gain_db >= 0, "must be >= 0")
    check("strategy", cfg.strategy in STRATEGIES, f"must be one of {', '.join(STRATEGIES)}")
    check("split_mode", cfg.split_mode in SPLIT_MODES, f"must be one of {', '.join(SPLIT_MODES)}")
    check("v_min_mps", 0 <= cfg.v_min_mps <= cfg.v_max_mps, "need 0 <= v_min_mps <= v_max_mps")
    check("pause_s", cfg.pause_s >= 0, "must be >= 0")
    check("mobility_dt_s", cfg.mobility_dt_s > 0, "must be > 0")
    check("threshold_velocity_mps", cfg.threshold_velocity_mps >= 0, "must be >= 0")
    check("threshold_time_s", cfg.threshold_time_s >= 0, "must be >= 0")
    check("min_ebio_db", math.isfinite(cfg.min_ebio_db), "must be finite")
    check("hop_latency_ms", cfg.hop_latency_ms >= 0, "must be >= 0")
    check("air_latency_ms", cfg.air_latency_ms >= 0, "must be >= 0")
    check("retry_backoff_s", cfg.retry_backoff_s >= 0, "must be >= 0")
    check("xdsl_capacity_mbps", cfg.xdsl_capacity_mbps > 0, "must be > 0")
    check("sla_femto_reserved_mbps", 0 <= cfg.sla_femto_reserved_mbps <= cfg.xdsl_capacity_mbps,
          "must be in [0, xdsl_capacity_mbps]")
    check("wfq_weights", set(cfg.wfq_weights) == set(SERVICE_CLASSES)
          and all(w > 0 for w in cfg.wfq_weights.values()),
          "needs a positive weight for each of voice, video, data")
    check("queue_discipline", cfg.queue_discipline in ("wfq", "fifo"), "must be wfq or fifo")
    check("isp_load_mbps", cfg.isp_load_mbps >= 0, "must be >= 0")
    check("buffer_packets", cfg.buffer_packets >= 1, "must be >= 1")
    check("renegotiation_period_s", cfg.renegotiation_period_s > 0, "must be > 0")
    check("monitor_window_s", cfg.monitor_window_s > 0, "must be > 0")
    check("sim_duration_s", cfg.sim_duration_s >= 0, "must be >= 0")
    check("metrics_interval_s", cfg.metrics_interval_s > 0, "must be > 0")
    check("outage_strategies", cfg.outage_strategies
          and all(s in STRATEGIES for s in cfg.outage_strategies), "unknown strategy in list")
    check("outage_fap_counts", all(n >= 0 for n in cfg.outage_fap_counts), "counts must be >= 0")
    check("outage_drops", cfg.outage_drops >= 0, "must be >= 0")
    for u in cfg.scripted_ues:
        check(f"[ue.{u.id}]", u.service_class in SERVICE_CLASSES, "unknown service_class")
    if e:
        raise ScenarioError(e)
