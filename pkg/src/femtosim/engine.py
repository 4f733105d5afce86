"""Deterministic discrete-event core.

One ``Simulation`` owns a clock and a heap of ``Event`` objects ordered by
``(time, sequence)``.  Everything random is drawn from named sub-streams of
the root seed, so a run is a pure function of its ``ScenarioConfig``.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np

from . import handover as ho
from .backhaul import (FLOW_RATE_MBPS, ISP_PACKET_BYTES, TRAFFIC_PROFILE, BandwidthRequest,
                       BrokerState, LinkServer, Packet, Sla, XdslLink, make_scheduler)
from .config import ScenarioConfig, validate
from .errors import SchedulingError
from .mobility import MobilityParams, MobilityState, estimate_dwell_time, initial_state, step
from .model import (DeploymentType, Fap, MacroCell, Point2D, StationRef, Topology, Ue,
                    femto_ref)
from .radio import (OutageScenario, RadioParams, best_server, outage_from_samples,
                    received_power, sinr_at, sinr_samples)
from .report import MetricsReport, _fmt, percentile
from .rng import derive_seed, stream
from .spectrum import allocate, femto_only_plan
from .topology import bounding_box, build_macro_cluster, place_faps, place_ues


@dataclass(frozen=True, order=True)
class Event:
    time: float
    sequence: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self.clock = 0.0

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: float, kind: str, payload=None) -> Event:
        if not time >= self.clock:
            raise SchedulingError(f"event {kind!r} at {time} is before the clock ({self.clock})")
        ev = Event(time, next(self._seq), kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def peek(self) -> Optional[Event]:
        return self._heap[0] if self._heap else None

    def pop(self) -> Optional[Event]:
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.clock = ev.time
        return ev


def schedule(queue: EventQueue, event: Event) -> EventQueue:
    """Insert an already-built event; its own sequence number is kept."""
    if not event.time >= queue.clock:
        raise SchedulingError(f"event at {event.time} is before the clock ({queue.clock})")
    heapq.heappush(queue._heap, event)
    return queue


# ---------------------------------------------------------------------------
# scenario assembly

def radio_params(cfg: ScenarioConfig) -> RadioParams:
    return RadioParams(macro_tx=cfg.macro_tx_dbm, fap_tx=cfg.fap_tx_dbm,
                       noise_floor=cfg.noise_floor_dbm, wall_loss=cfg.wall_loss_db,
                       sinr_outage_threshold=cfg.sinr_outage_threshold_db,
                       processing_gain=cfg.processing_gain_db, fap_radius=cfg.fap_radius_m,
                       shadowing=cfg.shadowing)


def cac_policy(cfg: ScenarioConfig) -> ho.CacPolicy:
    return ho.CacPolicy(cfg.threshold_time_s, cfg.threshold_velocity_mps, cfg.min_ebio_db)


def _nearest_macro(macros, p: Point2D) -> Optional[int]:
    if not macros:
        return None
    return min(macros, key=lambda m: (m.center.distance_to(p), m.id)).id


def _random_faps(cfg: ScenarioConfig, macros) -> list[Fap]:
    dtype = DeploymentType(cfg.deployment_type)
    kw = dict(tx_power=cfg.fap_tx_dbm, radio_capacity=cfg.fap_capacity)
    if dtype is DeploymentType.TYPE_A:
        return [Fap(0, Point2D(0.0, 0.0), None, None, cfg.fap_tx_dbm, cfg.fap_capacity,
                    backhaul_link="L0")]
    if dtype is DeploymentType.TYPE_B:
        area = MacroCell(0, Point2D(0.0, 0.0), cfg.macro_radius_m, None, 0.0)
        return place_faps(area, cfg.fap_count, derive_seed(cfg.seed, "faps", 0), overlay=False, **kw)
    faps, nxt = [], 0
    n, k = cfg.fap_count, len(macros)
    for i, m in enumerate(macros):
        count = n // k + (1 if i < n % k else 0)
        faps += place_faps(m, count, derive_seed(cfg.seed, "faps", m.id), first_id=nxt, **kw)
        nxt += count
    return faps


def build_topology(cfg: ScenarioConfig) -> Topology:
    dtype = DeploymentType(cfg.deployment_type)
    macros = (build_macro_cluster(cfg.macro_radius_m, cfg.macro_tx_dbm)
              if dtype is DeploymentType.TYPE_C else [])
    ue_ids = ([u.id for u in cfg.scripted_ues] if cfg.scripted_ues else list(range(cfg.ue_count)))
    everyone = frozenset(ue_ids)
    if cfg.scripted_faps:
        faps = []
        for s in cfg.scripted_faps:
            p = Point2D(s.x, s.y)
            csg = everyone if s.csg is None else frozenset(s.csg)
            faps.append(Fap(s.id, p, _nearest_macro(macros, p), None,
                            cfg.fap_tx_dbm if s.tx_dbm is None else s.tx_dbm, cfg.fap_capacity,
                            csg, f"L{s.id}"))
    else:
        faps = []
        for f in _random_faps(cfg, macros):
            rng = stream(cfg.seed, "csg", f.id)
            draw = rng.random(len(ue_ids)) < cfg.csg_auth_prob
            faps.append(replace(f, csg_list=frozenset(u for u, ok in zip(ue_ids, draw) if ok)))
    topo = Topology(macros, faps, [], dtype)
    params = radio_params(cfg)
    if cfg.scripted_ues:
        ues = []
        for s in cfg.scripted_ues:
            ue = Ue(s.id, Point2D(s.x, s.y), service_class=s.service_class)
            ue.attachment = best_server(ue, topo, params)
            ues.append(ue)
    elif cfg.ue_count and (macros or faps):
        ues = place_ues(topo, cfg.ue_count, derive_seed(cfg.seed, "ues"), params, cfg.service_mix)
    else:
        ues = []
    return Topology(macros, faps, ues, dtype)


def build_plan(cfg: ScenarioConfig, topology: Topology):
    if topology.deployment_type is DeploymentType.TYPE_C:
        return allocate(cfg.strategy, topology, derive_seed(cfg.seed, "plan"), cfg.split_mode)
    return femto_only_plan(topology)


# ---------------------------------------------------------------------------
# runtime records

_STEP_TEXT = {
    "1": "UE measures pilots, detected FAPs {detected}",
    "2": "UE reports detected FAP ids to {source}",
    "3": "{source} queries the registration database",
    "4": "database returns authorised list {authorized} (scans {scans_with} vs {scans_without} "
         "without list)",
    "5": "UE scans and selects {target} (Eb/I0 {ebio} dB)",
    "6a": "UE sends handover request to {source} ({request})",
    "6b": "{source} relays request to RNC",
    "6c": "RNC relays request to CN",
    "6d": "CN relays request to FGW",
    "6e": "FGW delivers request to {target}",
    "7": "{target} CAC/RRC checks (load {load}, backhaul free {free} Mbps, speed {speed} m/s, "
         "dwell {dwell} s)",
    "REJECT": "{target} rejects the request: {reason}",
    "8": "UE receives handover response, reconfigures physical channel",
    "9": "radio link UE-{target} established",
    "10": "{source} tears down the old radio link",
    "ABORT": "attempt abandoned: {reason}",
}


@dataclass
class Attempt:
    id: int
    ue: int
    kind: str
    source: StationRef
    started: float
    fsm: ho.HandoverFsm
    detected: list = field(default_factory=list)
    authorized: list = field(default_factory=list)
    target: Optional[StationRef] = None
    sample: Any = None
    request: Any = None
    grant: Any = None
    info: dict = field(default_factory=dict)
    lines: list = field(default_factory=list)
    outcome: Optional[str] = None
    reason: str = ""


@dataclass
class UeRuntime:
    ue: Ue
    mob: MobilityState
    rng: np.random.Generator
    attempt: Optional[Attempt] = None
    next_try: float = 0.0
    grant: Any = None
    flow: Optional[str] = None


@dataclass
class FlowState:
    id: str
    link: str
    service_class: str
    size: int
    mean_gap: float
    cbr: bool
    rng: np.random.Generator
    femto: bool = True


@dataclass
class IntervalStats:
    bytes: int = 0
    delays: list = field(default_factory=list)
    drops: int = 0


# ue-to-network signalling uses the air interface; everything behind the BS uses hops
_AIR = "air"
_HOP = "hop"
_NEXT = {
    "detect": ("report", _AIR),
    "query_db": ("auth_list", _HOP),
    "select": ("send_request", _AIR),
    "send_request": ("relay_rnc", _AIR),
    "relay_rnc": ("relay_cn", _HOP),
    "relay_cn": ("relay_fgw", _HOP),
    "relay_fgw": ("deliver", _HOP),
    "deliver": ("cac", None),
    "admit": ("respond", "respond"),
    "respond": ("link_up", _AIR),
    "link_up": ("teardown", _AIR),
}


class Simulation:
    def __init__(self, config: ScenarioConfig, *, trace: bool = False):
        validate(config)
        self.cfg = cfg = config
        self.trace = trace
        self.radio = radio_params(cfg)
        self.policy = cac_policy(cfg)
        self.mobility = MobilityParams(cfg.v_min_mps, cfg.v_max_mps, cfg.pause_s)
        self.topology = build_topology(cfg)
        self.plan = build_plan(cfg, self.topology)
        self.db = ho.build_registration_db(self.topology, cfg.neighbor_range_m)
        self.bounds = bounding_box(self.topology, cfg.fap_radius_m)
        self.queue = EventQueue()
        self.report = MetricsReport()
        self.traces: list[Attempt] = []
        self._attempt_ids = itertools.count(1)
        self.attached = Counter()
        self.pending = Counter()
        self.links = {f.backhaul_link: XdslLink(f.backhaul_link, cfg.xdsl_capacity_mbps,
                                                frozenset({f.id}))
                      for f in self.topology.faps}
        self.brokers: dict[str, BrokerState] = {}
        self.servers: dict[str, LinkServer] = {}
        self.flows: dict[str, FlowState] = {}
        self.link_flows: dict[str, set] = defaultdict(set)
        self.isp_grant: dict = {}
        self.stats: dict = defaultdict(IntervalStats)
        self.flow_bytes: Counter = Counter()
        self._flow_epoch = Counter()
        self.ues: dict[int, UeRuntime] = {}
        for ue in sorted(self.topology.ues, key=lambda u: u.id):
            rng = stream(cfg.seed, "mobility", ue.id)
            scripted = next((s for s in cfg.scripted_ues if s.id == ue.id), None)
            if scripted is not None and scripted.waypoint_x is not None:
                wp = Point2D(scripted.waypoint_x, scripted.waypoint_y)
                speed = scripted.speed if scripted.speed is not None else cfg.v_min_mps
                mob = MobilityState(wp, speed)
            else:
                mob = initial_state(ue, self.bounds, rng, self.mobility)
            ue = replace(ue, velocity=_velocity(ue.position, mob),
                         attachment=self._initial_attachment(ue))
            self.ues[ue.id] = UeRuntime(ue, mob, rng)

    def _initial_attachment(self, ue: Ue) -> Optional[StationRef]:
        # a femto start is only kept if the UE would also detect that FAP
        att = ue.attachment
        if att is None or att.kind == "macro" or self._power(att, ue) >= self.cfg.detect_floor_dbm:
            return att
        if self.topology.macros:
            return max(self.topology.macros, key=lambda m: (self._power(m.ref, ue), -m.id)).ref
        return None

    # -- dispatch ---------------------------------------------------------

    def run(self) -> MetricsReport:
        cfg = self.cfg
        end = cfg.sim_duration_s
        for rt in self.ues.values():
            att = rt.ue.attachment
            if att is not None and att.kind == "femto" and end > 0:
                self.attached[att.id] += 1
                self._join_femto(rt, att.id, 0.0)
        self.queue.schedule(cfg.mobility_dt_s, "mobility", 1)
        self.queue.schedule(cfg.metrics_interval_s, "metrics", 1)
        self.queue.schedule(cfg.renegotiation_period_s, "broker", 1)
        handlers = {"mobility": self._on_mobility, "handover": self._on_handover,
                    "packet": self._on_packet, "tx_done": self._on_tx_done,
                    "broker": self._on_broker, "metrics": self._on_metrics}
        last = 0.0
        while True:
            ev = self.queue.peek()
            if ev is None or ev.time > end:
                break
            ev = self.queue.pop()
            assert ev.time >= last
            last = ev.time
            handlers[ev.kind](ev.time, ev.payload)
        self._finish()
        return self.report

    def _finish(self):
        r = self.report
        for rt in self.ues.values():
            a = rt.attempt
            if a is not None and "6a" in a.fsm.step_log:
                r.in_flight += 1
        for link in sorted(self.brokers):
            s = self.brokers[link].summary()
            r.broker_requests += s["requests"]
            r.broker_granted_mbps += s["granted_mbps"]
            r.broker_zero_grants += s["zero_grants"]
        r.voice_delays.sort()
        self._run_outage()

    def _run_outage(self):
        cfg = self.cfg
        if cfg.outage_drops <= 0 or DeploymentType(cfg.deployment_type) is not DeploymentType.TYPE_C:
            return
        seed = derive_seed(cfg.seed, "outage")
        self.report.outage_seed = seed
        self.report.outage.update(run_outage_sweep(cfg, seed))

    # -- mobility and handover triggering -----------------------------------

    def _on_mobility(self, t, k):
        cfg = self.cfg
        for uid in sorted(self.ues):
            rt = self.ues[uid]
            rt.ue, rt.mob = step(rt.ue, rt.mob, cfg.mobility_dt_s, self.bounds, rt.rng,
                                 self.mobility)
            if rt.attempt is None and t >= rt.next_try:
                self._decide(rt, t)
        self.queue.schedule((k + 1) * cfg.mobility_dt_s, "mobility", k + 1)

    def _power(self, ref: StationRef, ue: Ue) -> float:
        return received_power(ref, ue.position, self.topology, self.radio)

    def _authorized(self, ue: Ue, fap_ids) -> list:
        return ho.authorized_neighbor_list(self.db, ue, fap_ids)

    def _decide(self, rt: UeRuntime, t: float):
        ue, topo, floor = rt.ue, self.topology, self.cfg.detect_floor_dbm
        att = ue.attachment
        if att is None:
            heard = self._authorized(ue, ho.detect_faps(ue, topo, self.radio, floor))
            free = [f for f in heard
                    if self.attached[f] + self.pending[f] < topo.fap_by_id[f].radio_capacity]
            if free:
                rt.ue = replace(ue, attachment=femto_ref(free[0]))
                self.attached[free[0]] += 1
                self._join_femto(rt, free[0], t)
            return
        if att.kind == "macro":
            self._legacy_macro(rt, t)
            detected = ho.detect_faps(rt.ue, topo, self.radio, floor)
            if detected:
                self._start(rt, ho.MACRO_TO_FEMTO, t, detected)
            return
        if self._power(att, ue) >= floor:
            return
        detected = ho.detect_faps(ue, topo, self.radio, floor, exclude={att.id})
        if ho.scan_and_select(ue, self._authorized(ue, detected), topo, self.plan, self.radio,
                              self.policy):
            self._start(rt, ho.FEMTO_TO_FEMTO, t, detected)
        elif topo.macros:
            self._start(rt, ho.FEMTO_TO_MACRO, t, detected)
        else:
            self._leave_femto(rt, t)
            rt.ue = replace(rt.ue, attachment=None)
            self.report.dropped_calls += 1
            self._log_row(t, rt.ue.id, att, None, "DROPPED", "coverage", "", 0.0)

    def _legacy_macro(self, rt: UeRuntime, t: float):
        ue = rt.ue
        cur = ue.attachment
        best = max(self.topology.macros, key=lambda m: (self._power(m.ref, ue), -m.id))
        if best.id != cur.id and (self._power(best.ref, ue)
                                  > self._power(cur, ue) + self.cfg.macro_hysteresis_db):
            rt.ue = replace(ue, attachment=best.ref)
            self.report.handovers[ho.MACRO_TO_MACRO] += 1
            self._log_row(t, ue.id, cur, best.ref, "COMPLETE", "", "legacy", 0.0)

    def _start(self, rt: UeRuntime, kind: str, t: float, detected):
        a = Attempt(next(self._attempt_ids), rt.ue.id, kind, rt.ue.attachment, t,
                    ho.HandoverFsm.start(rt.ue.id, kind), detected=list(detected))
        rt.attempt = a
        self._apply(a, "detect", t)

    # -- the call flow -----------------------------------------------------

    def _delay(self, kind) -> float:
        air, hop = self.cfg.air_latency_ms / 1000.0, self.cfg.hop_latency_ms / 1000.0
        return {_AIR: air, _HOP: hop, "respond": 4 * hop, None: 0.0}[kind]

    def _note(self, a: Attempt, t: float, label: str, **kw):
        if not self.trace:
            return
        ctx = dict(source=a.source, target=a.target, detected=a.detected,
                   authorized=a.authorized, reason=a.reason, **a.info)
        ctx.update(kw)
        a.lines.append((t, label, _STEP_TEXT[label].format(**ctx)))

    def _apply(self, a: Attempt, event: str, t: float, **kw):
        before = len(a.fsm.step_log)
        a.fsm = ho.fsm_transition(a.fsm, event, **kw)
        for label in a.fsm.step_log[before:]:
            self._note(a, t, label)
        if event == "send_request":
            self.report.initiated += 1
        if event == "report":
            nxt = "select" if a.fsm.skips_auth else "query_db"
            self.queue.schedule(t + self._delay(_AIR), "handover", (a.ue, a.id, nxt))
        elif event in _NEXT:
            nxt, lat = _NEXT[event]
            self.queue.schedule(t + self._delay(lat), "handover", (a.ue, a.id, nxt))

    def _on_handover(self, t, payload):
        uid, aid, event = payload
        rt = self.ues[uid]
        a = rt.attempt
        if a is None or a.id != aid:
            return
        custom = getattr(self, f"_ho_{event}", None)
        if custom is not None:
            custom(rt, a, t)
        else:
            self._apply(a, event, t)

    def _abort(self, rt: UeRuntime, a: Attempt, t: float, reason: str):
        a.reason = reason
        self._apply(a, "abort", t)
        self._close(rt, a, t, "ABORTED", reason)
        self.report.aborted[reason] += 1
        rt.next_try = t + self.cfg.retry_backoff_s

    def _ho_auth_list(self, rt, a, t):
        ue = rt.ue
        a.authorized = self._authorized(ue, a.detected)
        w = ho.count_scans(True, a.detected, a.authorized)
        wo = ho.count_scans(False, a.detected, a.authorized)
        r = self.report
        r.scan_attempts += 1
        r.scans_with_list += w
        r.scans_without_list += wo
        if w > wo or (len(a.authorized) < len(set(a.detected)) and not w < wo):
            r.scan_violations += 1
        a.info.update(scans_with=w, scans_without=wo)
        self._apply(a, "auth_list", t)
        if not a.authorized:
            self._abort(rt, a, t, "no_authorised_fap")
            return
        self.queue.schedule(t + self._delay(_AIR), "handover", (a.ue, a.id, "select"))

    def _ho_select(self, rt, a, t):
        ue, topo = rt.ue, self.topology
        if a.kind == ho.FEMTO_TO_MACRO:
            best = max(topo.macros, key=lambda m: (self._power(m.ref, ue), -m.id))
            a.target = best.ref
            a.sample = sinr_at(ue, best.ref, topo, self.plan, self.radio)
        else:
            if a.kind == ho.FEMTO_TO_FEMTO:
                a.detected = ho.detect_faps(ue, topo, self.radio, self.cfg.detect_floor_dbm,
                                            exclude={a.source.id})
                a.authorized = self._authorized(ue, a.detected)
            pick = ho.scan_and_select(ue, a.authorized, topo, self.plan, self.radio, self.policy)
            if pick is None:
                a.target = None
                self._abort(rt, a, t, "no_suitable_fap")
                return
            a.target = femto_ref(pick[0])
            a.sample = pick[1]
            a.request = ho.build_request(topo.fap_by_id[pick[0]], self.plan, pick[1])
            self.pending[pick[0]] += 1
        a.info["ebio"] = f"{a.sample.ebio:.2f}"
        self._apply(a, "select", t, target=a.target)

    def _ho_send_request(self, rt, a, t):
        if a.request is not None:
            q = a.request
            a.info["request"] = (f"target {a.target}, Eb/I0 {q.ebio:.2f} dB, SC {q.scrambling_code}, "
                                 f"UL/DL {q.ul_freq}/{q.dl_freq}, LAC {q.location_code}, "
                                 f"RAC {q.routing_code}, SAC {q.service_area_code}")
        else:
            a.info["request"] = f"target {a.target}"
        self._apply(a, "send_request", t)

    def _ho_cac(self, rt, a, t):
        ue, cfg = rt.ue, self.cfg
        if a.target.kind == "macro":
            a.info.update(load="-", free="-", speed=f"{ue.speed:.2f}", dwell="-")
            self._apply(a, "admit", t)
            return
        fap = self.topology.fap_by_id[a.target.id]
        broker = self._broker(fap.backhaul_link)
        need = FLOW_RATE_MBPS[ue.service_class]
        load = self.attached[fap.id] + self.pending[fap.id] - 1  # minus this UE's own hold
        free = self.links[fap.backhaul_link].capacity - broker.granted_total
        dwell = estimate_dwell_time(ue, fap, cfg.fap_radius_m)
        dec = ho.cac_admit(fap, a.request, self.policy, ue.speed, dwell, load, free, need)
        a.info.update(load=f"{load}/{fap.radio_capacity}", free=f"{free:.3f}",
                      speed=f"{ue.speed:.2f}", dwell=_fmt(dwell) if math.isinf(dwell)
                      else f"{dwell:.2f}")
        if not dec.admit:
            self.pending[fap.id] -= 1
            a.reason = dec.reason
            self._apply(a, "reject", t, reason=dec.reason)
            self.report.rejected[dec.reason] += 1
            self._close(rt, a, t, "REJECTED", dec.reason)
            rt.next_try = t + cfg.retry_backoff_s
            return
        a.grant = self._grant(fap.backhaul_link,
                              BandwidthRequest(f"ue{ue.id}", fap.id, ue.service_class, need), t)
        self.report.femto_admissions += 1
        if ue.speed > self.policy.threshold_velocity:
            self.report.admissions_over_velocity += 1
        self._apply(a, "admit", t)

    def _ho_teardown(self, rt, a, t):
        self._apply(a, "teardown", t)
        self._leave_femto(rt, t)
        rt.ue = replace(rt.ue, attachment=a.target)
        if a.target.kind == "femto":
            self.pending[a.target.id] -= 1
            self.attached[a.target.id] += 1
            self._join_femto(rt, a.target.id, t, a.grant)
        self.report.handovers[a.kind] += 1
        self._close(rt, a, t, "COMPLETE", "")

    def _close(self, rt: UeRuntime, a: Attempt, t: float, outcome: str, reason: str):
        a.outcome, a.reason = outcome, reason
        steps = " ".join(a.fsm.step_log)
        self._log_row(t, a.ue, a.source, a.target, outcome, reason, steps,
                      (t - a.started) * 1000.0)
        if self.trace:
            self.traces.append(a)
        a.fsm = ho.fsm_transition(a.fsm, "reset") if a.fsm.terminal else a.fsm
        rt.attempt = None

    def _log_row(self, t, uid, src, dst, outcome, reason, steps, latency_ms):
        self.report.handover_log.append((f"{t:.6f}", uid, str(src) if src else "",
                                         str(dst) if dst else "", outcome, reason, steps,
                                         f"{latency_ms:.3f}"))

    # -- backhaul ----------------------------------------------------------

    def _broker(self, link_id: str) -> BrokerState:
        b = self.brokers.get(link_id)
        if b is None:
            cfg = self.cfg
            sla = Sla(cfg.sla_femto_reserved_mbps, dict(cfg.wfq_weights), cfg.renegotiation_period_s)
            b = BrokerState(sla, self.links[link_id], cfg.monitor_window_s)
            self.brokers[link_id] = b
        return b

    def _grant(self, link_id, request, t):
        b = self._broker(link_id)
        g = b.negotiate(request, self.links[link_id], t)
        util = b.granted_total / self.links[link_id].capacity
        self.report.broker_peak_utilisation = max(self.report.broker_peak_utilisation, util)
        return g

    def _join_femto(self, rt: UeRuntime, fap_id: int, t: float, grant=None):
        ue, fap = rt.ue, self.topology.fap_by_id[fap_id]
        link = fap.backhaul_link
        flow = f"ue{ue.id}"
        if grant is None:
            grant = self._grant(link, BandwidthRequest(flow, fap_id, ue.service_class,
                                                       FLOW_RATE_MBPS[ue.service_class]), t)
        rt.grant = grant
        rt.flow = flow
        if not self.cfg.packet_sim:
            return
        if not self.link_flows[link] and self.cfg.isp_load_mbps > 0:
            isp = f"isp:{link}"
            self.isp_grant[link] = self._grant(
                link, BandwidthRequest(isp, None, "data", self.cfg.isp_load_mbps, "isp"), t)
            gap = ISP_PACKET_BYTES * 8 / (self.cfg.isp_load_mbps * 1e6)
            self._open_flow(FlowState(isp, link, "data", ISP_PACKET_BYTES, gap, False, None, False), t)
        size, gap, cbr = TRAFFIC_PROFILE[ue.service_class]
        self.link_flows[link].add(flow)
        self._open_flow(FlowState(flow, link, ue.service_class, size, gap, cbr, None), t)

    def _open_flow(self, fs: FlowState, t: float):
        self._flow_epoch[fs.id] += 1
        epoch = self._flow_epoch[fs.id]
        fs.rng = stream(self.cfg.seed, "traffic", fs.id, epoch)
        self.flows[fs.id] = fs
        first = t + float(fs.rng.uniform(0, fs.mean_gap))
        self.queue.schedule(first, "packet", (fs.id, epoch))

    def _leave_femto(self, rt: UeRuntime, t: float):
        att = rt.ue.attachment
        if att is None or att.kind != "femto":
            return
        self.attached[att.id] -= 1
        link = self.topology.fap_by_id[att.id].backhaul_link
        if rt.grant is not None:
            self._broker(link).release(rt.grant.grant_id, t)
            rt.grant = None
        if rt.flow is not None:
            self.flows.pop(rt.flow, None)
            self.link_flows[link].discard(rt.flow)
            rt.flow = None
        if not self.link_flows[link]:
            self.flows.pop(f"isp:{link}", None)
            g = self.isp_grant.pop(link, None)
            if g is not None:
                self._broker(link).release(g.grant_id, t)

    def _server(self, link: str) -> LinkServer:
        s = self.servers.get(link)
        if s is None:
            cap = self.links[link].capacity
            s = LinkServer(cap, make_scheduler(self.cfg.queue_discipline, self.cfg.wfq_weights, cap),
                           self.cfg.buffer_packets)
            self.servers[link] = s
        return s

    def _on_packet(self, t, payload):
        fid, epoch = payload
        fs = self.flows.get(fid)
        if fs is None or self._flow_epoch[fid] != epoch:
            return
        server = self._server(fs.link)
        ok, done = server.arrive(Packet(fid, fs.service_class, fs.size, t), t)
        if not ok:
            self.stats[(fs.link, fs.service_class)].drops += 1
            self.report.packets_dropped += 1
        if done is not None:
            self.queue.schedule(done, "tx_done", fs.link)
        gap = fs.mean_gap if fs.cbr else float(fs.rng.exponential(fs.mean_gap))
        self.queue.schedule(t + gap, "packet", payload)

    def _on_tx_done(self, t, link):
        pkt, nxt = self._server(link).complete(t)
        if nxt is not None:
            self.queue.schedule(nxt, "tx_done", link)
        if pkt is None:
            return
        st = self.stats[(link, pkt.service_class)]
        st.bytes += pkt.size
        st.delays.append(t - pkt.arrival)
        self.flow_bytes[pkt.flow] += pkt.size
        self.report.packets_served += 1
        if pkt.service_class == "voice" and not str(pkt.flow).startswith("isp:"):
            self.report.voice_delays.append(t - pkt.arrival)

    def _on_broker(self, t, k):
        for link in sorted(self.brokers):
            self.brokers[link].compute_reservation(self.links[link], t)
        self.queue.schedule((k + 1) * self.cfg.renegotiation_period_s, "broker", k + 1)

    def _on_metrics(self, t, k):
        dt = self.cfg.metrics_interval_s
        for (link, cls) in sorted(self.stats):
            st = self.stats[(link, cls)]
            d = np.asarray(st.delays) * 1000.0
            self.report.backhaul_log.append((
                f"{t:.6f}", link, cls, f"{st.bytes * 8 / dt / 1e6:.6f}",
                f"{float(d.mean()) if len(d) else 0.0:.6f}", f"{percentile(d, 99):.6f}", st.drops))
        self.stats.clear()
        for link in sorted(self.link_flows):
            b = self.brokers.get(link)
            for flow in sorted(self.link_flows[link]):
                b.monitor(flow, self.flow_bytes[flow] * 8 / dt / 1e6, t)
        self.flow_bytes.clear()
        self.queue.schedule((k + 1) * dt, "metrics", k + 1)


def _velocity(pos: Point2D, mob: MobilityState):
    if mob.pause_remaining > 0 or mob.speed == 0:
        return (0.0, 0.0)
    dx, dy = mob.waypoint.x - pos.x, mob.waypoint.y - pos.y
    d = math.hypot(dx, dy)
    return (0.0, 0.0) if d == 0 else (dx / d * mob.speed, dy / d * mob.speed)


# ---------------------------------------------------------------------------
# outage sweep and entry points

def run_outage_sweep(cfg: ScenarioConfig, seed: int, workers: int = 1,
                     n_drops: Optional[int] = None) -> dict:
    """``{(strategy, fap_count, threshold): {population: OutageResult}}``."""
    params = radio_params(cfg)
    n = cfg.outage_drops if n_drops is None else n_drops
    out = {}
    for count in cfg.outage_fap_counts:
        scen = OutageScenario(cfg.macro_radius_m, count, cfg.split_mode)
        samples = sinr_samples(scen, cfg.outage_strategies, params, n, seed, workers)
        for strategy in cfg.outage_strategies:
            sm, sf = samples[strategy]
            for thr in cfg.thresholds:
                out[(strategy, count, thr)] = outage_from_samples(strategy, sm, sf, thr)
    return out


def run_scenario(config: ScenarioConfig) -> MetricsReport:
    """Build and run one scenario; the result depends only on ``config``."""
    return Simulation(config).run()


def replicate_config(config: ScenarioConfig, index: int) -> ScenarioConfig:
    if index == 0:
        return config
    return replace(config, seed=derive_seed(config.seed, "replicate", index))


def run_replicates(config: ScenarioConfig, n: int, workers: int = 1) -> list[MetricsReport]:
    """Independent engine instances, returned in replicate-index order."""
    configs = [replicate_config(config, i) for i in range(n)]
    if workers > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(run_scenario, configs))
    return [run_scenario(c) for c in configs]


def merge_reports(reports) -> MetricsReport:
    it = iter(reports)
    acc = next(it)
    for r in it:
        acc = acc.merge(r)
    return acc


def trace_handover(config: ScenarioConfig) -> Optional[Attempt]:
    """First handover attempt that reached a verdict (COMPLETE or REJECTED)."""
    sim = Simulation(replace(config, outage_drops=0), trace=True)
    sim.run()
    for a in sim.traces:
        if a.outcome in ("COMPLETE", "REJECTED"):
            return a
    return None


def format_trace(a: Attempt) -> str:
    lines = [f"handover attempt {a.id}: UE {a.ue} {a.kind} from {a.source}"]
    for t, label, text in a.lines:
        lines.append(f"{t * 1000.0:12.3f} ms  [{label:>6}]  {text}")
    lines.append(f"outcome: {a.outcome}" + (f" ({a.reason})" if a.reason else ""))
    lines.append("step_log: " + " ".join(a.fsm.step_log))
    return "\n".join(lines) + "\n"
