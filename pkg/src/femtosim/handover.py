"""Macrocell-to-femtocell handover call flow, registration DB and admission control.

The call flow runs as an explicit state machine. A successful
macro-to-femto handover logs the steps

    1 2 3 4 5 6a 6b 6c 6d 6e 7 8 9 10

(detection, report, DB query, authorised list, scan/select, request and its
relay over BS -> RNC -> CN -> FGW -> FAP, CAC, response, link set-up and
finally tear-down of the old link).  Femto-to-macro and femto-to-femto
transitions reuse the same skeleton without steps 3 and 4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional

import numpy as np

from .errors import ProtocolViolation
from .mobility import estimate_dwell_time
from .model import FrequencyPlan, Point2D, StationRef, Topology, Ue, femto_ref
from .radio import RadioParams, SinrSample, path_loss_femto, sinr_at
from .topology import neighbors_within

GOLDEN_STEPS = ("1", "2", "3", "4", "5", "6a", "6b", "6c", "6d", "6e", "7", "8", "9", "10")

ATTACHED_MACRO = "ATTACHED_MACRO"
ATTACHED_FEMTO = "ATTACHED_FEMTO"
FAPS_DETECTED = "FAPS_DETECTED"
AWAITING_AUTH_LIST = "AWAITING_AUTH_LIST"
SCANNING = "SCANNING"
REQUEST_SENT = "REQUEST_SENT"
ADMITTED = "ADMITTED"
PHY_RECONFIG = "PHY_RECONFIG"
LINK_UP = "LINK_UP"
COMPLETE = "COMPLETE"
REJECTED = "REJECTED"

STATES = (ATTACHED_MACRO, ATTACHED_FEMTO, FAPS_DETECTED, AWAITING_AUTH_LIST, SCANNING,
          REQUEST_SENT, ADMITTED, PHY_RECONFIG, LINK_UP, COMPLETE, REJECTED)

MACRO_TO_FEMTO = "macro_to_femto"
FEMTO_TO_MACRO = "femto_to_macro"
FEMTO_TO_FEMTO = "femto_to_femto"
MACRO_TO_MACRO = "macro_to_macro"
HANDOVER_KINDS = (MACRO_TO_MACRO, MACRO_TO_FEMTO, FEMTO_TO_MACRO, FEMTO_TO_FEMTO)

REJECT_REASONS = ("radio", "backhaul", "velocity", "time", "ebio")

# event -> (source states, allowed previous step labels or None, next state, labels appended)
_TABLE = {
    "detect": ({ATTACHED_MACRO, ATTACHED_FEMTO}, None, FAPS_DETECTED, ("1",)),
    "report": ({FAPS_DETECTED}, {"1"}, AWAITING_AUTH_LIST, ("2",)),
    "query_db": ({AWAITING_AUTH_LIST}, {"2"}, AWAITING_AUTH_LIST, ("3",)),
    "auth_list": ({AWAITING_AUTH_LIST}, {"3"}, SCANNING, ("4",)),
    "select": ({SCANNING}, {"2", "4"}, SCANNING, ("5",)),
    "send_request": ({SCANNING}, {"5"}, REQUEST_SENT, ("6a",)),
    "relay_rnc": ({REQUEST_SENT}, {"6a"}, REQUEST_SENT, ("6b",)),
    "relay_cn": ({REQUEST_SENT}, {"6b"}, REQUEST_SENT, ("6c",)),
    "relay_fgw": ({REQUEST_SENT}, {"6c"}, REQUEST_SENT, ("6d",)),
    "deliver": ({REQUEST_SENT}, {"6d"}, REQUEST_SENT, ("6e",)),
    "admit": ({REQUEST_SENT}, {"6e"}, ADMITTED, ("7",)),
    "reject": ({REQUEST_SENT}, {"6e"}, REJECTED, ("7", "REJECT")),
    "respond": ({ADMITTED}, {"7"}, PHY_RECONFIG, ("8",)),
    "link_up": ({PHY_RECONFIG}, {"8"}, LINK_UP, ("9",)),
    "teardown": ({LINK_UP}, {"9"}, COMPLETE, ("10",)),
    "abort": ({FAPS_DETECTED, AWAITING_AUTH_LIST, SCANNING}, None, None, ("ABORT",)),
    "reset": ({COMPLETE, REJECTED}, None, None, ()),
}
EVENTS = tuple(_TABLE)


@dataclass(frozen=True)
class RegistrationDb:
    fap_location: Mapping[int, Point2D]
    neighbor_list: Mapping[int, frozenset]
    authorized: Mapping[int, frozenset]

    def authorized_for(self, ue_id: int) -> frozenset:
        return self.authorized.get(ue_id, frozenset())


def build_registration_db(topology: Topology, neighbor_range: float = 100.0) -> RegistrationDb:
    loc = {f.id: f.position for f in topology.faps}
    nbrs = {f.id: frozenset(i for i in neighbors_within(topology, f.position, neighbor_range)
                            if i != f.id)
            for f in topology.faps}
    auth: dict[int, set] = {}
    for f in topology.faps:
        for u in f.csg_list:
            auth.setdefault(u, set()).add(f.id)
    return RegistrationDb(loc, nbrs, {u: frozenset(s) for u, s in auth.items()})


@dataclass(frozen=True)
class HandoverRequest:
    target_fap: int
    ebio: float
    scrambling_code: int
    ul_freq: object
    dl_freq: object
    location_code: int
    routing_code: int
    service_area_code: int

    def __post_init__(self):
        if not math.isfinite(self.ebio):
            raise ValueError("handover request needs a finite Eb/I0")


def build_request(fap, plan: FrequencyPlan, sample: SinrSample) -> HandoverRequest:
    band = plan.fap_assign[fap.id]
    lac = fap.overlay_macro or 0
    return HandoverRequest(
        target_fap=fap.id, ebio=sample.ebio, scrambling_code=fap.id % 512,
        ul_freq=band, dl_freq=band, location_code=lac,
        routing_code=lac * 16 + fap.id % 16, service_area_code=lac * 1000 + fap.id % 1000)


@dataclass(frozen=True)
class CacPolicy:
    threshold_time: float = 5.0
    threshold_velocity: float = 10.0
    min_ebio: float = 7.0

    def __post_init__(self):
        if self.threshold_time < 0 or self.threshold_velocity < 0:
            raise ValueError("CAC thresholds must be >= 0")


@dataclass(frozen=True)
class CacDecision:
    admit: bool
    reason: Optional[str] = None


@dataclass(frozen=True)
class HandoverFsm:
    ue: int
    kind: str = MACRO_TO_FEMTO
    state: str = ATTACHED_MACRO
    target: Optional[StationRef] = None
    reason: Optional[str] = None
    step_log: tuple = field(default_factory=tuple)

    @classmethod
    def start(cls, ue_id: int, kind: str = MACRO_TO_FEMTO) -> "HandoverFsm":
        return cls(ue=ue_id, kind=kind, state=_home_state(kind))

    @property
    def skips_auth(self) -> bool:
        return self.kind != MACRO_TO_FEMTO

    @property
    def terminal(self) -> bool:
        return self.state in (COMPLETE, REJECTED)


def _home_state(kind):
    return ATTACHED_MACRO if kind == MACRO_TO_FEMTO else ATTACHED_FEMTO


def fsm_transition(fsm: HandoverFsm, event: str, *, target: Optional[StationRef] = None,
                   reason: Optional[str] = None) -> HandoverFsm:
    """Apply ``event`` and return the successor machine.

    Raises ``ProtocolViolation`` for any event the current state does not accept.
    """
    try:
        sources, prev, nxt, labels = _TABLE[event]
    except KeyError:
        raise ProtocolViolation(f"unknown event {event!r}") from None
    last = fsm.step_log[-1] if fsm.step_log else None
    if fsm.state not in sources or (prev is not None and last not in prev):
        raise ProtocolViolation(f"event {event!r} not allowed in state {fsm.state} after step {last}")
    if event == "report" and fsm.skips_auth:
        nxt = SCANNING
    elif event == "select" and last == "2" and not fsm.skips_auth:
        raise ProtocolViolation("macro-to-femto selection requires the authorised list")
    elif event == "select" and last == "4" and fsm.skips_auth:
        raise ProtocolViolation("unexpected authorised list for this handover kind")
    if event == "select" and target is None:
        raise ProtocolViolation("select needs a target")
    if event == "abort":
        nxt = _home_state(fsm.kind)
    elif event == "reset":
        if fsm.state == COMPLETE:
            nxt = ATTACHED_FEMTO if fsm.target and fsm.target.kind == "femto" else ATTACHED_MACRO
        else:
            nxt = _home_state(fsm.kind)
    return replace(
        fsm, state=nxt, step_log=fsm.step_log + labels,
        target=target if target is not None else fsm.target,
        reason=reason if event == "reject" else fsm.reason)


def detect_faps(ue: Ue, topology: Topology, params: RadioParams, detect_floor: float,
                exclude=()) -> list[int]:
    """FAPs heard at or above ``detect_floor`` dBm, strongest first (ties by id)."""
    if not topology.faps:
        return []
    xy = topology.fap_xy
    d = np.hypot(xy[:, 0] - ue.position.x, xy[:, 1] - ue.position.y)
    tx = np.array([f.tx_power for f in topology.faps])
    p = tx - path_loss_femto(d, (d > params.fap_radius).astype(float), params)
    p = np.atleast_1d(p)
    ids = topology.fap_ids
    hit = np.nonzero(p >= detect_floor)[0]
    order = np.lexsort((ids[hit], -p[hit]))
    return [int(i) for i in ids[hit][order] if int(i) not in exclude]


def authorized_neighbor_list(db: RegistrationDb, ue: Ue, detected) -> list[int]:
    allowed = db.authorized_for(ue.id)
    return [f for f in detected if f in allowed]


def scan_and_select(ue: Ue, authorized, topology: Topology, plan: FrequencyPlan,
                    params: RadioParams, policy: CacPolicy):
    """Best authorised FAP by Eb/I0 among those passing the Eb/I0 and dwell filters.

    Returns ``(fap_id, SinrSample)`` or ``None``. Ties go to the smaller id.
    """
    best = None
    for fid in authorized:
        fap = topology.fap_by_id[fid]
        sample = sinr_at(ue, femto_ref(fid), topology, plan, params)
        if sample.ebio < policy.min_ebio:
            continue
        if estimate_dwell_time(ue, fap, params.fap_radius) < policy.threshold_time:
            continue
        if best is None or (sample.ebio, -fid) > (best[1].ebio, -best[0]):
            best = (fid, sample)
    return best


def cac_admit(fap, request: HandoverRequest, policy: CacPolicy, ue_speed: float, dwell: float,
              radio_load: int, backhaul_free: float, flow_need: float) -> CacDecision:
    """Admission at the target FAP; a rejection carries the first failing check."""
    if radio_load >= fap.radio_capacity:
        return CacDecision(False, "radio")
    if backhaul_free < flow_need:
        return CacDecision(False, "backhaul")
    if ue_speed > policy.threshold_velocity:
        return CacDecision(False, "velocity")
    if dwell < policy.threshold_time:
        return CacDecision(False, "time")
    if request.ebio < policy.min_ebio:
        return CacDecision(False, "ebio")
    return CacDecision(True)


def count_scans(with_auth_list: bool, detected, authorized) -> int:
    if with_auth_list:
        allowed = set(authorized)
        return sum(1 for f in set(detected) if f in allowed)
    return len(set(detected))
