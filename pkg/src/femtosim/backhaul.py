"""xDSL backhaul: WFQ scheduling at the home gateway and the SLA bandwidth broker.

WFQ follows the classic packet-by-packet approximation of GPS: each packet
gets a virtual finish tag ``F = max(V(a), F_prev(flow)) + size / weight`` with
``V`` the GPS virtual time, and the link always sends the smallest tag.
Sizes are bytes, so ``dV/dt = capacity_bytes_per_s / sum(active weights)``.
"""

from __future__ import annotations

import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional

from .errors import ConfigurationError, InvalidParameterError

DEFAULT_WEIGHTS = {"voice": 4.0, "video": 2.0, "data": 1.0}

# nominal per-flow rates requested at admission, Mbps
FLOW_RATE_MBPS = {"voice": 0.064, "video": 0.512, "data": 0.25}

# (packet size in bytes, mean inter-arrival in s, constant bit rate?)
TRAFFIC_PROFILE = {
    "voice": (160, 0.020, True),
    "video": (1000, 1000 * 8 / 512e3, True),
    "data": (1500, 1500 * 8 / 0.25e6, False),
}
ISP_PACKET_BYTES = 1500

_EPS = 1e-12


def bytes_per_second(capacity_mbps: float) -> float:
    return capacity_mbps * 1e6 / 8.0


@dataclass(frozen=True)
class XdslLink:
    id: str
    capacity: float  # Mbps
    attached_faps: frozenset = frozenset()

    def __post_init__(self):
        if not self.capacity > 0:
            raise InvalidParameterError(f"link {self.id}: capacity must be positive")


@dataclass(frozen=True)
class Packet:
    flow: object
    service_class: str
    size: int
    arrival: float

    def __post_init__(self):
        if not self.size > 0:
            raise InvalidParameterError("packet size must be positive")


class WfqScheduler:
    """Weighted fair queuing with exact GPS virtual-time tracking.

    Packets must be enqueued in non-decreasing arrival order.
    """

    def __init__(self, weights, capacity_mbps: float):
        if any(w <= 0 for w in weights.values()):
            raise ConfigurationError("WFQ weights must be positive")
        self.weights = dict(weights)
        self.rate = bytes_per_second(capacity_mbps)
        self.virtual_time = 0.0
        self._clock = 0.0
        self._last_finish: dict = {}
        self._gps_active: dict = {}  # flow -> (last finish tag, weight)
        self._heap: list = []
        self._counter = itertools.count()

    def __len__(self):
        return len(self._heap)

    def _advance(self, t: float):
        if t < self._clock - 1e-9:
            raise InvalidParameterError(f"time went backwards ({t} < {self._clock})")
        while self._clock < t:
            if not self._gps_active:
                self._clock = t
                return
            wsum = sum(w for _, w in self._gps_active.values())
            fmin = min(f for f, _ in self._gps_active.values())
            reach = self._clock + (fmin - self.virtual_time) * wsum / self.rate
            if reach <= t:
                self.virtual_time = fmin
                self._clock = reach
                self._gps_active = {k: v for k, v in self._gps_active.items()
                                    if v[0] > fmin + _EPS}
            else:
                self.virtual_time += (t - self._clock) * self.rate / wsum
                self._clock = t

    def enqueue(self, packet: Packet) -> float:
        """Queue ``packet`` and return its virtual finish tag."""
        try:
            w = self.weights[packet.service_class]
        except KeyError:
            raise ConfigurationError(f"no WFQ weight for class {packet.service_class!r}") from None
        self._advance(packet.arrival)
        start = max(self.virtual_time, self._last_finish.get(packet.flow, 0.0))
        finish = start + packet.size / w
        self._last_finish[packet.flow] = finish
        self._gps_active[packet.flow] = (finish, w)
        heapq.heappush(self._heap, (finish, packet.arrival, packet.flow, next(self._counter), packet))
        return finish

    def dequeue(self, now: float) -> Optional[Packet]:
        """Pop the queued packet with the smallest finish tag (ties: arrival, then flow)."""
        self._advance(max(now, self._clock))
        if not self._heap:
            return None
        return heapq.heappop(self._heap)[-1]


class FifoScheduler:
    """Single first-come first-served queue, the no-priority baseline."""

    def __init__(self, weights=None, capacity_mbps: float = 1.0):
        self._q: deque = deque()

    def __len__(self):
        return len(self._q)

    def enqueue(self, packet: Packet) -> float:
        self._q.append(packet)
        return packet.arrival

    def dequeue(self, now: float) -> Optional[Packet]:
        return self._q.popleft() if self._q else None


def make_scheduler(discipline: str, weights, capacity_mbps: float):
    if discipline == "wfq":
        return WfqScheduler(weights, capacity_mbps)
    if discipline == "fifo":
        return FifoScheduler(weights, capacity_mbps)
    raise ConfigurationError(f"unknown queue discipline {discipline!r}")


class LinkServer:
    """Non-preemptive, work-conserving transmitter in front of a scheduler."""

    def __init__(self, capacity_mbps: float, scheduler, buffer_limit: Optional[int] = None):
        self.rate = bytes_per_second(capacity_mbps)
        self.scheduler = scheduler
        self.buffer_limit = buffer_limit
        self.in_service: Optional[Packet] = None
        self.service_start = 0.0

    @property
    def busy(self) -> bool:
        return self.in_service is not None

    def arrive(self, packet: Packet, now: float):
        """Offer a packet. Returns ``(accepted, completion_time_if_service_started)``."""
        if self.buffer_limit is not None and len(self.scheduler) >= self.buffer_limit:
            return False, None
        self.scheduler.enqueue(packet)
        if self.busy:
            return True, None
        return True, self._start_next(now)

    def _start_next(self, now: float) -> Optional[float]:
        pkt = self.scheduler.dequeue(now)
        self.in_service = pkt
        if pkt is None:
            return None
        self.service_start = now
        return now + pkt.size / self.rate

    def complete(self, now: float):
        """Finish the packet in service. Returns ``(packet, next_completion_time)``."""
        done = self.in_service
        self.in_service = None
        return done, self._start_next(now)


@dataclass(frozen=True)
class ServiceRecord:
    packet: Packet
    start: float
    finish: float

    @property
    def delay(self) -> float:
        return self.finish - self.packet.arrival


def serve_link(packets, capacity_mbps: float, discipline: str = "wfq", weights=None,
               buffer_limit: Optional[int] = None):
    """Push a packet trace through one link; returns ``(served, dropped)``.

    Arrivals at time ``t`` are queued before the link picks its next packet at ``t``.
    """
    pending = sorted(packets, key=lambda p: p.arrival)
    server = LinkServer(capacity_mbps, make_scheduler(discipline, weights or DEFAULT_WEIGHTS,
                                                      capacity_mbps), buffer_limit)
    served, dropped = [], []
    i, n = 0, len(pending)
    completion = None
    while i < n or server.busy:
        if server.busy and (i >= n or completion <= pending[i].arrival):
            t = completion
            while i < n and pending[i].arrival <= t:
                ok, _ = server.arrive(pending[i], pending[i].arrival)
                if not ok:
                    dropped.append(pending[i])
                i += 1
            start = server.service_start
            pkt, completion = server.complete(t)
            served.append(ServiceRecord(pkt, start, t))
        else:
            ok, started = server.arrive(pending[i], pending[i].arrival)
            if not ok:
                dropped.append(pending[i])
            if started is not None:
                completion = started
            i += 1
    return served, dropped


# ---------------------------------------------------------------------------
# SLA and bandwidth broker


@dataclass(frozen=True)
class Sla:
    femto_reserved: float  # Mbps
    class_weights: dict = field(default_factory=lambda: dict(DEFAULT_WEIGHTS))
    renegotiation_period: float = 60.0


@dataclass(frozen=True)
class BandwidthRequest:
    flow: object
    fap: Optional[int]
    service_class: str
    rate: float  # Mbps
    client: str = "femto"  # or "isp"


@dataclass(frozen=True)
class Grant:
    grant_id: int
    flow: object
    client: str
    service_class: str
    granted: float
    from_reservation: float
    from_spare: float


@dataclass(frozen=True)
class BrokerRecord:
    time: float
    action: str  # negotiate | release | monitor | reserve | trim
    request: Optional[BandwidthRequest] = None
    grant: Optional[Grant] = None
    flow: object = None
    value: float = 0.0


HEADROOM = 1.2


class BrokerState:
    """Configuration, monitoring, computation and the append-only database of one link."""

    def __init__(self, config: Sla, link: XdslLink, window_s: float = 10.0):
        if not 0 <= config.femto_reserved <= link.capacity:
            raise InvalidParameterError("SLA femto reservation must lie in [0, link capacity]")
        self.config = config
        self.link_id = link.id
        self.window_s = window_s
        self.monitoring: dict = {}
        self.computed_reservation = min(config.femto_reserved, link.capacity)
        self.active: dict = {}
        self._db: list = []
        self._ids = itertools.count(1)

    @property
    def database(self) -> tuple:
        return tuple(self._db)

    @property
    def granted_total(self) -> float:
        return sum(g.granted for g in self.active.values())

    def _reserved_used(self):
        return sum(g.from_reservation for g in self.active.values())

    def _spare_used(self):
        return sum(g.from_spare for g in self.active.values())

    def negotiate(self, request: BandwidthRequest, link: XdslLink, now: float = 0.0) -> Grant:
        """Grant femto requests from the reservation first, then from unreserved spare."""
        if not request.rate > 0:
            raise InvalidParameterError("requested rate must be positive")
        free_total = max(0.0, link.capacity - self.granted_total)
        spare = max(0.0, link.capacity - self.computed_reservation - self._spare_used())
        if request.client == "femto":
            res_left = max(0.0, self.computed_reservation - self._reserved_used())
            from_res = min(request.rate, res_left)
            from_spare = min(request.rate - from_res, spare)
        else:
            from_res = 0.0
            from_spare = min(request.rate, spare)
        total = min(from_res + from_spare, free_total)
        if total < from_res + from_spare:
            # reservation shrank under existing grants; trim the spare part first
            from_spare = max(0.0, total - from_res)
            from_res = total - from_spare
        grant = Grant(next(self._ids), request.flow, request.client, request.service_class,
                      from_res + from_spare, from_res, from_spare)
        if grant.granted > 0:
            self.active[grant.grant_id] = grant
        self._db.append(BrokerRecord(now, "negotiate", request=request, grant=grant))
        return grant

    def release(self, grant_id: int, now: float = 0.0):
        grant = self.active.pop(grant_id, None)
        if grant is not None:
            self._db.append(BrokerRecord(now, "release", grant=grant))

    def monitor(self, flow, rate_sample: float, now: float):
        if rate_sample < 0:
            raise InvalidParameterError("rate sample must be >= 0")
        self.monitoring.setdefault(flow, deque()).append((now, rate_sample))
        self._db.append(BrokerRecord(now, "monitor", flow=flow, value=rate_sample))
        self._expire(flow, now)

    def _expire(self, flow, now):
        q = self.monitoring.get(flow)
        while q and q[0][0] <= now - self.window_s:
            q.popleft()

    def window_mean(self, flow, now: float) -> float:
        self._expire(flow, now)
        q = self.monitoring.get(flow)
        if not q:
            return 0.0
        return sum(v for _, v in q) / len(q)

    def femto_flows(self) -> set:
        flows = set()
        for rec in self._db:
            if rec.action == "negotiate" and rec.request.client == "femto":
                flows.add(rec.request.flow)
        return flows

    def observed_femto_demand(self, now: float) -> float:
        return sum(self.window_mean(f, now) for f in sorted(self.femto_flows(), key=str))

    def compute_reservation(self, link: XdslLink, now: float) -> float:
        demand = self.observed_femto_demand(now) * HEADROOM
        value = min(max(demand, self.config.femto_reserved), link.capacity)
        self.computed_reservation = value
        self._db.append(BrokerRecord(now, "reserve", value=value))
        self._trim_isp(link, now)
        return value

    def _trim_isp(self, link: XdslLink, now: float):
        # ISP traffic only ever holds unreserved spare; shrink the newest ISP grants first
        excess = self._spare_used() - max(0.0, link.capacity - self.computed_reservation)
        for gid in sorted(self.active, reverse=True):
            if excess <= 1e-12:
                break
            g = self.active[gid]
            if g.client == "femto" or g.from_spare <= 0:
                continue
            cut = min(excess, g.from_spare)
            excess -= cut
            g = replace(g, granted=g.granted - cut, from_spare=g.from_spare - cut)
            if g.granted > 0:
                self.active[gid] = g
            else:
                del self.active[gid]
            self._db.append(BrokerRecord(now, "trim", grant=g))

    def admit(self, link: XdslLink, flow_need: float) -> bool:
        if not flow_need > 0:
            raise InvalidParameterError("flow_need must be positive")
        return self.granted_total + flow_need <= link.capacity + 1e-12

    def summary(self) -> dict:
        grants = [r.grant for r in self._db if r.action == "negotiate"]
        return {
            "requests": len(grants),
            "granted_mbps": sum(g.granted for g in grants),
            "zero_grants": sum(1 for g in grants if g.granted == 0),
            "active_mbps": self.granted_total,
        }


def replay(database, config: Sla, link: XdslLink, window_s: float = 10.0) -> BrokerState:
    """Rebuild a broker by re-executing its database records in order."""
    b = BrokerState(config, link, window_s)
    for rec in database:
        if rec.action == "negotiate":
            b.negotiate(rec.request, link, rec.time)
        elif rec.action == "release":
            b.release(rec.grant.grant_id, rec.time)
        elif rec.action == "monitor":
            b.monitor(rec.flow, rec.value, rec.time)
        elif rec.action == "reserve":
            b.compute_reservation(link, rec.time)
    return b


def admit_backhaul_flow(link: XdslLink, broker: BrokerState, flow_need: float) -> bool:
    return broker.admit(link, flow_need)
