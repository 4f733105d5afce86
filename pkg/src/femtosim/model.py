"""Core value types shared by the topology, radio, spectrum and handover modules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Mapping, NamedTuple, Optional

import numpy as np

from .errors import InvalidParameterError, InvalidTopologyError, NotFoundError


class SubBand(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    MACRO_ALL = "MACRO_ALL"
    FEMTO_ALL = "FEMTO_ALL"

    def __str__(self):
        return self.value


REUSE_BANDS = (SubBand.A, SubBand.B, SubBand.C)


class DeploymentType(str, Enum):
    TYPE_A = "TypeA"  # standalone FAP, no macro coverage
    TYPE_B = "TypeB"  # FAP cluster, no macro coverage
    TYPE_C = "TypeC"  # FAPs under macro coverage

    def __str__(self):
        return self.value


SERVICE_CLASSES = ("voice", "video", "data")


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise InvalidParameterError(f"non-finite coordinates ({self.x}, {self.y})")

    def distance_to(self, other: "Point2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


class StationRef(NamedTuple):
    """Identifies a radio station: ``kind`` is ``"macro"`` or ``"femto"``."""

    kind: str
    id: int

    def __str__(self):
        return f"{'M' if self.kind == 'macro' else 'F'}{self.id}"


def macro_ref(cell_id: int) -> StationRef:
    return StationRef("macro", cell_id)


def femto_ref(fap_id: int) -> StationRef:
    return StationRef("femto", fap_id)


@dataclass(frozen=True)
class MacroCell:
    id: int
    center: Point2D
    radius: float
    subband: Optional[SubBand]
    tx_power: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidParameterError(f"macro radius must be positive, got {self.radius}")
        if self.subband is not None and self.subband not in REUSE_BANDS:
            raise InvalidParameterError(f"macro sub-band must be A, B or C, got {self.subband}")

    @property
    def ref(self) -> StationRef:
        return macro_ref(self.id)

    def contains(self, p: Point2D) -> bool:
        return self.center.distance_to(p) <= self.radius * (1 + 1e-12)


@dataclass(frozen=True)
class Fap:
    id: int
    position: Point2D
    overlay_macro: Optional[int]
    subband: Optional[SubBand]
    tx_power: float
    radio_capacity: int = 4
    csg_list: frozenset = frozenset()
    backhaul_link: str = ""

    def __post_init__(self):
        if not 2 <= self.radio_capacity <= 6:
            raise InvalidParameterError(
                f"FAP radio capacity must be in [2, 6], got {self.radio_capacity}")

    @property
    def ref(self) -> StationRef:
        return femto_ref(self.id)

    def admits(self, ue_id: int) -> bool:
        return ue_id in self.csg_list


@dataclass
class Ue:
    id: int
    position: Point2D
    velocity: tuple = (0.0, 0.0)
    attachment: Optional[StationRef] = None
    service_class: str = "voice"

    def __post_init__(self):
        if self.service_class not in SERVICE_CLASSES:
            raise InvalidParameterError(f"unknown service class {self.service_class!r}")

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass
class Topology:
    macros: list
    faps: list
    ues: list = field(default_factory=list)
    deployment_type: DeploymentType = DeploymentType.TYPE_C

    def __post_init__(self):
        self.deployment_type = DeploymentType(self.deployment_type)
        self.validate()

    def validate(self):
        dt, nm, nf = self.deployment_type, len(self.macros), len(self.faps)
        if dt is DeploymentType.TYPE_A and not (nf == 1 and nm == 0):
            raise InvalidTopologyError("TypeA requires exactly one FAP and no macrocells")
        if dt is DeploymentType.TYPE_B and not (nf >= 2 and nm == 0):
            raise InvalidTopologyError("TypeB requires at least two FAPs and no macrocells")
        if dt is DeploymentType.TYPE_C and nm < 1:
            raise InvalidTopologyError("TypeC requires at least one macrocell")
        if len(self.macro_by_id) != nm or len(self.fap_by_id) != nf:
            raise InvalidTopologyError("duplicate station identifiers")
        for ue in self.ues:
            if ue.attachment is not None and not self.has_station(ue.attachment):
                raise InvalidTopologyError(f"UE {ue.id} attached to unknown station {ue.attachment}")

    @cached_property
    def macro_by_id(self) -> Mapping[int, MacroCell]:
        return {m.id: m for m in self.macros}

    @cached_property
    def fap_by_id(self) -> Mapping[int, Fap]:
        return {f.id: f for f in self.faps}

    @cached_property
    def fap_index(self) -> Mapping[int, int]:
        return {f.id: i for i, f in enumerate(self.faps)}

    @cached_property
    def fap_xy(self) -> np.ndarray:
        return np.array([(f.position.x, f.position.y) for f in self.faps], dtype=float).reshape(-1, 2)

    @cached_property
    def fap_ids(self) -> np.ndarray:
        return np.array([f.id for f in self.faps], dtype=np.int64)

    @cached_property
    def macro_xy(self) -> np.ndarray:
        return np.array([(m.center.x, m.center.y) for m in self.macros], dtype=float).reshape(-1, 2)

    def has_station(self, ref: StationRef) -> bool:
        if ref.kind == "macro":
            return ref.id in self.macro_by_id
        if ref.kind == "femto":
            return ref.id in self.fap_by_id
        return False

    def station(self, ref: StationRef):
        try:
            if ref.kind == "macro":
                return self.macro_by_id[ref.id]
            if ref.kind == "femto":
                return self.fap_by_id[ref.id]
        except KeyError:
            pass
        raise NotFoundError(f"unknown station {ref}")

    def station_refs(self) -> list:
        return [m.ref for m in self.macros] + [f.ref for f in self.faps]

    def station_position(self, ref: StationRef) -> Point2D:
        st = self.station(ref)
        return st.center if ref.kind == "macro" else st.position


@dataclass(frozen=True)
class FrequencyPlan:
    strategy: str
    macro_assign: Mapping[int, SubBand]
    fap_assign: Mapping[int, SubBand]

    def subband_of(self, ref: StationRef) -> SubBand:
        table = self.macro_assign if ref.kind == "macro" else self.fap_assign
        try:
            return table[ref.id]
        except KeyError:
            raise NotFoundError(f"station {ref} has no sub-band in the {self.strategy} plan") from None

    def covers(self, topology: Topology) -> bool:
        return (set(self.macro_assign) == set(topology.macro_by_id)
                and set(self.fap_assign) == set(topology.fap_by_id))
