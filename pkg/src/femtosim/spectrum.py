"""Frequency plans for the three allocation strategies and SON reconfiguration."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .errors import InvalidDeploymentError, InvalidParameterError, InvalidPlanError
from .model import (
    REUSE_BANDS, DeploymentType, Fap, FrequencyPlan, StationRef, SubBand, Topology,
)
from .radio import RadioParams, received_power, sinr_at

SPLIT_MODES = ("balanced", "random", "son")
SON_NEIGHBOR_RANGE_M = 60.0

# sinr comparisons tolerate float noise from repeated dB<->linear conversion
_SINR_EPS_DB = 1e-9


def _require_type_c(topology: Topology):
    if topology.deployment_type is not DeploymentType.TYPE_C:
        raise InvalidDeploymentError(
            f"frequency strategies need a TypeC deployment, got {topology.deployment_type}")


def allocate_shared(topology: Topology) -> FrequencyPlan:
    _require_type_c(topology)
    return FrequencyPlan(
        "shared",
        {m.id: SubBand.MACRO_ALL for m in topology.macros},
        {f.id: SubBand.MACRO_ALL for f in topology.faps},
    )


def allocate_dedicated(topology: Topology) -> FrequencyPlan:
    _require_type_c(topology)
    return FrequencyPlan(
        "dedicated",
        {m.id: SubBand.MACRO_ALL for m in topology.macros},
        {f.id: SubBand.FEMTO_ALL for f in topology.faps},
    )


def femto_options(macro_band: SubBand) -> tuple:
    """The two re-use sub-bands a FAP may take under a macro using ``macro_band``."""
    return tuple(b for b in REUSE_BANDS if b != macro_band)


def split_indices(rng: np.random.Generator, n: int, mode: str = "balanced", xy=None,
                  neighbor_range: float = SON_NEIGHBOR_RANGE_M) -> np.ndarray:
    """Choose option 0 or 1 for each of ``n`` FAPs.

    ``balanced`` alternates the options along a seeded shuffle (counts differ
    by at most one), ``random`` flips a fair coin per FAP and ``son`` installs
    the FAPs one by one in index order using the neighbour-count rule.
    """
    if mode == "balanced":
        perm = rng.permutation(n)
        start = int(rng.integers(2))
        out = np.empty(n, dtype=np.int64)
        out[perm] = (np.arange(n) + start) % 2
        return out
    if mode == "random":
        return rng.integers(2, size=n).astype(np.int64)
    if mode == "son":
        xy = np.asarray(xy, dtype=float).reshape(n, 2)
        out = np.empty(n, dtype=np.int64)
        totals = [0, 0]
        for i in range(n):
            d = np.hypot(xy[:i, 0] - xy[i, 0], xy[:i, 1] - xy[i, 1])
            near = out[:i][d <= neighbor_range]
            counts = (int(np.count_nonzero(near == 0)), int(np.count_nonzero(near == 1)))
            out[i] = min((0, 1), key=lambda k: (counts[k], totals[k], k))
            totals[out[i]] += 1
        return out
    raise InvalidParameterError(f"unknown split mode {mode!r}; expected one of {SPLIT_MODES}")


def _overlay(fap: Fap, topology: Topology) -> int:
    if fap.overlay_macro is not None:
        return fap.overlay_macro
    d = [m.center.distance_to(fap.position) for m in topology.macros]
    return topology.macros[int(np.argmin(d))].id


def _macro_bands(topology: Topology) -> dict:
    bands = {m.id: m.subband for m in topology.macros}
    vals = list(bands.values())
    if any(b not in REUSE_BANDS for b in vals) or len(set(vals)) != len(vals):
        raise InvalidPlanError("macro assignment is not a re-use-3 pattern")
    return bands


def allocate_proposed(topology: Topology, seed: int, mode: str = "balanced") -> FrequencyPlan:
    """Re-use-3 macros; each FAP takes one of the two sub-bands its overlay macro does not use."""
    _require_type_c(topology)
    macro_assign = _macro_bands(topology)
    by_macro: dict[int, list[Fap]] = {mid: [] for mid in macro_assign}
    for f in topology.faps:
        by_macro[_overlay(f, topology)].append(f)
    fap_assign = {}
    for mid, faps in by_macro.items():
        faps = sorted(faps, key=lambda f: f.id)
        options = femto_options(macro_assign[mid])
        xy = [(f.position.x, f.position.y) for f in faps]
        idx = split_indices(rngmod.stream(seed, "proposed-split", mid), len(faps), mode, xy)
        for f, k in zip(faps, idx):
            fap_assign[f.id] = options[int(k)]
    return FrequencyPlan("proposed", macro_assign, fap_assign)


def son_reassign_on_install(plan: FrequencyPlan, new_fap, topology: Topology,
                            neighbor_range: float = SON_NEIGHBOR_RANGE_M) -> FrequencyPlan:
    """Give a newly installed FAP the permitted sub-band its neighbours use least.

    Ties go to the sub-band used less across the whole plan, then to label
    order. Existing assignments are left alone.
    """
    if plan.strategy != "proposed":
        raise InvalidPlanError("SON install reassignment applies to the proposed plan only")
    fap = topology.fap_by_id[new_fap] if isinstance(new_fap, int) else new_fap
    options = femto_options(plan.macro_assign[_overlay(fap, topology)])
    others = {fid: b for fid, b in plan.fap_assign.items() if fid != fap.id}
    near = [topology.fap_by_id[fid] for fid in others if fid in topology.fap_by_id]
    local = {b: 0 for b in options}
    for f in near:
        if f.position.distance_to(fap.position) <= neighbor_range and others[f.id] in local:
            local[others[f.id]] += 1
    usage = {b: sum(1 for v in others.values() if v == b) for b in options}
    choice = min(options, key=lambda b: (local[b], usage[b], b.value))
    fap_assign = dict(plan.fap_assign)
    fap_assign[fap.id] = choice
    return FrequencyPlan(plan.strategy, dict(plan.macro_assign), fap_assign)


@dataclass(frozen=True)
class PowerAdjustment:
    changes: dict  # FAP id -> new tx power (dBm), only FAPs that changed
    final_sinr: float
    reached: bool
    steps: int


def son_power_reconfigure(master_fap, victim_ue, topology: Topology, plan: FrequencyPlan,
                          params: RadioParams, target_sinr: float, floor: float) -> PowerAdjustment:
    """Lower co-channel neighbour FAP powers in 1 dB steps until the victim's SINR meets target.

    The strongest interferer at the victim is stepped down first; no power is
    ever raised and the master FAP is never touched.
    """
    if not np.isfinite(target_sinr):
        raise InvalidParameterError("target_sinr must be finite")
    master = topology.fap_by_id[master_fap] if isinstance(master_fap, int) else master_fap
    band = plan.fap_assign[master.id]
    neighbours = [f for f in topology.faps if f.id != master.id and plan.fap_assign[f.id] == band]
    power = {f.id: f.tx_power for f in neighbours}
    steps = 0

    def current():
        override = {StationRef("femto", fid): p for fid, p in power.items()}
        return sinr_at(victim_ue, master.ref, topology, plan, params, powers=override).sinr

    sinr = current()
    while sinr < target_sinr - _SINR_EPS_DB:
        live = [f for f in neighbours if power[f.id] > floor]
        if not live:
            break
        worst = max(live, key=lambda f: (
            received_power(f.ref, victim_ue.position, topology, params, power[f.id]), -f.id))
        power[worst.id] = max(floor, power[worst.id] - 1.0)
        steps += 1
        sinr = current()
    changes = {f.id: power[f.id] for f in neighbours if power[f.id] != f.tx_power}
    return PowerAdjustment(changes, sinr, sinr >= target_sinr - _SINR_EPS_DB, steps)


def allocate(strategy: str, topology: Topology, seed: int, mode: str = "balanced") -> FrequencyPlan:
    if strategy == "shared":
        return allocate_shared(topology)
    if strategy == "dedicated":
        return allocate_dedicated(topology)
    if strategy == "proposed":
        return allocate_proposed(topology, seed, mode)
    raise InvalidParameterError(f"unknown strategy {strategy!r}")


def femto_only_plan(topology: Topology) -> FrequencyPlan:
    """Plan for deployments without macro coverage: every FAP on the femto band."""
    return FrequencyPlan("dedicated", {}, {f.id: SubBand.FEMTO_ALL for f in topology.faps})


def co_channel_interferers(plan: FrequencyPlan, topology: Topology, serving: StationRef) -> list:
    band = plan.subband_of(serving)
    return [ref for ref in topology.station_refs() if ref != serving and plan.subband_of(ref) == band]


PLAN_COLUMNS = ("station_kind", "id", "subband", "tx_dbm")


def write_plan_csv(plan: FrequencyPlan, topology: Topology, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLAN_COLUMNS)
        for m in topology.macros:
            w.writerow(["macro", m.id, plan.macro_assign[m.id], f"{m.tx_power:.2f}"])
        for f in topology.faps:
            w.writerow(["femto", f.id, plan.fap_assign[f.id], f"{f.tx_power:.2f}"])
