"""Macrocell cluster geometry, FAP/UE placement and spatial queries."""

from __future__ import annotations

import csv
import math

import numpy as np

from .errors import InvalidParameterError, InvalidTopologyError
from .model import (
    REUSE_BANDS, SERVICE_CLASSES, DeploymentType, Fap, MacroCell, Point2D, Topology, Ue,
)

DEFAULT_FAP_RADIUS_M = 20.0
DEFAULT_SERVICE_MIX = {"voice": 0.5, "video": 0.25, "data": 0.25}


def uniform_disc(rng: np.random.Generator, n: int, center, radius: float) -> np.ndarray:
    """Draw ``n`` points uniformly over a disc; returns an ``(n, 2)`` array."""
    u = rng.random(n)
    v = rng.random(n)
    r = radius * np.sqrt(u)
    theta = 2.0 * np.pi * v
    cx, cy = center
    return np.column_stack((cx + r * np.cos(theta), cy + r * np.sin(theta)))


def build_macro_cluster(cluster_radius: float, tx_power: float = 46.0) -> list[MacroCell]:
    """Three macrocells on an equilateral triangle, re-use factor 3.

    Cell 1 sits at the origin; inter-site distance is sqrt(3) * radius and
    sub-bands A, B, C follow the cell ids.
    """
    if not (cluster_radius > 0 and math.isfinite(cluster_radius)):
        raise InvalidParameterError(f"cluster radius must be positive, got {cluster_radius}")
    isd = math.sqrt(3.0) * cluster_radius
    centers = [(0.0, 0.0), (isd, 0.0), (isd / 2.0, isd * math.sqrt(3.0) / 2.0)]
    return [
        MacroCell(id=i + 1, center=Point2D(x, y), radius=cluster_radius,
                  subband=band, tx_power=tx_power)
        for i, ((x, y), band) in enumerate(zip(centers, REUSE_BANDS))
    ]


def place_faps(macro: MacroCell, count: int, seed: int, *, tx_power: float = 10.0,
               radio_capacity: int = 4, first_id: int = 0, overlay: bool = True) -> list[Fap]:
    """Scatter ``count`` FAPs uniformly over ``macro``'s disc.

    Sub-bands are left unassigned. With ``overlay=False`` the disc is only a
    placement area (Type A/B deployments) and no overlay macro is recorded.
    """
    if count < 0:
        raise InvalidParameterError(f"count must be non-negative, got {count}")
    rng = np.random.default_rng(seed)
    xy = uniform_disc(rng, count, (macro.center.x, macro.center.y), macro.radius)
    faps = []
    for k, (x, y) in enumerate(xy):
        fid = first_id + k
        faps.append(Fap(id=fid, position=Point2D(float(x), float(y)),
                        overlay_macro=macro.id if overlay else None, subband=None,
                        tx_power=tx_power, radio_capacity=radio_capacity,
                        backhaul_link=f"L{fid}"))
    return faps


def _covering_count(xy, centers, radii):
    d = np.hypot(centers[:, 0] - xy[0], centers[:, 1] - xy[1])
    return int(np.count_nonzero(d <= radii))


def sample_union_of_discs(rng, n, centers, radii) -> np.ndarray:
    """Uniform samples over the union of discs (pick-a-disc plus 1/k thinning)."""
    centers = np.asarray(centers, dtype=float).reshape(-1, 2)
    radii = np.asarray(radii, dtype=float)
    weights = radii ** 2 / np.sum(radii ** 2)
    out = np.empty((n, 2))
    k = 0
    while k < n:
        i = rng.choice(len(radii), p=weights)
        p = uniform_disc(rng, 1, centers[i], radii[i])[0]
        if rng.random() * _covering_count(p, centers, radii) <= 1.0:
            out[k] = p
            k += 1
    return out


def place_ues(topology: Topology, count: int, seed: int, params=None,
              service_mix=None) -> list[Ue]:
    """Place UEs over the macro discs (TypeC) or FAP coverage discs (TypeA/B).

    Each UE starts attached to its strongest admissible station.
    """
    from .radio import RadioParams, best_server

    if count < 0:
        raise InvalidParameterError(f"count must be non-negative, got {count}")
    if not topology.macros and not topology.faps:
        raise InvalidTopologyError("cannot place UEs in an empty topology")
    params = params or RadioParams()
    mix = service_mix or DEFAULT_SERVICE_MIX
    rng = np.random.default_rng(seed)
    if topology.deployment_type is DeploymentType.TYPE_C:
        centers = topology.macro_xy
        radii = np.array([m.radius for m in topology.macros])
    else:
        centers = topology.fap_xy
        radii = np.full(len(topology.faps), params.fap_radius)
    xy = sample_union_of_discs(rng, count, centers, radii)
    classes = list(mix)
    probs = np.array([mix[c] for c in classes], dtype=float)
    picks = rng.choice(len(classes), size=count, p=probs / probs.sum())
    ues = []
    for i, ((x, y), c) in enumerate(zip(xy, picks)):
        ue = Ue(id=i, position=Point2D(float(x), float(y)), service_class=classes[c])
        ue.attachment = best_server(ue, topology, params)
        ues.append(ue)
    return ues


def neighbors_within(topology: Topology, p: Point2D, range_m: float) -> list[int]:
    """FAP ids within ``range_m`` of ``p``, nearest first, ties by id."""
    if range_m < 0:
        raise InvalidParameterError(f"range must be non-negative, got {range_m}")
    if not topology.faps:
        return []
    xy = topology.fap_xy
    d = np.hypot(xy[:, 0] - p.x, xy[:, 1] - p.y)
    ids = topology.fap_ids
    hit = np.nonzero(d <= range_m)[0]
    order = np.lexsort((ids[hit], d[hit]))
    return [int(i) for i in ids[hit][order]]


def bounding_box(topology: Topology, fap_radius: float = DEFAULT_FAP_RADIUS_M):
    """Axis-aligned ``(xmin, ymin, xmax, ymax)`` enclosing every coverage disc."""
    if topology.macros:
        xy, r = topology.macro_xy, np.array([m.radius for m in topology.macros])
    else:
        xy, r = topology.fap_xy, np.full(len(topology.faps), fap_radius)
    return (float(np.min(xy[:, 0] - r)), float(np.min(xy[:, 1] - r)),
            float(np.max(xy[:, 0] + r)), float(np.max(xy[:, 1] + r)))


TOPOLOGY_COLUMNS = ("kind", "id", "x", "y", "subband", "tx_dbm")


def write_topology_csv(topology: Topology, path, plan=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TOPOLOGY_COLUMNS)
        for m in topology.macros:
            band = plan.macro_assign.get(m.id) if plan else m.subband
            w.writerow(["macro", m.id, f"{m.center.x:.3f}", f"{m.center.y:.3f}",
                        band or "", f"{m.tx_power:.2f}"])
        for f in topology.faps:
            band = plan.fap_assign.get(f.id) if plan else f.subband
            w.writerow(["femto", f.id, f"{f.position.x:.3f}", f"{f.position.y:.3f}",
                        band or "", f"{f.tx_power:.2f}"])
        for u in topology.ues:
            w.writerow(["ue", u.id, f"{u.position.x:.3f}", f"{u.position.y:.3f}", "", ""])


__all__ = [
    "SERVICE_CLASSES", "build_macro_cluster", "place_faps", "place_ues", "neighbors_within",
    "uniform_disc", "sample_union_of_discs", "bounding_box", "write_topology_csv",
]
