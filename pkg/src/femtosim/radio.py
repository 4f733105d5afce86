"""Path loss, received power, SINR and Monte Carlo outage estimation.

Macro links use the urban macro model ``128.1 + 37.6 log10(d_km)``; FAP links
use ``38.46 + 20 log10(d_m)`` plus a penetration loss per wall, with a single
wall whenever the UE is outside the FAP's coverage disc.  There is no fast
fading; log-normal shadowing is available in the outage Monte Carlo only.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from . import rng as rngmod
from .errors import InvalidParameterError, InvalidPlanError, NotFoundError
from .model import (
    FrequencyPlan, Point2D, StationRef, Topology, Ue, femto_ref, macro_ref,
)

STRATEGIES = ("shared", "dedicated", "proposed")


def db_to_linear(db):
    return np.power(10.0, np.asarray(db, dtype=float) / 10.0)


def linear_to_db(lin):
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(np.asarray(lin, dtype=float))


def path_loss_macro(d):
    """Urban macro path loss in dB; distances below 1 m are clamped."""
    d = np.maximum(np.asarray(d, dtype=float), 1.0)
    out = 128.1 + 37.6 * np.log10(d / 1000.0)
    return float(out) if out.ndim == 0 else out


def path_loss_femto(d, walls, params: "RadioParams"):
    """Indoor path loss in dB; distances below 0.1 m are clamped."""
    d = np.maximum(np.asarray(d, dtype=float), 0.1)
    out = 38.46 + 20.0 * np.log10(d) + np.asarray(walls, dtype=float) * params.wall_loss
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RadioParams:
    macro_tx: float = 46.0
    fap_tx: float = 10.0
    noise_floor: float = -98.0
    wall_loss: float = 10.0
    sinr_outage_threshold: float = 5.0
    processing_gain: float = 21.0
    fap_radius: float = 20.0
    shadowing: bool = False
    shadow_sigma_macro: float = 8.0
    shadow_sigma_femto: float = 4.0

    def __post_init__(self):
        if self.wall_loss < 0:
            raise InvalidParameterError("wall_loss must be >= 0")
        if self.processing_gain < 0:
            raise InvalidParameterError("processing_gain must be >= 0")
        if not self.fap_radius > 0:
            raise InvalidParameterError("fap_radius must be positive")


@dataclass(frozen=True)
class SinrSample:
    ue: int
    station: StationRef
    sinr: float
    ebio: float


def _walls(d, fap_radius):
    return (np.asarray(d) > fap_radius).astype(float)


def _station_powers(point: Point2D, topology: Topology, params: RadioParams,
                    powers: Optional[Mapping[StationRef, float]] = None):
    """Received power (dBm) at ``point`` from every macro and every FAP."""
    if topology.macros:
        mxy = topology.macro_xy
        dm = np.hypot(mxy[:, 0] - point.x, mxy[:, 1] - point.y)
        mtx = np.array([m.tx_power for m in topology.macros], dtype=float)
        pm = mtx - path_loss_macro(dm)
    else:
        pm = np.empty(0)
    if topology.faps:
        fxy = topology.fap_xy
        df = np.hypot(fxy[:, 0] - point.x, fxy[:, 1] - point.y)
        ftx = np.array([f.tx_power for f in topology.faps], dtype=float)
        pf = ftx - path_loss_femto(df, _walls(df, params.fap_radius), params)
    else:
        pf = np.empty(0)
    pm, pf = np.atleast_1d(pm).astype(float), np.atleast_1d(pf).astype(float)
    if powers:
        for ref, tx in powers.items():
            st = topology.station(ref)
            if ref.kind == "macro":
                i = topology.macros.index(st)
                pm[i] += tx - st.tx_power
            else:
                i = topology.fap_index[ref.id]
                pf[i] += tx - st.tx_power
    return pm, pf


def received_power(ref: StationRef, point: Point2D, topology: Topology, params: RadioParams,
                   tx_power: Optional[float] = None) -> float:
    st = topology.station(ref)
    tx = st.tx_power if tx_power is None else tx_power
    if ref.kind == "macro":
        return tx - path_loss_macro(st.center.distance_to(point))
    d = st.position.distance_to(point)
    return tx - path_loss_femto(d, 1 if d > params.fap_radius else 0, params)


def best_server(ue: Ue, topology: Topology, params: RadioParams) -> Optional[StationRef]:
    """Strongest station whose access policy admits the UE (macros admit everyone).

    Ties prefer macrocells, then the smaller id.
    """
    pm, pf = _station_powers(ue.position, topology, params)
    best, best_p = None, -math.inf
    for m, p in zip(topology.macros, pm):
        if p > best_p:
            best, best_p = m.ref, p
    for f, p in zip(topology.faps, pf):
        if f.admits(ue.id) and p > best_p:
            best, best_p = f.ref, p
    return best


def sinr_at(ue: Ue, serving: StationRef, topology: Topology, plan: FrequencyPlan,
            params: RadioParams, powers: Optional[Mapping[StationRef, float]] = None) -> SinrSample:
    """Downlink SINR at ``ue`` from ``serving``; interferers are the co-channel stations."""
    if not topology.has_station(serving):
        raise NotFoundError(f"unknown serving station {serving}")
    if not plan.covers(topology):
        raise InvalidPlanError("frequency plan does not cover every station")
    pm, pf = _station_powers(ue.position, topology, params, powers)
    band = plan.subband_of(serving)
    mband = np.array([plan.macro_assign[m.id] == band for m in topology.macros], dtype=bool)
    fband = np.array([plan.fap_assign[f.id] == band for f in topology.faps], dtype=bool)
    lm, lf = db_to_linear(pm), db_to_linear(pf)
    if serving.kind == "macro":
        i = topology.macros.index(topology.macro_by_id[serving.id])
        signal = lm[i]
        mband[i] = False
    else:
        i = topology.fap_index[serving.id]
        signal = lf[i]
        fband[i] = False
    interference = float(np.sum(lm[mband]) + np.sum(lf[fband]))
    sinr = float(linear_to_db(signal / (interference + db_to_linear(params.noise_floor))))
    return SinrSample(ue=ue.id, station=serving, sinr=sinr, ebio=sinr + params.processing_gain)


# ---------------------------------------------------------------------------
# Monte Carlo outage

@dataclass(frozen=True)
class OutageScenario:
    """One macrocell of a re-use-3 cluster with ``fap_count`` FAPs inside it.

    Each drop places the FAPs afresh, one macro user uniformly over the
    macrocell (member of no CSG) and one femto user uniformly inside the
    coverage disc of a randomly chosen home FAP.
    """

    macro_radius_m: float = 1000.0
    fap_count: int = 1000
    split_mode: str = "balanced"

    def __post_init__(self):
        if not self.macro_radius_m > 0:
            raise InvalidParameterError("macro_radius_m must be positive")
        if self.fap_count < 0:
            raise InvalidParameterError("fap_count must be non-negative")


@dataclass(frozen=True)
class OutageResult:
    strategy: str
    p_out: float
    ci95_halfwidth: float
    n_samples: int
    n_outage: int = 0
    population: str = "aggregate"

    @classmethod
    def from_counts(cls, strategy, n_outage, n_samples, population="aggregate"):
        if n_samples <= 0:
            raise InvalidParameterError("outage estimate needs at least one sample")
        p = n_outage / n_samples
        ci = 1.96 * math.sqrt(p * (1.0 - p) / n_samples)
        return cls(strategy, p, ci, int(n_samples), int(n_outage), population)

    def merge(self, other: "OutageResult") -> "OutageResult":
        if (self.strategy, self.population) != (other.strategy, other.population):
            raise InvalidParameterError("cannot pool outage results of different series")
        return OutageResult.from_counts(self.strategy, self.n_outage + other.n_outage,
                                        self.n_samples + other.n_samples, self.population)


def _draw(seed, index, scenario: OutageScenario, params: RadioParams):
    from .spectrum import split_indices
    from .topology import uniform_disc

    g = rngmod.stream(seed, "outage-drop", index)
    n, R = scenario.fap_count, scenario.macro_radius_m
    fap_xy = uniform_disc(g, n, (0.0, 0.0), R)
    split = split_indices(g, n, scenario.split_mode, fap_xy)
    mue = uniform_disc(g, 1, (0.0, 0.0), R)[0]
    if n:
        home = int(g.integers(n))
        fue = uniform_disc(g, 1, fap_xy[home], params.fap_radius)[0]
    else:
        home, fue = -1, np.zeros(2)
    if params.shadowing:
        sh = (g.normal(0.0, params.shadow_sigma_macro, (2, 3)),
              g.normal(0.0, params.shadow_sigma_femto, (2, n)))
    else:
        sh = (np.zeros((2, 3)), np.zeros((2, n)))
    return fap_xy, split, mue, home, fue, sh


def _band_codes(strategy, n, split):
    if strategy == "shared":
        return np.full(3, 3), np.full(split.shape, 3)
    if strategy == "dedicated":
        return np.full(3, 3), np.full(split.shape, 4)
    if strategy == "proposed":
        # macro 1 holds every FAP and uses A; options are (B, C)
        return np.array([0, 1, 2]), 1 + split
    raise InvalidParameterError(f"unknown strategy {strategy!r}")


def _chunk_sinr(args):
    seed, start, stop, scenario, params, strategies = args
    from .topology import build_macro_cluster

    macros = build_macro_cluster(scenario.macro_radius_m, params.macro_tx)
    mxy = np.array([(m.center.x, m.center.y) for m in macros])
    n = scenario.fap_count
    draws = [_draw(seed, i, scenario, params) for i in range(start, stop)]
    B = len(draws)
    fap_xy = np.stack([d[0] for d in draws]).reshape(B, n, 2)
    split = np.stack([d[1] for d in draws]).reshape(B, n)
    ues = np.stack([np.stack([d[2], d[4]]) for d in draws])  # (B, 2, 2)
    home = np.array([d[3] for d in draws])
    sh_m = np.stack([d[5][0] for d in draws])  # (B, 2, 3)
    sh_f = np.stack([d[5][1] for d in draws]).reshape(B, 2, n)
    noise = db_to_linear(params.noise_floor)

    # received powers, axis 1 indexes (macro user, femto user)
    dm = np.hypot(mxy[None, None, :, 0] - ues[:, :, None, 0], mxy[None, None, :, 1] - ues[:, :, None, 1])
    pm = params.macro_tx - path_loss_macro(dm) + sh_m
    df = np.hypot(fap_xy[:, None, :, 0] - ues[:, :, None, 0], fap_xy[:, None, :, 1] - ues[:, :, None, 1])
    pf = params.fap_tx - path_loss_femto(df, _walls(df, params.fap_radius), params) + sh_f
    lm, lf = db_to_linear(pm), db_to_linear(pf)
    rows = np.arange(B)

    out = {}
    for strategy in strategies:
        mb, fb = _band_codes(strategy, n, split)
        # macro user: best macro
        j = np.argmax(pm[:, 0, :], axis=1)
        s_band = mb[j]
        sig = lm[rows, 0, j]
        mmask = mb[None, :] == s_band[:, None]
        mmask[rows, j] = False
        interf = np.sum(lm[:, 0, :] * mmask, axis=1)
        if n:
            interf = interf + np.sum(lf[:, 0, :] * (fb == s_band[:, None]), axis=1)
        sinr_m = linear_to_db(sig / (interf + noise))
        if n:
            jm = np.argmax(pm[:, 1, :], axis=1)
            p_macro = pm[rows, 1, jm]
            p_home = pf[rows, 1, home]
            on_femto = p_home > p_macro
            s_band = np.where(on_femto, fb[rows, home], mb[jm])
            sig = np.where(on_femto, lf[rows, 1, home], lm[rows, 1, jm])
            mmask = mb[None, :] == s_band[:, None]
            fmask = fb == s_band[:, None]
            mmask[rows, jm] &= on_femto
            fmask[rows, home] &= ~on_femto
            interf = np.sum(lm[:, 1, :] * mmask, axis=1) + np.sum(lf[:, 1, :] * fmask, axis=1)
            sinr_f = linear_to_db(sig / (interf + noise))
        else:
            sinr_f = np.empty(0)
        out[strategy] = (sinr_m, sinr_f)
    return out


def sinr_samples(scenario: OutageScenario, strategies, params: RadioParams, n_drops: int,
                 seed: int, workers: int = 1, chunk: int = 256) -> dict:
    """Per-drop best-server SINR for the macro and femto users of every drop.

    Each drop owns a counter-derived RNG stream, so the result does not
    depend on ``workers`` or ``chunk``.  Returns ``{strategy: (macro, femto)}``.
    """
    if n_drops < 1:
        raise InvalidParameterError("n_drops must be >= 1")
    strategies = tuple(strategies)
    for s in strategies:
        if s not in STRATEGIES:
            raise InvalidParameterError(f"unknown strategy {s!r}")
    jobs = [(seed, a, min(a + chunk, n_drops), scenario, params, strategies)
            for a in range(0, n_drops, chunk)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_sinr, jobs))
    else:
        parts = [_chunk_sinr(j) for j in jobs]
    return {s: (np.concatenate([p[s][0] for p in parts]), np.concatenate([p[s][1] for p in parts]))
            for s in strategies}


def outage_from_samples(strategy, macro_sinr, femto_sinr, threshold_db) -> dict:
    """Outage per population (``macro``, ``femto``, ``aggregate``)."""
    m = int(np.count_nonzero(macro_sinr < threshold_db))
    f = int(np.count_nonzero(femto_sinr < threshold_db))
    res = {"macro": OutageResult.from_counts(strategy, m, len(macro_sinr), "macro")}
    if len(femto_sinr):
        res["femto"] = OutageResult.from_counts(strategy, f, len(femto_sinr), "femto")
    res["aggregate"] = OutageResult.from_counts(strategy, m + f, len(macro_sinr) + len(femto_sinr))
    return res


def outage_breakdown(scenario: OutageScenario, strategy: str, params: RadioParams,
                     n_drops: int, seed: int, workers: int = 1) -> dict:
    sm, sf = sinr_samples(scenario, [strategy], params, n_drops, seed, workers)[strategy]
    return outage_from_samples(strategy, sm, sf, params.sinr_outage_threshold)


def outage_probability(scenario: OutageScenario, strategy: str, params: RadioParams,
                       n_drops: int, seed: int, workers: int = 1) -> OutageResult:
    """Aggregate (macro + femto user) outage probability with a 95% normal CI."""
    return outage_breakdown(scenario, strategy, params, n_drops, seed, workers)["aggregate"]


def with_threshold(params: RadioParams, threshold_db: float) -> RadioParams:
    return replace(params, sinr_outage_threshold=threshold_db)


__all__ = [
    "STRATEGIES", "RadioParams", "SinrSample", "OutageScenario", "OutageResult",
    "db_to_linear", "linear_to_db", "path_loss_macro", "path_loss_femto", "received_power",
    "best_server", "sinr_at", "sinr_samples", "outage_from_samples", "outage_breakdown",
    "outage_probability", "with_threshold", "macro_ref", "femto_ref",
]
