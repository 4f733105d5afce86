"""Aggregated run metrics and the CSV files written for each run."""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .handover import HANDOVER_KINDS, REJECT_REASONS
from .radio import OutageResult

HANDOVER_COLUMNS = ("time", "ue", "from", "to", "outcome", "reason", "steps", "latency_ms")
BACKHAUL_COLUMNS = ("time", "link", "class", "throughput_mbps", "mean_delay_ms", "p99_delay_ms",
                    "drops")
OUTAGE_COLUMNS = ("strategy", "fap_count", "threshold_db", "p_out", "ci95", "n_drops", "seed")
REPORT_COLUMNS = ("metric", "value")

OUTPUT_FILES = ("report.csv", "handovers.csv", "outage.csv", "backhaul.csv")


def percentile(values, q):
    if not len(values):
        return 0.0
    return float(np.percentile(np.asarray(values, dtype=float), q))


@dataclass
class MetricsReport:
    handovers: Counter = field(default_factory=Counter)  # completed, by kind
    rejected: Counter = field(default_factory=Counter)  # by reason
    aborted: Counter = field(default_factory=Counter)
    dropped_calls: int = 0
    initiated: int = 0
    in_flight: int = 0
    scan_attempts: int = 0
    scans_with_list: int = 0
    scans_without_list: int = 0
    scan_violations: int = 0
    femto_admissions: int = 0
    admissions_over_velocity: int = 0
    packets_served: int = 0
    packets_dropped: int = 0
    voice_delays: list = field(default_factory=list)  # seconds
    broker_requests: int = 0
    broker_granted_mbps: float = 0.0
    broker_zero_grants: int = 0
    broker_peak_utilisation: float = 0.0
    outage: dict = field(default_factory=dict)  # (strategy, fap_count, threshold) -> {pop: result}
    outage_seed: int = 0
    handover_log: list = field(default_factory=list)
    backhaul_log: list = field(default_factory=list)

    @property
    def femto_handovers(self) -> int:
        return self.handovers["macro_to_femto"] + self.handovers["femto_to_femto"]

    @property
    def mean_scans_with_list(self) -> float:
        return self.scans_with_list / self.scan_attempts if self.scan_attempts else 0.0

    @property
    def mean_scans_without_list(self) -> float:
        return self.scans_without_list / self.scan_attempts if self.scan_attempts else 0.0

    def merge(self, other: "MetricsReport") -> "MetricsReport":
        """Combine two replicate reports; count-like fields add, logs concatenate."""
        out = MetricsReport()
        for name in ("handovers", "rejected", "aborted"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        for name in ("dropped_calls", "initiated", "in_flight", "scan_attempts", "scans_with_list",
                     "scans_without_list", "scan_violations", "femto_admissions",
                     "admissions_over_velocity", "packets_served", "packets_dropped",
                     "broker_requests", "broker_zero_grants"):
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.broker_granted_mbps = self.broker_granted_mbps + other.broker_granted_mbps
        out.broker_peak_utilisation = max(self.broker_peak_utilisation, other.broker_peak_utilisation)
        out.voice_delays = sorted(self.voice_delays + other.voice_delays)
        keys = sorted(set(self.outage) | set(other.outage), key=str)
        for k in keys:
            a, b = self.outage.get(k), other.outage.get(k)
            if a is None or b is None:
                out.outage[k] = dict(a or b)
            else:
                out.outage[k] = {p: a[p].merge(b[p]) for p in a}
        out.outage_seed = self.outage_seed
        out.handover_log = self.handover_log + other.handover_log
        out.backhaul_log = self.backhaul_log + other.backhaul_log
        return out

    def metrics(self) -> list:
        rows = []
        for kind in HANDOVER_KINDS:
            rows.append((f"handovers.{kind}", self.handovers[kind]))
        for reason in REJECT_REASONS:
            rows.append((f"rejected.{reason}", self.rejected[reason]))
        for reason in sorted(self.aborted):
            rows.append((f"aborted.{reason}", self.aborted[reason]))
        vd = np.asarray(self.voice_delays, dtype=float) * 1000.0
        rows += [
            ("handovers.initiated", self.initiated),
            ("handovers.in_flight", self.in_flight),
            ("calls.dropped", self.dropped_calls),
            ("scans.attempts", self.scan_attempts),
            ("scans.mean_with_list", _fmt(self.mean_scans_with_list)),
            ("scans.mean_without_list", _fmt(self.mean_scans_without_list)),
            ("scans.violations", self.scan_violations),
            ("cac.femto_admissions", self.femto_admissions),
            ("cac.admissions_over_velocity", self.admissions_over_velocity),
            ("backhaul.packets_served", self.packets_served),
            ("backhaul.packets_dropped", self.packets_dropped),
            ("voice.samples", len(vd)),
            ("voice.mean_delay_ms", _fmt(float(vd.mean()) if len(vd) else 0.0)),
            ("voice.p50_delay_ms", _fmt(percentile(vd, 50))),
            ("voice.p95_delay_ms", _fmt(percentile(vd, 95))),
            ("voice.p99_delay_ms", _fmt(percentile(vd, 99))),
            ("broker.requests", self.broker_requests),
            ("broker.granted_mbps", _fmt(self.broker_granted_mbps)),
            ("broker.zero_grants", self.broker_zero_grants),
            ("broker.peak_utilisation", _fmt(self.broker_peak_utilisation)),
        ]
        for (strategy, n, thr), pops in sorted(self.outage.items(), key=str):
            for pop, res in pops.items():
                base = f"outage.{strategy}.{n}.{_fmt(thr)}.{pop}"
                rows.append((f"{base}.p_out", _fmt(res.p_out)))
                rows.append((f"{base}.ci95", _fmt(res.ci95_halfwidth)))
                rows.append((f"{base}.n_samples", res.n_samples))
        return rows

    def outage_rows(self) -> list:
        rows = []
        for (strategy, n, thr), pops in self.outage.items():
            res: OutageResult = pops["aggregate"]
            rows.append((strategy, n, _fmt(thr), _fmt(res.p_out), _fmt(res.ci95_halfwidth),
                         pops["macro"].n_samples, self.outage_seed))
        return rows


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, float) and math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return f"{x:.6f}"


def _write(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(report: MetricsReport, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.csv", REPORT_COLUMNS, report.metrics())
    _write(out / "handovers.csv", HANDOVER_COLUMNS, report.handover_log)
    _write(out / "outage.csv", OUTAGE_COLUMNS, report.outage_rows())
    _write(out / "backhaul.csv", BACKHAUL_COLUMNS, report.backhaul_log)
    return [out / f for f in OUTPUT_FILES]


def write_outage_csv(rows, path):
    _write(Path(path), OUTAGE_COLUMNS, rows)
