"""Route metrics (RC, IS, DS), report rows and CSV output."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, is_dataclass
from pathlib import Path

import numpy as np

from dualdrive.sim.world import INFRACTION_KINDS, InfractionEvent

DEFAULT_PENALTIES = {
    "collision_pedestrian": 0.50,
    "collision_vehicle": 0.60,
    "collision_static": 0.65,
    "red_light": 0.70,
    "stop_sign": 0.80,
    # deviation ends the route; its cost shows up in RC instead
    "route_deviation": 1.0,
}


def compute_is(events, penalties: dict | None = None) -> float:
    """Product of the penalty factors of all events; 1.0 for none."""
    table = DEFAULT_PENALTIES if penalties is None else penalties
    score = 1.0
    for ev in events:
        kind = ev.kind if isinstance(ev, InfractionEvent) else str(ev)
        if kind not in table:
            raise KeyError(f"no penalty configured for infraction kind {kind!r}")
        score *= table[kind]
    return score


@dataclass(frozen=True)
class RouteResult:
    route_id: str
    seed: int
    rc: float
    is_: float
    events: tuple[InfractionEvent, ...] = ()
    decisions: int = 0
    sim_time: float = 0.0
    status: str = "completed"      # completed | terminated | timeout | failed
    wall_time: float = field(default=0.0, compare=False)
    town: str = ""

    def __post_init__(self):
        if not 0.0 <= self.rc <= 1.0:
            raise ValueError(f"RC must lie in [0, 1], got {self.rc}")
        if not 0.0 < self.is_ <= 1.0:
            raise ValueError(f"IS must lie in (0, 1], got {self.is_}")

    @property
    def ds(self) -> float:
        return self.rc * self.is_

    def counts(self) -> dict[str, int]:
        c = {k: 0 for k in INFRACTION_KINDS}
        for ev in self.events:
            c[ev.kind] = c.get(ev.kind, 0) + 1
        return c


def failed_result(route_id: str, seed: int, town: str = "") -> RouteResult:
    return RouteResult(route_id, seed, 0.0, 1.0, status="failed", town=town)


def mean_std(xs) -> tuple[float, float]:
    if len(xs) == 0:
        return math.nan, math.nan
    a = np.asarray(xs, dtype=float)
    return float(a.mean()), float(a.std())


@dataclass
class ReportRow:
    experiment: str
    cell: str
    result: RouteResult


@dataclass
class BenchmarkReport:
    rows: list[ReportRow]
    fingerprint: str = ""

    def cells(self) -> list[tuple[str, str]]:
        seen = []
        for r in self.rows:
            if (r.experiment, r.cell) not in seen:
                seen.append((r.experiment, r.cell))
        return seen

    def results(self, cell: str | None = None) -> list[RouteResult]:
        return [r.result for r in self.rows if cell is None or r.cell == cell]

    def aggregate(self, cell: str | None = None) -> dict:
        """Mean and population std of per-route DS, RC and IS."""
        res = self.results(cell)
        out = {"n": len(res)}
        for name, xs in (("ds", [r.ds for r in res]), ("rc", [r.rc for r in res]),
                         ("is", [r.is_ for r in res])):
            out[f"{name}_mean"], out[f"{name}_std"] = mean_std(xs)
        return out

    def write_csv(self, path) -> None:
        Path(path).write_text(report_csv(self))

    def write_summary_csv(self, path) -> None:
        Path(path).write_text(summary_csv(self))


CSV_FIELDS = ("experiment", "cell", "route_id", "town", "seed", "status", "rc", "is", "ds",
              "decisions", "sim_time") + tuple(f"n_{k}" for k in INFRACTION_KINDS)
SUMMARY_FIELDS = ("experiment", "cell", "n", "ds_mean", "ds_std", "rc_mean", "rc_std",
                  "is_mean", "is_std")


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def report_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    for row in report.rows:
        r = row.result
        counts = r.counts()
        w.writerow([_fmt(x) for x in (
            row.experiment, row.cell, r.route_id, r.town, r.seed, r.status, r.rc, r.is_, r.ds,
            r.decisions, r.sim_time, *(counts[k] for k in INFRACTION_KINDS))])
    return buf.getvalue()


def summary_csv(report: BenchmarkReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_FIELDS)
    for experiment, cell in report.cells():
        agg = report.aggregate(cell)
        w.writerow([experiment, cell] + [_fmt(agg[k]) for k in SUMMARY_FIELDS[2:]])
    return buf.getvalue()


def _plain(obj):
    if is_dataclass(obj) and not isinstance(obj, type):
        return _plain(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, (str, int, float, bool)) or obj is None:
        return obj
    return str(obj)


def canonical_json(obj) -> str:
    return json.dumps(_plain(obj), sort_keys=True, separators=(",", ":"))


def config_fingerprint(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()[:16]
