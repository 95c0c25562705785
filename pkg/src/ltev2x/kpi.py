"""Delivery KPIs: success rate, mean latency over successes, latency CDF."""

from __future__ import annotations

import csv
import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

RECORD_COLUMNS = ("packet_id", "tx_id", "rx_id", "gen_ms", "e2e_ms", "ul_ms", "dl_ms",
                  "ul_attempts", "dl_attempts", "mode")
INF_TOKEN = "INF"


@dataclass(frozen=True)
class KpiSummary:
    """Aggregate over (packet, receiver) deliveries.

    Failures carry no latency; they only count towards ``n_expected``.  The
    sorted success latencies are kept so summaries merge exactly.
    """

    n_expected: int
    n_success: int
    latencies: tuple[float, ...]

    @property
    def defined(self) -> bool:
        return self.n_expected > 0

    @property
    def success_rate(self) -> float | None:
        return self.n_success / self.n_expected if self.n_expected else None

    @property
    def mean_latency_ms(self) -> float | None:
        return math.fsum(self.latencies) / self.n_success if self.n_success else None

    @property
    def cdf(self) -> list[tuple[float, float]]:
        """Distinct latencies with cumulative fraction of all expected deliveries."""
        out = []
        n = self.n_expected
        for i, x in enumerate(self.latencies):
            if i + 1 < len(self.latencies) and self.latencies[i + 1] == x:
                continue
            out.append((x, (i + 1) / n))
        return out

    def percentile(self, q: float) -> float:
        """Latency below which a fraction ``q`` of expected deliveries arrive (inf if never)."""
        k = math.ceil(q * self.n_expected)
        if k <= 0:
            return 0.0
        return self.latencies[k - 1] if k <= self.n_success else math.inf

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_expected": self.n_expected,
            "n_success": self.n_success,
            "success_rate": self.success_rate,
            "success_rate_defined": self.defined,
            "mean_latency_ms": self.mean_latency_ms,
            "mean_latency_defined": self.n_success > 0,
            "cdf": [[x, f] for x, f in self.cdf],
        }


def summarize(records: Iterable) -> KpiSummary:
    n = 0
    lat = []
    for r in records:
        n += 1
        if math.isfinite(r.e2e_ms):
            lat.append(float(r.e2e_ms))
    lat.sort()
    return KpiSummary(n, len(lat), tuple(lat))


def merge(*summaries: KpiSummary) -> KpiSummary:
    lat = tuple(heapq.merge(*(s.latencies for s in summaries)))
    return KpiSummary(sum(s.n_expected for s in summaries), sum(s.n_success for s in summaries), lat)


def cdf_points(records: Iterable, resolution_ms: float = 0.1) -> list[tuple[float, float]]:
    """Empirical latency CDF sampled every ``resolution_ms``.

    Failures stay in the denominator, so the curve tops out at the success
    rate.  Sampling spans the finite latencies only.
    """
    if resolution_ms <= 0:
        raise ValueError("resolution must be positive")
    s = summarize(records)
    if not s.n_success:
        return []
    lat = s.latencies
    lo = math.floor(lat[0] / resolution_ms + 1e-9)
    hi = math.ceil(lat[-1] / resolution_ms - 1e-9)
    out = []
    j = 0
    for k in range(lo, hi + 1):
        x = round(k * resolution_ms, 10)
        while j < len(lat) and lat[j] <= x + 1e-9:
            j += 1
        out.append((x, j / s.n_expected))
    return out


def _fmt(x: float) -> str:
    return f"{x:.3f}" if math.isfinite(x) else INF_TOKEN


def write_records_csv(records: Sequence, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.packet_id, r.tx_id, r.rx_id, _fmt(r.gen_ms), _fmt(r.e2e_ms), _fmt(r.ul_ms),
                        _fmt(r.dl_ms), r.ul_attempts, r.dl_attempts, r.mode])


def read_records_csv(path: str | Path) -> list[dict[str, Any]]:
    """Rows as dicts with latencies parsed to float (``INF`` -> inf)."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            for k in ("gen_ms", "e2e_ms", "ul_ms", "dl_ms"):
                row[k] = math.inf if row[k] == INF_TOKEN else float(row[k])
            for k in ("packet_id", "tx_id", "rx_id", "ul_attempts", "dl_attempts"):
                row[k] = int(row[k])
            rows.append(row)
    return rows


def write_summary_json(summary: KpiSummary, path: str | Path, config: dict[str, Any] | None = None,
                       seed: int | None = None) -> None:
    data = summary.to_dict()
    data["config"] = config
    data["seed"] = seed
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def write_cdf_csv(points: Sequence[tuple[float, float]], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["latency_ms", "fraction"])
        for x, f in points:
            w.writerow([f"{x:.3f}", repr(f)])
