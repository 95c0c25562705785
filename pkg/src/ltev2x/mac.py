"""TTI-level MAC: resource grids, schedulers, HARQ timing, latency accounting.

Schedulers work on any objects exposing ``id``, ``arrival_tti`` and
``demand`` (PRBs wanted in the current TTI).  An optional truthy ``urgent``
attribute marks HARQ retransmissions, which are served before anything else
so that they start exactly one HARQ gap after the failed attempt.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence


@dataclass(frozen=True)
class LatencyBudget:
    ue_processing_ms: float = 1.0
    frame_alignment_ms: float = 0.5
    harq_retx_gap_ms: float = 7.0
    enb_processing_ms: float = 1.0
    inter_enb_ms: float = 1.0
    packet_lifetime_ms: float = 100.0
    tti_ms: float = 1.0

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if value < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_config(cls, mac_cfg) -> LatencyBudget:
        return cls(mac_cfg.ue_processing_ms, mac_cfg.frame_alignment_ms, mac_cfg.harq_retx_gap_ms,
                   mac_cfg.enb_processing_ms, mac_cfg.inter_enb_ms, mac_cfg.packet_lifetime_ms, mac_cfg.tti_ms)

    # The event clock runs in whole TTIs; fixed delays round up to the next boundary.
    @property
    def ul_setup_ttis(self) -> int:
        return math.ceil((self.ue_processing_ms + self.frame_alignment_ms) / self.tti_ms - 1e-9)

    def dl_setup_ttis(self, crosses_enb: bool = False) -> int:
        ms = self.enb_processing_ms + self.frame_alignment_ms + (self.inter_enb_ms if crosses_enb else 0.0)
        return math.ceil(ms / self.tti_ms - 1e-9)

    @property
    def gap_ttis(self) -> int:
        return int(round(self.harq_retx_gap_ms / self.tti_ms))

    @property
    def lifetime_ttis(self) -> int:
        return int(math.floor(self.packet_lifetime_ms / self.tti_ms + 1e-9))


class Allocation(NamedTuple):
    start: int  # first PRB index (cyclic)
    count: int


class ResourceGrid:
    """PRB pool of one sector in one direction.

    PRBs are handed out contiguously (cyclically) from ``offset`` in service
    order.  ``history`` keeps every TTI's allocations when requested.
    """

    def __init__(self, prbs_total: int, offset: int = 0, keep_history: bool = False, tti_ms: float = 1.0):
        if prbs_total < 1:
            raise ValueError("prbs_total must be >= 1")
        self.prbs_total = prbs_total
        self.offset = offset % prbs_total
        self.tti_ms = tti_ms
        self.last_served: int | None = None
        self.keep_history = keep_history
        self.history: dict[int, dict[int, Allocation]] = {}
        self.used: dict[int, int] = defaultdict(int)

    def commit(self, tti: int, grants: Iterable[tuple[int, int]]) -> dict[int, Allocation]:
        out = {}
        cursor = self.used[tti]
        for job_id, count in grants:
            if count <= 0:
                continue
            if cursor + count > self.prbs_total:
                raise RuntimeError(f"TTI {tti}: PRB pool exhausted")
            out[job_id] = Allocation((self.offset + cursor) % self.prbs_total, count)
            cursor += count
        self.used[tti] = cursor
        if self.keep_history:
            self.history.setdefault(tti, {}).update(out)
        return out

    def free(self, tti: int) -> int:
        return self.prbs_total - self.used[tti]

    def forget_before(self, tti: int) -> None:
        for t in [t for t in self.used if t < tti]:
            del self.used[t]


def round_robin(demands: Sequence[int], prbs: int, quantum: int | None = 1) -> tuple[list[int], int | None]:
    """Hand out ``prbs`` cycling over jobs with unmet demand.

    Each visit grants up to ``quantum`` PRBs; ``None`` grants the job's whole
    remaining demand.  Returns the grants and the position of the job that
    received the last PRB (``None`` if nothing was granted).
    """
    alloc = [0] * len(demands)
    active = [i for i, d in enumerate(demands) if d > 0]
    last = None
    if quantum is None:
        for i in active:
            if prbs <= 0:
                break
            g = min(demands[i], prbs)
            alloc[i] = g
            prbs -= g
            last = i
        return alloc, last
    if quantum < 1:
        raise ValueError("quantum must be >= 1")
    while prbs > 0 and active:
        k = len(active)
        if quantum == 1:
            # whole rounds at once
            rounds = min(min(demands[i] - alloc[i] for i in active), prbs // k)
            if rounds == 0:
                for i in active[:prbs]:
                    alloc[i] += 1
                last = active[prbs - 1]
                break
            for i in active:
                alloc[i] += rounds
            prbs -= rounds * k
            last = active[-1]
        else:
            for i in active:
                if prbs <= 0:
                    break
                g = min(quantum, demands[i] - alloc[i], prbs)
                alloc[i] += g
                prbs -= g
                last = i
        active = [i for i in active if alloc[i] < demands[i]]
    return alloc, last


def _rr_pass(jobs: list, prbs: int, grid: ResourceGrid, quantum: int | None = 1) -> list[tuple[int, int]]:
    """One RR group, starting after the grid's last-served job id."""
    if not jobs or prbs <= 0:
        return []
    jobs = sorted(jobs, key=lambda j: j.id)
    if grid.last_served is not None:
        k = next((i for i, j in enumerate(jobs) if j.id > grid.last_served), 0)
        jobs = jobs[k:] + jobs[:k]
    grants, last = round_robin([j.demand for j in jobs], prbs, quantum)
    if last is not None:
        grid.last_served = jobs[last].id
    return [(j.id, g) for j, g in zip(jobs, grants) if g > 0]


def _urgent(job) -> bool:
    return bool(getattr(job, "urgent", False))


def schedule_uplink_rr(pending: Sequence, grid: ResourceGrid, tti: int) -> dict[int, Allocation]:
    """Round robin over all pending uplink packets (retransmissions first)."""
    free = grid.free(tti)
    urgent = [j for j in pending if _urgent(j) and j.demand > 0]
    rest = [j for j in pending if not _urgent(j) and j.demand > 0]
    grants = _rr_pass(urgent, free, grid)
    free -= sum(g for _, g in grants)
    grants += _rr_pass(rest, free, grid)
    return grid.commit(tti, grants)


def schedule_downlink(pending: Sequence, grid: ResourceGrid, tti: int,
                      policy: str = "newest_first_then_rr", quantum: int | None = 1) -> dict[int, Allocation]:
    """Newest eNodeB arrival first; equal arrivals share by round robin.

    Leftover PRBs flow to older packets.  With ``policy="rr"`` all packets
    form one round-robin group.  ``quantum`` is the round-robin step (see
    :func:`round_robin`).
    """
    if policy not in ("newest_first_then_rr", "rr"):
        raise ValueError(f"unknown policy {policy!r}")
    free = grid.free(tti)
    grants = []
    urgent = [j for j in pending if _urgent(j) and j.demand > 0]
    rest = [j for j in pending if not _urgent(j) and j.demand > 0]
    groups = [urgent]
    if policy == "rr":
        groups.append(rest)
    else:
        by_arrival = defaultdict(list)
        for j in rest:
            by_arrival[j.arrival_tti].append(j)
        groups += [by_arrival[a] for a in sorted(by_arrival, reverse=True)]
    for group in groups:
        if free <= 0:
            break
        g = _rr_pass(group, free, grid, quantum)
        free -= sum(n for _, n in g)
        grants += g
    return grid.commit(tti, grants)


@dataclass
class Attempt:
    start_tti: int
    end_tti: int  # exclusive: first TTI after the attempt
    prbs: int
    ok: bool | None = None


@dataclass
class HarqProcess:
    packet: Any
    max_retx: int
    deadline_tti: int  # transmissions must end by this TTI boundary
    gap_ttis: int = 7
    min_tx_ttis: int = 1
    attempts: list[Attempt] = field(default_factory=list)
    next_eligible_tti: int | None = None

    @property
    def exhausted(self) -> bool:
        return self.next_eligible_tti is None and bool(self.attempts) and self.attempts[-1].ok is False


def harq_next_attempt(harq: HarqProcess, failure_end_tti: int) -> int | None:
    """Start TTI of the retransmission after a failure, or ``None`` if exhausted.

    A retransmission is allowed while the attempt cap holds and it can still
    finish before the packet deadline.
    """
    nxt = failure_end_tti + harq.gap_ttis
    if len(harq.attempts) >= 1 + harq.max_retx or nxt + harq.min_tx_ttis > harq.deadline_tti:
        harq.next_eligible_tti = None
        return None
    harq.next_eligible_tti = nxt
    return nxt


class LatencyAccountingError(Exception):
    pass


@dataclass
class PacketTrace:
    """Clock marks of one (packet, receiver) delivery, in TTIs.

    ``*_ready_tti`` is the first TTI the packet may be scheduled in that
    direction; ``*_end_tti`` is the boundary after its last successful TTI.
    """

    gen_tti: int
    ul_ready_tti: int | None = None
    ul_end_tti: int | None = None
    dl_ready_tti: int | None = None
    dl_end_tti: int | None = None
    crosses_enb: bool = False
    failed: bool = False


def latency_phases(trace: PacketTrace, budget: LatencyBudget) -> tuple[float, float, float]:
    """(uplink, inter-eNodeB, downlink) latency in ms.

    Uplink: UE processing + frame alignment + queueing/transmission/HARQ.
    Downlink: eNB processing + frame alignment + queueing/transmission/HARQ
    + receiver UE processing.
    """
    if trace.failed:
        return math.inf, math.inf, math.inf
    marks = (trace.ul_ready_tti, trace.ul_end_tti, trace.dl_ready_tti, trace.dl_end_tti)
    if any(m is None for m in marks):
        raise LatencyAccountingError(f"incomplete trace: {trace}")
    if not (trace.gen_tti <= trace.ul_ready_tti <= trace.ul_end_tti <= trace.dl_ready_tti <= trace.dl_end_tti):
        raise LatencyAccountingError(f"trace marks out of order: {trace}")
    tti = budget.tti_ms
    ul = budget.ue_processing_ms + budget.frame_alignment_ms + (trace.ul_end_tti - trace.ul_ready_tti) * tti
    inter = budget.inter_enb_ms if trace.crosses_enb else 0.0
    dl = (budget.enb_processing_ms + budget.frame_alignment_ms
          + (trace.dl_end_tti - trace.dl_ready_tti) * tti + budget.ue_processing_ms)
    return ul, inter, dl


def e2e_latency(trace: PacketTrace, budget: LatencyBudget) -> float:
    ul, inter, dl = latency_phases(trace, budget)
    return ul + inter + dl
