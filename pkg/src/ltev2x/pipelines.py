"""Packet pipelines: uplink, downlink unicast, downlink multicast.

Uplink and downlink use separate FDD carriers and never interact, so a run
simulates the uplink of every packet first and then replays the downlink
from the resulting eNodeB arrival times.  Both passes advance a TTI clock and
share PRBs between concurrent packets through the MAC schedulers.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from ._rng import substream
from .config import RunConfig
from .mac import (
    Attempt,
    HarqProcess,
    LatencyBudget,
    PacketTrace,
    ResourceGrid,
    harq_next_attempt,
    latency_phases,
    schedule_downlink,
    schedule_uplink_rr,
)
from .phy import (
    McsEntry,
    McsTable,
    TransportBlock,
    bler_scalar,
    build_transport_block,
    draw_block_error,
    prbs_required,
    select_mcs_unicast,
    table_from_config,
)
from .scenario import Scenario, build_scenario

INF = math.inf

# decoder(bler, rng, n_code_blocks, context) -> success.  ``context`` is a
# tuple (direction, packet_id, receiver_id, attempt_number) with attempt
# numbers starting at 1 (replica number in multicast; receiver -1 in uplink).
Decoder = Callable[[float, np.random.Generator, int, tuple], bool]


def default_decoder(bler_value: float, rng: np.random.Generator, n_code_blocks: int, context: tuple) -> bool:
    return draw_block_error(bler_value, rng, n_code_blocks)


@dataclass
class Packet:
    id: int
    tx: int
    gen_tti: int
    payload_bytes: int
    tb: TransportBlock
    receivers: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    measured: bool = True
    # uplink outcome
    ul_ready_tti: int | None = None
    ul_end_tti: int | None = None
    ul_attempts: int = 0
    ul_ok: bool | None = None
    ul_sector: int | None = None


@dataclass(frozen=True)
class UplinkOutcome:
    success: bool
    ready_tti: int
    end_tti: int | None  # boundary after the last successful TTI
    attempts: int
    ul_ms: float
    enb_arrival_ms: float  # generation + UL latency; eNB processing follows


@dataclass(frozen=True)
class DeliveryRecord:
    packet_id: int
    tx_id: int
    rx_id: int
    gen_ms: float
    e2e_ms: float
    ul_ms: float
    inter_enb_ms: float
    dl_ms: float
    ul_attempts: int
    dl_attempts: int
    mode: str

    @property
    def success(self) -> bool:
        return math.isfinite(self.e2e_ms)


def _cyclic_overlap(a: int, n: int, b: int, m: int, size: int) -> int:
    total = 0
    for shift in (-size, 0, size):
        lo = a if a > b + shift else b + shift
        hi = a + n if a + n < b + shift + m else b + shift + m
        if hi > lo:
            total += hi - lo
    return total


def _sector_offsets(prbs: int, n_sectors: int, stagger: bool) -> list[int]:
    return [(k * prbs) // n_sectors if stagger else 0 for k in range(n_sectors)]


# --------------------------------------------------------------------------- uplink


class _UlJob:
    __slots__ = ("id", "packet", "sector", "arrival_tti", "deadline", "mcs", "need", "demand", "urgent",
                 "harq", "start", "acc_i", "acc_prbs", "psd_mw", "done", "waiting")

    def __init__(self, packet: Packet, sector: int, mcs: McsEntry, need: int, psd_mw: float, deadline: int,
                 max_retx: int, gap: int):
        self.id = packet.id
        self.packet = packet
        self.sector = sector
        self.arrival_tti = packet.ul_ready_tti
        self.deadline = deadline
        self.mcs = mcs
        self.need = need
        self.demand = need
        self.urgent = False
        self.harq = HarqProcess(packet, max_retx, deadline, gap)
        self.start = None
        self.acc_i = 0.0
        self.acc_prbs = 0
        self.psd_mw = psd_mw
        self.done = False
        self.waiting = False


def select_mcs_uplink(scenario: Scenario, user: int, sector: int, tti: int, tb: TransportBlock,
                      table: McsTable, prbs_total: int, data_res_per_prb: int) -> tuple[McsEntry, int]:
    """Most efficient MCS meeting the BLER target with the PRBs it needs.

    The UE spreads its fixed power over the allocation, so SNR drops as the
    PRB count grows; each candidate is checked at its own PRB count.
    """
    budget = scenario.budget(tti)
    for e in reversed(table.entries):
        need = prbs_required(tb, e, data_res_per_prb)
        snr = budget.ul_snr_db(user, sector, min(need, prbs_total))
        if bler_scalar(snr, e) <= table.target_bler * (1.0 + 1e-9):
            return e, need
    e = table.entries[0]
    return e, prbs_required(tb, e, data_res_per_prb)


class UplinkSimulator:
    """Round-robin uplink of many packets over per-sector PRB pools."""

    def __init__(self, scenario: Scenario, cfg: RunConfig, table: McsTable, rng: np.random.Generator,
                 decoder: Decoder | None = None, keep_history: bool = False):
        self.scenario = scenario
        self.cfg = cfg
        self.table = table
        self.rng = rng
        self.decoder = decoder or default_decoder
        self.budget_ms = LatencyBudget.from_config(cfg.mac)
        self.prbs = cfg.prbs_ul
        n_sec = len(scenario.sectors)
        offsets = _sector_offsets(self.prbs, n_sec, cfg.radio.stagger_sector_prbs)
        self.grids = [ResourceGrid(self.prbs, offsets[k], keep_history) for k in range(n_sec)]
        self.harq_log: list[HarqProcess] = []
        self.interference = cfg.radio.interference

    def run(self, packets: Sequence[Packet]) -> None:
        lb = self.budget_ms
        lifetime = lb.lifetime_ttis
        arrivals: dict[int, list[Packet]] = defaultdict(list)
        for p in packets:
            p.ul_ready_tti = p.gen_tti + lb.ul_setup_ttis
            arrivals[p.ul_ready_tti].append(p)
        if not arrivals:
            return
        n_sec = len(self.grids)
        pending: list[list[_UlJob]] = [[] for _ in range(n_sec)]
        retx_due: dict[int, list[_UlJob]] = defaultdict(list)
        noise = None
        p_ue_mw = 10.0 ** (self.cfg.radio.ue_tx_power_dbm / 10.0)
        t = min(arrivals)
        t_last = max(p.gen_tti for p in packets) + lifetime
        while t <= t_last:
            budget = self.scenario.budget(t)
            noise = budget.ul_noise_prb_mw
            for p in arrivals.pop(t, ()):
                sec = self.scenario.serving_sector(p.tx, t)
                p.ul_sector = sec
                mcs, need = select_mcs_uplink(self.scenario, p.tx, sec, t, p.tb, self.table, self.prbs,
                                              self.cfg.phy.data_res_per_prb)
                job = _UlJob(p, sec, mcs, need, p_ue_mw / min(need, self.prbs), p.gen_tti + lifetime,
                             self.cfg.mac.max_retx, lb.gap_ttis)
                self.harq_log.append(job.harq)
                pending[sec].append(job)
            for job in retx_due.pop(t, ()):
                job.waiting = False
                job.urgent = True
                job.demand = job.need
                job.start = None
                pending[job.sector].append(job)

            grants = []
            for s in range(n_sec):
                live = []
                for job in pending[s]:
                    if job.done or job.waiting:
                        continue
                    if t >= job.deadline:
                        self._fail(job)
                        continue
                    live.append(job)
                pending[s] = live
                alloc = schedule_uplink_rr(live, self.grids[s], t) if live else {}
                by_id = {j.id: j for j in live}
                grants.append([(by_id[i], a) for i, a in alloc.items()])

            for s in range(n_sec):
                for job, a in grants[s]:
                    if job.start is None:
                        job.start = t
                    if self.interference:
                        i_mw = 0.0
                        for s2 in range(n_sec):
                            if s2 == s:
                                continue
                            for other, b in grants[s2]:
                                ov = _cyclic_overlap(a.start, a.count, b.start, b.count, self.prbs)
                                if ov:
                                    i_mw += ov * other.psd_mw * budget.coupling_mw[other.packet.tx, s]
                        job.acc_i += i_mw
                    job.acc_prbs += a.count
                    job.demand -= a.count
            for s in range(n_sec):
                for job, a in grants[s]:
                    if job.demand == 0:
                        self._finish_attempt(job, t, noise, budget, retx_due)
            # a due retransmission that got no PRB cannot keep its HARQ timing
            for s in range(n_sec):
                for job in pending[s]:
                    if job.urgent and job.start is None and not job.done:
                        self._fail(job)
                self.grids[s].forget_before(t)
            t += 1
        for s in range(n_sec):
            for job in pending[s]:
                if not job.done:
                    self._fail(job)

    def _fail(self, job: _UlJob) -> None:
        job.done = True
        job.packet.ul_ok = False
        job.packet.ul_attempts = len(job.harq.attempts)

    def _finish_attempt(self, job: _UlJob, t: int, noise: float, budget, retx_due) -> None:
        sig = job.psd_mw * budget.coupling_mw[job.packet.tx, job.sector]
        sinr = 10.0 * math.log10(sig / (noise + job.acc_i / job.acc_prbs))
        b = bler_scalar(sinr, job.mcs)
        n_att = len(job.harq.attempts) + 1
        ok = self.decoder(b, self.rng, job.packet.tb.n_code_blocks, ("uplink", job.packet.id, -1, n_att))
        job.harq.attempts.append(Attempt(job.start, t + 1, job.acc_prbs, ok))
        job.acc_i = 0.0
        job.acc_prbs = 0
        p = job.packet
        p.ul_attempts = n_att
        if ok:
            job.done = True
            p.ul_ok = True
            p.ul_end_tti = t + 1
            return
        nxt = harq_next_attempt(job.harq, t + 1)
        if nxt is None:
            self._fail(job)
            return
        job.start = None
        job.demand = 0
        job.urgent = False
        job.waiting = True
        retx_due[nxt].append(job)


# --------------------------------------------------------------------------- downlink


class _DlJob:
    """One downlink transmission chain: a unicast (packet, receiver) or a
    multicast (packet, sector) with all receivers in that sector."""

    __slots__ = ("id", "packet", "sector", "arrival_tti", "deadline", "mcs", "need", "demand", "urgent",
                 "start", "done", "left", "rx", "acc_i", "acc_prbs", "harq", "replica", "combined", "got",
                 "replica_ends")

    def __init__(self, jid: int, packet: Packet, sector: int, arrival: int, deadline: int, mcs: McsEntry,
                 need: int, rx):
        self.id = jid
        self.packet = packet
        self.sector = sector
        self.arrival_tti = arrival
        self.deadline = deadline
        self.mcs = mcs
        self.need = need
        self.demand = need
        self.urgent = False
        self.start = None
        self.done = False
        self.left = False  # moved out of its arrival bucket into HARQ
        self.rx = rx
        self.acc_prbs = 0
        self.harq = None
        self.replica = 0
        self.combined = None
        self.got = None
        self.replica_ends: list[int] = []


class _SectorQueue:
    """Downlink backlog of one sector, bucketed by eNodeB arrival TTI."""

    def __init__(self):
        self.buckets: dict[int, list[_DlJob]] = {}
        self.min_deadline: dict[int, int] = {}
        self.urgent: list[_DlJob] = []

    def add(self, job: _DlJob) -> None:
        a = job.arrival_tti
        self.buckets.setdefault(a, []).append(job)
        self.min_deadline[a] = min(self.min_deadline.get(a, job.deadline), job.deadline)

    def expire(self, t: int, on_expire) -> None:
        for a in [a for a, d in self.min_deadline.items() if d <= t]:
            keep = []
            for job in self.buckets[a]:
                if job.done or job.left:
                    continue
                if job.deadline <= t:
                    on_expire(job)
                else:
                    keep.append(job)
            if keep:
                self.buckets[a] = keep
                self.min_deadline[a] = min(j.deadline for j in keep)
            else:
                del self.buckets[a]
                del self.min_deadline[a]
        live = []
        for job in self.urgent:
            if job.done or not job.urgent:
                continue
            if job.deadline <= t:
                on_expire(job)
            else:
                live.append(job)
        self.urgent = live

    def candidates(self, free: int, everything: bool) -> list[_DlJob]:
        """Jobs that could receive PRBs this TTI under newest-first order."""
        self.urgent = [j for j in self.urgent if j.urgent and not j.done]
        out = list(self.urgent)
        need = sum(j.demand for j in out)
        for a in sorted(self.buckets, reverse=True):
            live = [j for j in self.buckets[a] if not (j.done or j.left)]
            if not live:
                del self.buckets[a]
                del self.min_deadline[a]
                continue
            self.buckets[a] = live
            live_d = [j for j in live if j.demand > 0]
            out += live_d
            need += sum(j.demand for j in live_d)
            if need >= free and not everything:
                break
        return out

    def __len__(self):
        return sum(len(b) for b in self.buckets.values()) + len(self.urgent)


class DownlinkSimulator:
    """Downlink of uplink-delivered packets, unicast or multicast.

    Unicast: one chain per receiver with its own MCS and HARQ (ACK/NACK).
    Multicast: one chain per (packet, sector) at a fixed MCS, repeated up to
    ``r_max`` times in consecutive TTIs without feedback; receivers
    chase-combine the replicas they have seen.
    """

    def __init__(self, scenario: Scenario, cfg: RunConfig, table: McsTable, rng: np.random.Generator,
                 decoder: Decoder | None = None, keep_history: bool = False, mode: str | None = None,
                 multicast_mcs: McsEntry | None = None):
        self.scenario = scenario
        self.cfg = cfg
        self.table = table
        self.rng = rng
        self.decoder = decoder or default_decoder
        self.mode = mode or cfg.run.downlink_mode
        self.lb = LatencyBudget.from_config(cfg.mac)
        self.prbs = cfg.prbs_dl
        n_sec = len(scenario.sectors)
        self.offsets = _sector_offsets(self.prbs, n_sec, cfg.radio.stagger_sector_prbs)
        self.grids = [ResourceGrid(self.prbs, self.offsets[k], keep_history) for k in range(n_sec)]
        self.policy = cfg.mac.dl_policy
        self.quantum = 1 if cfg.mac.dl_rr_quantum == "prb" else None
        self.r_max = cfg.run.r_max
        self.interference = cfg.radio.interference
        self.planning_load = cfg.radio.planning_load if cfg.radio.interference else 0.0
        if multicast_mcs is None:
            multicast_mcs = _multicast_entry(table, cfg)
        self.multicast_mcs = multicast_mcs
        self.harq_log: list[HarqProcess] = []
        self.jobs: list[_DlJob] = []
        # (packet id, receiver) -> (dl_ready_tti, end_tti | None, attempts)
        self.outcomes: dict[tuple[int, int], tuple[int, int | None, int]] = {}
        self._next_id = 0

    # -- job creation ------------------------------------------------------

    def _new_jobs(self, p: Packet, receivers: np.ndarray, ready: int) -> list[_DlJob]:
        deadline = p.gen_tti + self.lb.lifetime_ttis
        budget = self.scenario.budget(ready)
        data_res = self.cfg.phy.data_res_per_prb
        jobs = []
        if self.mode == "unicast":
            for r in receivers:
                r = int(r)
                sec = self.scenario.serving_sector(r, ready)
                sinr = budget.dl_sinr_db(r, sec, self.planning_load)
                mcs = select_mcs_unicast(sinr, self.table)
                need = prbs_required(p.tb, mcs, data_res)
                job = _DlJob(self._next_id, p, sec, ready, deadline, mcs, need, r)
                job.acc_i = 0.0
                job.harq = HarqProcess((p.id, r), self.cfg.mac.max_retx, deadline, self.lb.gap_ttis)
                self.harq_log.append(job.harq)
                self._next_id += 1
                jobs.append(job)
        else:
            need = prbs_required(p.tb, self.multicast_mcs, data_res)
            secs = np.array([self.scenario.serving_sector(int(r), ready) for r in receivers], dtype=int)
            for sec in sorted(set(secs.tolist())):
                rx = np.asarray(receivers, dtype=int)[secs == sec]
                job = _DlJob(self._next_id, p, sec, ready, deadline, self.multicast_mcs, need, rx)
                job.acc_i = np.zeros(len(rx))
                job.combined = np.zeros(len(rx))
                job.got = np.zeros(len(rx), dtype=bool)
                self._next_id += 1
                jobs.append(job)
        return jobs

    # -- outcomes ----------------------------------------------------------

    def _record(self, p: Packet, rx: int, end: int | None, attempts: int) -> None:
        self.outcomes[(p.id, rx)] = (p.ul_end_tti + self.lb.dl_setup_ttis(), end, attempts)

    def _expire(self, job: _DlJob) -> None:
        job.done = True
        if self.mode == "unicast":
            self._record(job.packet, job.rx, None, len(job.harq.attempts))
        else:
            for i in np.flatnonzero(~job.got):
                self._record(job.packet, int(job.rx[i]), None, job.replica)

    def _finish_unicast(self, job: _DlJob, t: int, budget, retx_due) -> None:
        r = job.rx
        sig = budget.dl_prb_rx_mw[r, job.sector]
        sinr = 10.0 * math.log10(sig / (budget.dl_noise_prb_mw + job.acc_i / job.acc_prbs))
        b = bler_scalar(sinr, job.mcs)
        n_att = len(job.harq.attempts) + 1
        ok = self.decoder(b, self.rng, job.packet.tb.n_code_blocks, ("downlink", job.packet.id, r, n_att))
        job.harq.attempts.append(Attempt(job.start, t + 1, job.acc_prbs, ok))
        job.acc_i = 0.0
        job.acc_prbs = 0
        if ok:
            job.done = True
            self._record(job.packet, r, t + 1, n_att)
            return
        nxt = harq_next_attempt(job.harq, t + 1)
        if nxt is None:
            job.done = True
            self._record(job.packet, r, None, n_att)
            return
        job.left = True
        job.urgent = False
        job.start = None
        job.demand = 0
        retx_due[nxt].append(job)

    def _finish_replica(self, job: _DlJob, t: int, budget) -> None:
        job.replica += 1
        job.replica_ends.append(t + 1)
        pending = np.flatnonzero(~job.got)
        rx = job.rx[pending]
        sig = budget.dl_prb_rx_mw[rx, job.sector]
        sinr_lin = sig / (budget.dl_noise_prb_mw + job.acc_i[pending] / job.acc_prbs)
        job.combined[pending] += sinr_lin
        eff_db = 10.0 * np.log10(job.combined[pending])
        n_cb = job.packet.tb.n_code_blocks
        for k, i in enumerate(pending):
            b = bler_scalar(float(eff_db[k]), job.mcs)
            if self.decoder(b, self.rng, n_cb, ("multicast", job.packet.id, int(job.rx[i]), job.replica)):
                job.got[i] = True
                self._record(job.packet, int(job.rx[i]), t + 1, job.replica)
        job.acc_i[:] = 0.0
        job.acc_prbs = 0
        job.start = None
        if job.got.all() or job.replica >= self.r_max:
            self._expire(job)
        else:
            job.demand = job.need

    # -- main loop ---------------------------------------------------------

    def run(self, packets: Sequence[Packet]) -> None:
        lb = self.lb
        arrivals: dict[int, list[Packet]] = defaultdict(list)
        for p in packets:
            if p.ul_ok and len(p.receivers):
                arrivals[p.ul_end_tti + lb.dl_setup_ttis()].append(p)
        if not arrivals:
            return
        n_sec = len(self.grids)
        queues = [_SectorQueue() for _ in range(n_sec)]
        retx_due: dict[int, list[_DlJob]] = defaultdict(list)
        everything = self.policy == "rr"
        unicast = self.mode == "unicast"
        t = min(arrivals)
        t_last = max(p.gen_tti for ps in arrivals.values() for p in ps) + lb.lifetime_ttis
        prbs = self.prbs
        offsets = self.offsets
        while t <= t_last:
            budget = self.scenario.budget(t)
            for p in sorted(arrivals.pop(t, ()), key=lambda q: q.id):
                for job in self._new_jobs(p, p.receivers, t):
                    queues[job.sector].add(job)
                    self.jobs.append(job)
            for job in retx_due.pop(t, ()):
                job.urgent = True
                job.demand = job.need
                queues[job.sector].urgent.append(job)

            grants = []
            for s in range(n_sec):
                q = queues[s]
                q.expire(t, self._expire)
                cands = q.candidates(self.grids[s].free(t), everything)
                if cands:
                    alloc = schedule_downlink(cands, self.grids[s], t, self.policy, self.quantum)
                    by_id = {j.id: j for j in cands}
                    grants.append([(by_id[i], a) for i, a in alloc.items()])
                else:
                    grants.append([])
            used = [self.grids[s].used[t] for s in range(n_sec)]

            for s in range(n_sec):
                for job, a in grants[s]:
                    if job.start is None:
                        job.start = t
                    if self.interference:
                        for s2 in range(n_sec):
                            if s2 == s or used[s2] == 0:
                                continue
                            ov = _cyclic_overlap(a.start, a.count, offsets[s2], used[s2], prbs)
                            if ov:
                                job.acc_i += ov * budget.dl_prb_rx_mw[job.rx, s2]
                    job.acc_prbs += a.count
                    job.demand -= a.count
            for s in range(n_sec):
                for job, a in grants[s]:
                    if job.demand == 0:
                        if unicast:
                            self._finish_unicast(job, t, budget, retx_due)
                        else:
                            self._finish_replica(job, t, budget)
                q = queues[s]
                for job in q.urgent:
                    if job.urgent and job.start is None and not job.done:
                        # missed its HARQ slot
                        job.done = True
                        self._record(job.packet, job.rx, None, len(job.harq.attempts))
                self.grids[s].forget_before(t)
            t += 1
        for q in queues:
            for job in [j for j in q.urgent if j.urgent] + [j for b in q.buckets.values() for j in b if not j.left]:
                if not job.done:
                    self._expire(job)
        for ts in list(retx_due):
            for job in retx_due.pop(ts):
                if not job.done:
                    self._expire(job)


def _multicast_entry(table: McsTable, cfg: RunConfig) -> McsEntry:
    try:
        return table.by_efficiency(cfg.run.multicast_mcs_efficiency)
    except KeyError:
        from .phy import make_mcs

        p = cfg.phy
        return make_mcs(0, cfg.run.multicast_mcs_efficiency, target_bler=p.target_bler,
                        attenuation=p.shannon_attenuation, slope_db=p.bler_slope_db)


# --------------------------------------------------------------------------- packets and runs


def generate_packets(scenario: Scenario, cfg: RunConfig, seed: int, *, window: tuple[int, int] | None = None,
                     until_tti: int | None = None) -> list[Packet]:
    """Periodic CAMs from every vehicle, each at its own uniform offset.

    Packets are generated over ``[0, until_tti)``; those with generation time
    inside ``window`` are flagged ``measured``.
    """
    run = cfg.run
    period = run.cam_period_ms
    warm = int(round(run.warmup_s * 1000))
    hor = int(round(run.horizon_s * 1000))
    if window is None:
        window = (warm, warm + hor)
    if until_tti is None:
        until_tti = window[1] + int(cfg.mac.packet_lifetime_ms)
    vehicles = np.flatnonzero(scenario.is_vehicle)
    offsets = substream(seed, "generation").integers(0, period, size=len(vehicles))
    size_rng = substream(seed, "packet_size")
    phy = cfg.phy
    events = []
    for v, off in zip(vehicles, offsets):
        for g in range(int(off), until_tti, period):
            events.append((g, int(v)))
    events.sort()
    packets = []
    tb_cache: dict[int, TransportBlock] = {}
    for pid, (g, v) in enumerate(events):
        if phy.packet_size_mode == "uniform":
            lo = int(math.ceil(phy.packet_bytes * (1 - phy.packet_size_spread)))
            hi = int(math.floor(phy.packet_bytes * (1 + phy.packet_size_spread)))
            size = int(size_rng.integers(lo, hi + 1))
        else:
            size = phy.packet_bytes
        tb = tb_cache.get(size)
        if tb is None:
            tb = tb_cache[size] = build_transport_block(size)
        packets.append(Packet(pid, v, g, size, tb, scenario.receivers(v, g), window[0] <= g < window[1]))
    return packets


def _records_for(packets: Iterable[Packet], outcomes, lb: LatencyBudget, mode: str) -> list[DeliveryRecord]:
    out = []
    for p in packets:
        if not p.measured:
            continue
        for r in p.receivers:
            r = int(r)
            trace = PacketTrace(p.gen_tti, p.ul_ready_tti, p.ul_end_tti)
            dl_att = 0
            ul_ms = INF
            if p.ul_ok:
                ul_ms = lb.ue_processing_ms + lb.frame_alignment_ms + (p.ul_end_tti - p.ul_ready_tti) * lb.tti_ms
                ready, end, dl_att = outcomes.get((p.id, r), (None, None, 0))
                trace.dl_ready_tti = ready
                trace.dl_end_tti = end
                trace.failed = end is None
            else:
                trace.failed = True
            ul, inter, dl = latency_phases(trace, lb)
            e2e = ul + inter + dl
            out.append(DeliveryRecord(p.id, p.tx, r, p.gen_tti * lb.tti_ms, e2e, ul_ms, inter, dl,
                                      p.ul_attempts, dl_att, mode))
    return out


class Simulation:
    """One deterministic run for a (config, seed) pair.

    Keeps the uplink and downlink engines around after ``run`` for inspection.
    """

    def __init__(self, cfg: RunConfig, seed: int, scenario: Scenario | None = None,
                 decoder: Decoder | None = None, keep_history: bool = False):
        self.cfg = cfg
        self.seed = seed
        warm = int(round(cfg.run.warmup_s * 1000))
        hor = int(round(cfg.run.horizon_s * 1000))
        self.window = (warm, warm + hor)
        self.until_tti = warm + hor + int(cfg.mac.packet_lifetime_ms)
        duration = self.until_tti + 2 * int(cfg.mac.packet_lifetime_ms)
        self.scenario = scenario or build_scenario(cfg, seed, duration_ms=duration)
        self.table = table_from_config(cfg.phy)
        self.decoder = decoder
        self.keep_history = keep_history
        self.packets: list[Packet] = []
        self.uplink: UplinkSimulator | None = None
        self.downlink: DownlinkSimulator | None = None

    def run(self) -> list[DeliveryRecord]:
        cfg = self.cfg
        self.packets = generate_packets(self.scenario, cfg, self.seed, window=self.window, until_tti=self.until_tti)
        self.uplink = UplinkSimulator(self.scenario, cfg, self.table, substream(self.seed, "ul_errors"),
                                      self.decoder, self.keep_history)
        self.uplink.run(self.packets)
        self.downlink = DownlinkSimulator(self.scenario, cfg, self.table, substream(self.seed, "dl_errors"),
                                          self.decoder, self.keep_history)
        self.downlink.run(self.packets)
        return _records_for(self.packets, self.downlink.outcomes, self.downlink.lb, self.downlink.mode)


def run_simulation(config: RunConfig, seed: int, **kwargs) -> list[DeliveryRecord]:
    return Simulation(config, seed, **kwargs).run()


# --------------------------------------------------------------------------- single-packet entry points


def _single(packet: Packet) -> Packet:
    packet.measured = True
    return packet


def run_uplink(packet: Packet, scenario: Scenario, table: McsTable | None = None,
               rng: np.random.Generator | None = None, decoder: Decoder | None = None) -> UplinkOutcome:
    """Uplink of one packet through an otherwise empty cell."""
    cfg = scenario.config
    table = table or table_from_config(cfg.phy)
    rng = rng if rng is not None else substream(scenario.seed, "ul_errors")
    sim = UplinkSimulator(scenario, cfg, table, rng, decoder)
    sim.run([_single(packet)])
    lb = sim.budget_ms
    if packet.ul_ok:
        ul_ms = lb.ue_processing_ms + lb.frame_alignment_ms + (packet.ul_end_tti - packet.ul_ready_tti) * lb.tti_ms
    else:
        ul_ms = INF
    return UplinkOutcome(bool(packet.ul_ok), packet.ul_ready_tti, packet.ul_end_tti, packet.ul_attempts, ul_ms,
                         packet.gen_tti * lb.tti_ms + ul_ms)


def _run_downlink(packet, receivers, scenario, table, rng, decoder, mode, fixed_mcs=None) -> list[DeliveryRecord]:
    if not packet.ul_ok:
        raise ValueError("downlink requires an uplink-delivered packet")
    cfg = scenario.config
    table = table or table_from_config(cfg.phy)
    packet.receivers = np.asarray([getattr(r, "id", r) for r in receivers], dtype=int)
    rng = rng if rng is not None else substream(scenario.seed, "dl_errors")
    sim = DownlinkSimulator(scenario, cfg, table, rng, decoder, mode=mode, multicast_mcs=fixed_mcs)
    sim.run([_single(packet)])
    return _records_for([packet], sim.outcomes, sim.lb, mode)


def run_downlink_unicast(packet: Packet, receivers, scenario: Scenario, table: McsTable | None = None,
                         rng: np.random.Generator | None = None, decoder: Decoder | None = None
                         ) -> list[DeliveryRecord]:
    return _run_downlink(packet, receivers, scenario, table, rng, decoder, "unicast")


def run_downlink_multicast(packet: Packet, receivers, fixed_mcs: McsEntry, scenario: Scenario,
                           table: McsTable | None = None, rng: np.random.Generator | None = None,
                           decoder: Decoder | None = None) -> list[DeliveryRecord]:
    return _run_downlink(packet, receivers, scenario, table, rng, decoder, "multicast", fixed_mcs)


def make_packet(scenario: Scenario, tx: int, gen_tti: int = 0, payload_bytes: int | None = None) -> Packet:
    size = scenario.config.phy.packet_bytes if payload_bytes is None else payload_bytes
    return Packet(0, tx, gen_tti, size, build_transport_block(size), scenario.receivers(tx, gen_tti))
