"""Link-to-system abstraction.

BLER curves are Gaussian-tail waterfalls, ``BLER = Q((sinr - threshold) / slope)``,
one per CQI efficiency.  By default each threshold is placed so that the
curve crosses the target BLER where an attenuated Shannon bound
``a * log2(1 + sinr)`` equals the MCS efficiency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from statistics import NormalDist
from typing import Sequence

import numpy as np
from scipy.special import erfc

# LTE 4-bit CQI efficiencies (bits per resource element)
CQI_EFFICIENCIES = (
    0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766, 1.9141,
    2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152, 5.5547,
)

TB_CRC_BITS = 24
CB_CRC_BITS = 24
MAX_CODE_BLOCK_BITS = 6144
DATA_RES_PER_PRB = 120

_SQRT2 = math.sqrt(2.0)


def q_inverse(p: float) -> float:
    """x such that Q(x) = p for the standard normal tail."""
    return NormalDist().inv_cdf(1.0 - p)


@dataclass(frozen=True)
class McsEntry:
    index: int
    efficiency_bits_per_re: float
    threshold_db: float
    slope_db: float = 1.0

    def bler(self, sinr_db):
        return bler(sinr_db, self)

    def calibration_point_db(self, target: float = 0.1) -> float:
        """SINR at which this curve gives ``target`` BLER."""
        return self.threshold_db + self.slope_db * q_inverse(target)


def shannon_sinr_db(efficiency: float, attenuation: float = 0.6) -> float:
    """SINR where ``attenuation * log2(1 + sinr)`` equals ``efficiency``."""
    return 10.0 * math.log10(2.0 ** (efficiency / attenuation) - 1.0)


def make_mcs(index: int, efficiency: float, *, target_bler: float = 0.1, attenuation: float = 0.6,
             slope_db: float = 1.0, threshold_db: float | None = None) -> McsEntry:
    if threshold_db is None:
        threshold_db = shannon_sinr_db(efficiency, attenuation) - slope_db * q_inverse(target_bler)
    return McsEntry(index, efficiency, threshold_db, slope_db)


@dataclass(frozen=True)
class McsTable:
    entries: tuple[McsEntry, ...]
    target_bler: float = 0.1

    def __post_init__(self):
        if not self.entries:
            raise ValueError("MCS table is empty")
        eff = [e.efficiency_bits_per_re for e in self.entries]
        if any(b <= a for a, b in zip(eff, eff[1:])):
            raise ValueError("efficiencies must increase strictly with index")

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, index: int) -> McsEntry:
        """Entry by MCS index (1-based)."""
        for e in self.entries:
            if e.index == index:
                return e
        raise KeyError(index)

    def by_efficiency(self, efficiency: float) -> McsEntry:
        for e in self.entries:
            if math.isclose(e.efficiency_bits_per_re, efficiency, rel_tol=0, abs_tol=5e-5):
                return e
        raise KeyError(f"no MCS with efficiency {efficiency}")


def default_table(target_bler: float = 0.1, attenuation: float = 0.6, slope_db: float = 1.0) -> McsTable:
    return McsTable(
        tuple(make_mcs(i + 1, eff, target_bler=target_bler, attenuation=attenuation, slope_db=slope_db)
              for i, eff in enumerate(CQI_EFFICIENCIES)),
        target_bler,
    )


def table_from_config(phy_cfg) -> McsTable:
    if not phy_cfg.mcs_table:
        return default_table(phy_cfg.target_bler, phy_cfg.shannon_attenuation, phy_cfg.bler_slope_db)
    rows = sorted(phy_cfg.mcs_table, key=lambda r: r["index"])
    return McsTable(
        tuple(make_mcs(int(r["index"]), float(r["efficiency"]), target_bler=phy_cfg.target_bler,
                       attenuation=phy_cfg.shannon_attenuation,
                       slope_db=float(r.get("slope_db", phy_cfg.bler_slope_db)),
                       threshold_db=r.get("threshold_db"))
              for r in rows),
        phy_cfg.target_bler,
    )


def bler(sinr_db, mcs: McsEntry):
    x = (np.asarray(sinr_db, dtype=float) - mcs.threshold_db) / (_SQRT2 * mcs.slope_db)
    out = 0.5 * erfc(x)
    return float(out) if out.ndim == 0 else out


def bler_scalar(sinr_db: float, mcs: McsEntry) -> float:
    return 0.5 * math.erfc((sinr_db - mcs.threshold_db) / (_SQRT2 * mcs.slope_db))


def select_mcs_unicast(sinr_db: float, table: McsTable) -> McsEntry:
    """Most efficient MCS whose BLER at ``sinr_db`` does not exceed the target."""
    for e in reversed(table.entries):
        if bler_scalar(sinr_db, e) <= table.target_bler * (1.0 + 1e-9):
            return e
    return table.entries[0]


@dataclass(frozen=True)
class TransportBlock:
    payload_bits: int
    crc_bits: int = TB_CRC_BITS
    code_blocks: tuple[int, ...] = field(default=())

    @property
    def total_bits(self) -> int:
        return sum(self.code_blocks)

    @property
    def n_code_blocks(self) -> int:
        return len(self.code_blocks)

    def prbs_required_per_tti(self, mcs: McsEntry, available_prbs: Sequence[int],
                              data_res_per_prb: int = DATA_RES_PER_PRB) -> dict[int, int]:
        """TTIs needed for each available PRB count."""
        need = prbs_required(self, mcs, data_res_per_prb)
        return {a: -(-need // a) for a in available_prbs}


def build_transport_block(payload_bytes: int) -> TransportBlock:
    if payload_bytes < 0:
        raise ValueError("payload must be >= 0")
    bits = 8 * payload_bytes + TB_CRC_BITS
    if bits <= MAX_CODE_BLOCK_BITS:
        return TransportBlock(8 * payload_bytes, TB_CRC_BITS, (bits,))
    c = -(-bits // (MAX_CODE_BLOCK_BITS - CB_CRC_BITS))
    total = bits + c * CB_CRC_BITS
    base, extra = divmod(total, c)
    blocks = tuple(base + 1 if i < extra else base for i in range(c))
    return TransportBlock(8 * payload_bytes, TB_CRC_BITS, blocks)


def _exact(x: float) -> Fraction:
    # decimal value as written, so 0.6016 * 120 * 125 == 9024 exactly
    return Fraction(repr(float(x)))


@lru_cache(maxsize=4096)
def _prbs_for_bits(bits: int, efficiency: float, data_res_per_prb: int) -> int:
    return max(1, math.ceil(Fraction(bits) / (_exact(efficiency) * data_res_per_prb)))


def prbs_required(tb: TransportBlock, mcs: McsEntry, data_res_per_prb: int = DATA_RES_PER_PRB) -> int:
    return _prbs_for_bits(tb.total_bits, mcs.efficiency_bits_per_re, data_res_per_prb)


def draw_block_error(bler_value: float, rng: np.random.Generator, n_code_blocks: int = 1) -> bool:
    """True on success.  Each code block fails independently with ``bler_value``."""
    if not 0.0 <= bler_value <= 1.0:
        raise ValueError("bler must lie in [0, 1]")
    for _ in range(n_code_blocks):
        if rng.random() < bler_value:
            return False
    return True


def mrc_combine(sinr_db_list: Sequence[float]) -> float:
    """Effective SINR of maximal-ratio combined replicas (linear sum)."""
    if len(sinr_db_list) == 0:
        raise ValueError("need at least one replica")
    return 10.0 * math.log10(math.fsum(10.0 ** (g / 10.0) for g in sinr_db_list))
