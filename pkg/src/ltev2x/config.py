"""Run configuration: defaults, TOML parsing and validation.

Every tunable of the simulator lives in one of five sections
(``scenario``, ``radio``, ``phy``, ``mac``, ``run``).  An empty file yields
the baseline study configuration.
"""

from __future__ import annotations

import dataclasses
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import tomli
import tomli_w

# Supported system bandwidths (MHz) and their PRB counts.
PRBS_PER_BANDWIDTH = {10: 50, 20: 100, 40: 200, 100: 500}
PRB_BANDWIDTH_MHZ = 0.18


class ConfigError(Exception):
    """Invalid configuration.  ``code`` distinguishes the failure class."""

    MISSING_FILE = "E_MISSING_FILE"
    SYNTAX = "E_SYNTAX"
    UNKNOWN_KEY = "E_UNKNOWN_KEY"
    TYPE = "E_TYPE"
    RANGE = "E_RANGE"

    def __init__(self, code: str, message: str, line: int | None = None):
        self.code = code
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"[{code}] {message}{where}")


@dataclass
class ScenarioConfig:
    rows: int = 4
    cols: int = 4
    block_m: float = 120.0
    street_m: float = 21.0
    park_row: int = 2
    park_col: int = 2
    site_row: int = 1
    site_col: int = 1
    building_height_m: float = 24.0
    mast_height_m: float = 3.0
    ue_height_m: float = 1.5
    density_per_km2: float = 1000.0
    vehicle_fraction: float = 0.5
    count_mode: str = "fixed"  # fixed | poisson
    radius_m: float = 200.0
    vehicle_max_kmh: float = 50.0
    vru_max_kmh: float = 5.0
    mobility: bool = False
    mobility_update_ms: int = 100
    sector_azimuths_deg: list[float] = field(default_factory=lambda: [30.0, 150.0, 270.0])


@dataclass
class RadioConfig:
    fc_ghz: float = 0.8
    los_slope: float = 22.0
    los_intercept: float = 28.0
    los_freq_coeff: float = 20.0
    nlos_slope: float = 36.7
    nlos_intercept: float = 22.7
    nlos_freq_coeff: float = 26.0
    shadowing_los_db: float = 4.0
    shadowing_nlos_db: float = 6.0
    beamwidth_deg: float = 65.0
    max_attenuation_db: float = 30.0
    boresight_gain_dbi: float = 14.0
    ue_antenna_gain_dbi: float = 0.0
    thermal_density_dbm_hz: float = -174.0
    noise_figure_enb_db: float = 5.0
    noise_figure_ue_db: float = 9.0
    sector_power_dbm_per_10mhz: float = 46.0
    ue_tx_power_dbm: float = 24.0
    prb_bandwidth_hz: float = 180e3
    interference: bool = True
    # fraction of neighbour-sector load assumed when picking a unicast DL MCS
    planning_load: float = 1.0
    # start each sector's PRB allocation at a different third of the band
    stagger_sector_prbs: bool = True


@dataclass
class PhyConfig:
    data_res_per_prb: int = 120
    packet_bytes: int = 212
    packet_size_mode: str = "fixed"  # fixed | uniform
    packet_size_spread: float = 0.2
    target_bler: float = 0.1
    shannon_attenuation: float = 0.6
    bler_slope_db: float = 1.0
    # optional table override: list of {index, efficiency, threshold_db, slope_db}
    mcs_table: list[dict[str, float]] = field(default_factory=list)


@dataclass
class MacConfig:
    tti_ms: float = 1.0
    ue_processing_ms: float = 1.0
    frame_alignment_ms: float = 0.5
    harq_retx_gap_ms: float = 7.0
    enb_processing_ms: float = 1.0
    inter_enb_ms: float = 1.0
    packet_lifetime_ms: float = 100.0
    max_retx: int = 3
    ul_policy: str = "rr"
    dl_policy: str = "newest_first_then_rr"  # or rr
    dl_rr_quantum: str = "packet"  # packet | prb


@dataclass
class RunSection:
    horizon_s: float = 2.0
    warmup_s: float = 0.2
    downlink_mode: str = "multicast"  # unicast | multicast
    multicast_mcs_efficiency: float = 0.877
    r_max: int = 4
    cam_period_ms: int = 100
    bandwidth_ul_mhz: float = 10.0
    bandwidth_dl_mhz: float = 10.0
    allow_custom_bw: bool = False
    seeds: list[int] = field(default_factory=lambda: [1])
    output_dir: str = "out"


@dataclass
class RunConfig:
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    phy: PhyConfig = field(default_factory=PhyConfig)
    mac: MacConfig = field(default_factory=MacConfig)
    run: RunSection = field(default_factory=RunSection)

    @property
    def prbs_ul(self) -> int:
        return prbs_for_bandwidth(self.run.bandwidth_ul_mhz, self.run.allow_custom_bw)

    @property
    def prbs_dl(self) -> int:
        return prbs_for_bandwidth(self.run.bandwidth_dl_mhz, self.run.allow_custom_bw)

    def replace(self, **sections: dict[str, Any]) -> RunConfig:
        """Copy with per-section overrides, e.g. ``cfg.replace(run={"r_max": 2})``."""
        out = {}
        for f in dataclasses.fields(self):
            sec = getattr(self, f.name)
            out[f.name] = dataclasses.replace(sec, **sections.get(f.name, {}))
        cfg = RunConfig(**out)
        validate(cfg)
        return cfg

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def prbs_for_bandwidth(bw_mhz: float, allow_custom: bool = False) -> int:
    if float(bw_mhz).is_integer() and int(bw_mhz) in PRBS_PER_BANDWIDTH:
        return PRBS_PER_BANDWIDTH[int(bw_mhz)]
    if not allow_custom:
        raise ConfigError(
            ConfigError.RANGE,
            f"bandwidth {bw_mhz} MHz not in supported set {sorted(PRBS_PER_BANDWIDTH)}",
        )
    # floor to whole PRBs, then down to a multiple of 12
    prbs = (math.floor(bw_mhz / PRB_BANDWIDTH_MHZ + 1e-9) // 12) * 12
    if prbs < 1:
        raise ConfigError(ConfigError.RANGE, f"bandwidth {bw_mhz} MHz yields no PRBs")
    return int(prbs)


_SECTIONS = {
    "scenario": ScenarioConfig,
    "radio": RadioConfig,
    "phy": PhyConfig,
    "mac": MacConfig,
    "run": RunSection,
}


def _line_of(text: str, key: str) -> int | None:
    pat = re.compile(rf"^[ \t]*{re.escape(key)}[ \t]*=", re.MULTILINE)
    m = pat.search(text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


def _coerce(section: str, name: str, value: Any, default: Any, text: str) -> Any:
    line = _line_of(text, name)
    bad = ConfigError(
        ConfigError.TYPE,
        f"{section}.{name}: expected {type(default).__name__}, got {value!r}",
        line,
    )
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise bad
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise bad
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise bad
        return value
    return value


def from_dict(data: dict[str, Any], text: str = "") -> RunConfig:
    sections = {}
    for key in data:
        if key not in _SECTIONS:
            raise ConfigError(ConfigError.UNKNOWN_KEY, f"unknown section [{key}]", _line_of_section(text, key))
    for name, cls in _SECTIONS.items():
        raw = data.get(name, {})
        if not isinstance(raw, dict):
            raise ConfigError(ConfigError.TYPE, f"[{name}] must be a table", _line_of(text, name))
        defaults = cls()
        known = {f.name for f in dataclasses.fields(cls)}
        kwargs = {}
        for key, value in raw.items():
            if key not in known:
                raise ConfigError(ConfigError.UNKNOWN_KEY, f"unknown key {name}.{key}", _line_of(text, key))
            kwargs[key] = _coerce(name, key, value, getattr(defaults, key), text)
        sections[name] = cls(**kwargs)
    cfg = RunConfig(**sections)
    validate(cfg, text)
    return cfg


def _line_of_section(text: str, name: str) -> int | None:
    m = re.search(rf"^[ \t]*\[{re.escape(name)}\]", text, re.MULTILINE)
    return None if m is None else text.count("\n", 0, m.start()) + 1


def parse_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(ConfigError.MISSING_FILE, f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(ConfigError.SYNTAX, f"malformed config: {exc}", int(m.group(1)) if m else None) from exc
    return from_dict(data, text)


def validate(cfg: RunConfig, text: str = "") -> None:
    def fail(key: str, msg: str) -> None:
        raise ConfigError(ConfigError.RANGE, f"{key}: {msg}", _line_of(text, key.split(".")[-1]))

    s, r, p, m, run = cfg.scenario, cfg.radio, cfg.phy, cfg.mac, cfg.run
    for key in ("rows", "cols"):
        if getattr(s, key) < 1:
            fail(f"scenario.{key}", "must be >= 1")
    for key in ("block_m", "street_m", "radius_m", "building_height_m"):
        if getattr(s, key) <= 0:
            fail(f"scenario.{key}", "must be positive")
    if not (0 <= s.park_row < s.rows and 0 <= s.park_col < s.cols):
        fail("scenario.park_row", "park slot outside grid")
    if not (0 <= s.site_row < s.rows and 0 <= s.site_col < s.cols):
        fail("scenario.site_row", "site slot outside grid")
    if s.density_per_km2 < 0:
        fail("scenario.density_per_km2", "must be >= 0")
    if not 0.0 <= s.vehicle_fraction <= 1.0:
        fail("scenario.vehicle_fraction", "must lie in [0, 1]")
    if s.count_mode not in ("fixed", "poisson"):
        fail("scenario.count_mode", "must be 'fixed' or 'poisson'")
    if s.vehicle_max_kmh < 0 or s.vru_max_kmh < 0:
        fail("scenario.vehicle_max_kmh", "speeds must be >= 0")
    if s.vehicle_max_kmh > 50.0:
        fail("scenario.vehicle_max_kmh", "urban speed limit is 50 km/h")
    if s.mobility_update_ms < 1:
        fail("scenario.mobility_update_ms", "must be >= 1")
    if len(s.sector_azimuths_deg) != 3:
        fail("scenario.sector_azimuths_deg", "exactly three sectors required")

    if r.fc_ghz <= 0:
        fail("radio.fc_ghz", "must be positive")
    if r.noise_figure_enb_db < 0 or r.noise_figure_ue_db < 0:
        fail("radio.noise_figure_ue_db", "noise figures must be >= 0")
    if r.shadowing_los_db < 0 or r.shadowing_nlos_db < 0:
        fail("radio.shadowing_los_db", "sigma must be >= 0")
    if r.beamwidth_deg <= 0 or r.max_attenuation_db < 0:
        fail("radio.beamwidth_deg", "invalid antenna pattern")
    if r.prb_bandwidth_hz <= 0:
        fail("radio.prb_bandwidth_hz", "must be positive")
    if not 0.0 <= r.planning_load <= 1.0:
        fail("radio.planning_load", "must lie in [0, 1]")

    if p.data_res_per_prb < 1:
        fail("phy.data_res_per_prb", "must be >= 1")
    if p.packet_bytes < 0:
        fail("phy.packet_bytes", "must be >= 0")
    if p.packet_size_mode not in ("fixed", "uniform"):
        fail("phy.packet_size_mode", "must be 'fixed' or 'uniform'")
    if not 0.0 <= p.packet_size_spread < 1.0:
        fail("phy.packet_size_spread", "must lie in [0, 1)")
    if not 0.0 < p.target_bler < 1.0:
        fail("phy.target_bler", "must lie in (0, 1)")
    if not 0.0 < p.shannon_attenuation <= 1.0:
        fail("phy.shannon_attenuation", "must lie in (0, 1]")
    if p.bler_slope_db <= 0:
        fail("phy.bler_slope_db", "must be positive")
    for row in p.mcs_table:
        if not isinstance(row, dict) or not {"index", "efficiency"} <= set(row):
            fail("phy.mcs_table", "rows need at least 'index' and 'efficiency'")
        if set(row) - {"index", "efficiency", "threshold_db", "slope_db"}:
            fail("phy.mcs_table", f"unknown fields {sorted(set(row) - {'index', 'efficiency', 'threshold_db', 'slope_db'})}")
        if row["efficiency"] <= 0 or row.get("slope_db", 1.0) <= 0:
            fail("phy.mcs_table", "efficiency and slope must be positive")
    if p.mcs_table:
        effs = [row["efficiency"] for row in sorted(p.mcs_table, key=lambda x: x["index"])]
        if any(b <= a for a, b in zip(effs, effs[1:])):
            fail("phy.mcs_table", "efficiencies must increase strictly with index")

    if m.tti_ms != 1.0:
        fail("mac.tti_ms", "only 1 ms TTIs are supported")
    for key in ("ue_processing_ms", "frame_alignment_ms", "harq_retx_gap_ms", "enb_processing_ms", "inter_enb_ms"):
        if getattr(m, key) < 0:
            fail(f"mac.{key}", "must be >= 0")
    if not float(m.harq_retx_gap_ms).is_integer():
        fail("mac.harq_retx_gap_ms", "must be a whole number of TTIs")
    if m.packet_lifetime_ms <= 0:
        fail("mac.packet_lifetime_ms", "must be positive")
    if m.max_retx < 0:
        fail("mac.max_retx", "must be >= 0")
    if m.ul_policy != "rr":
        fail("mac.ul_policy", "only 'rr' is supported in uplink")
    if m.dl_policy not in ("rr", "newest_first_then_rr"):
        fail("mac.dl_policy", "must be 'rr' or 'newest_first_then_rr'")
    if m.dl_rr_quantum not in ("prb", "packet"):
        fail("mac.dl_rr_quantum", "must be 'prb' or 'packet'")

    if run.horizon_s < 0 or run.warmup_s < 0:
        fail("run.horizon_s", "must be >= 0")
    if run.downlink_mode not in ("unicast", "multicast"):
        fail("run.downlink_mode", "must be 'unicast' or 'multicast'")
    if run.multicast_mcs_efficiency <= 0:
        fail("run.multicast_mcs_efficiency", "must be positive")
    if run.r_max < 1:
        fail("run.r_max", "must be >= 1")
    if run.cam_period_ms < 1:
        fail("run.cam_period_ms", "must be >= 1")
    if not run.seeds:
        fail("run.seeds", "seed list must not be empty")
    for key in ("bandwidth_ul_mhz", "bandwidth_dl_mhz"):
        try:
            prbs_for_bandwidth(getattr(run, key), run.allow_custom_bw)
        except ConfigError as exc:
            raise ConfigError(exc.code, f"run.{key}: {exc}", _line_of(text, key)) from None


def default_config_toml() -> str:
    data = RunConfig().to_dict()
    return tomli_w.dumps(data)
