"""Link budgets between the macro site and street users.

Angles are in degrees, counter-clockwise from the +x axis.  All powers are
in dBm unless a name ends in ``_mw``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np

from ._rng import substream

if TYPE_CHECKING:
    from .config import RadioConfig
    from .scenario import Geometry, Sector

_EDGE_EPS = 1e-9


@dataclass(frozen=True)
class AntennaPattern:
    beamwidth_deg: float = 65.0
    max_attenuation_db: float = 30.0
    boresight_gain_dbi: float = 14.0

    def gain_db(self, offset_deg):
        off = (np.asarray(offset_deg, dtype=float) + 180.0) % 360.0 - 180.0
        att = np.minimum(12.0 * (off / self.beamwidth_deg) ** 2, self.max_attenuation_db)
        return self.boresight_gain_dbi - att


@dataclass(frozen=True)
class NoiseModel:
    thermal_density_dbm_hz: float = -174.0
    noise_figure_enb_db: float = 5.0
    noise_figure_ue_db: float = 9.0

    def noise_dbm(self, bandwidth_hz: float, direction: str) -> float:
        nf = self.noise_figure_enb_db if direction == "uplink" else self.noise_figure_ue_db
        return self.thermal_density_dbm_hz + 10.0 * math.log10(bandwidth_hz) + nf


@dataclass(frozen=True)
class PathlossModel:
    """Log-distance LOS/NLOS pair, ``slope*log10(d) + intercept + f*log10(fc)``."""

    fc_ghz: float = 0.8
    los_slope: float = 22.0
    los_intercept: float = 28.0
    los_freq_coeff: float = 20.0
    nlos_slope: float = 36.7
    nlos_intercept: float = 22.7
    nlos_freq_coeff: float = 26.0

    def __call__(self, distance_m, los):
        d = np.maximum(np.asarray(distance_m, dtype=float), 1.0)
        lf = math.log10(self.fc_ghz)
        pl_los = self.los_slope * np.log10(d) + self.los_intercept + self.los_freq_coeff * lf
        pl_nlos = self.nlos_slope * np.log10(d) + self.nlos_intercept + self.nlos_freq_coeff * lf
        out = np.where(np.asarray(los, dtype=bool), pl_los, pl_nlos)
        return float(out) if out.ndim == 0 else out


def pathloss_db(distance_m: float, los: bool, fc_ghz: float, model: PathlossModel | None = None) -> float:
    if distance_m < 1.0:
        raise ValueError("distance must be >= 1 m")
    if model is None:
        model = PathlossModel(fc_ghz=fc_ghz)
    elif model.fc_ghz != fc_ghz:
        model = PathlossModel(**{**model.__dict__, "fc_ghz": fc_ghz})
    return model(distance_m, los)


def segments_blocked(a: np.ndarray, b: np.ndarray, rects: np.ndarray) -> np.ndarray:
    """Which segments ``a[i]-b[i]`` cross the interior of which rectangles.

    ``a`` and ``b`` have shape (n, 2); ``rects`` rows are ``x0, y0, x1, y1``.
    Returns an (n, k) boolean array.  Grazing a rectangle edge does not block.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))[:, None, :]
    b = np.atleast_2d(np.asarray(b, dtype=float))[:, None, :]
    rects = np.asarray(rects, dtype=float).reshape(-1, 4)
    if rects.shape[0] == 0:
        return np.zeros((a.shape[0], 0), dtype=bool)
    lo = rects[None, :, :2] + _EDGE_EPS
    hi = rects[None, :, 2:] - _EDGE_EPS
    d = b - a
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t1 = (lo - a) / d
        t2 = (hi - a) / d
    parallel = d == 0
    inside = (a > lo) & (a < hi)
    t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
    t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
    t_enter = np.maximum(t_near.max(axis=2), 0.0)
    t_exit = np.minimum(t_far.min(axis=2), 1.0)
    return t_exit > t_enter


def is_los(point_a, point_b, geometry: Geometry, exclude: Sequence[int] = ()) -> bool:
    rects = geometry.buildings
    if exclude:
        keep = np.ones(len(rects), dtype=bool)
        keep[list(exclude)] = False
        rects = rects[keep]
    hit = segments_blocked(np.asarray(point_a)[None, :2], np.asarray(point_b)[None, :2], rects)
    return not bool(hit.any())


def azimuth_deg(origin, target) -> np.ndarray:
    t = np.asarray(target, dtype=float)
    o = np.asarray(origin, dtype=float)
    return np.degrees(np.arctan2(t[..., 1] - o[1], t[..., 0] - o[0]))


def antenna_gain_db(sector: Sector, target_position):
    az = azimuth_deg(sector.site_position, target_position)
    g = sector.antenna.gain_db(az - sector.boresight_azimuth_deg)
    return float(g) if np.ndim(g) == 0 else g


def shadowing_db(seed: int, link_id: int, los: bool, sigma_los: float = 4.0, sigma_nlos: float = 6.0) -> float:
    """Log-normal shadowing, frozen per (seed, link)."""
    z = substream(seed, "shadowing", link_id).standard_normal()
    return float(z * (sigma_los if los else sigma_nlos))


@dataclass(frozen=True)
class LinkState:
    tx_id: int
    rx_id: int
    distance_m: float
    los: bool
    pathloss_db: float
    shadowing_db: float
    antenna_gain_db: float
    direction: str  # uplink | downlink

    def __post_init__(self):
        if self.distance_m < 1.0:
            object.__setattr__(self, "distance_m", 1.0)
        if self.pathloss_db <= 0:
            raise ValueError("pathloss must be positive")
        if self.direction not in ("uplink", "downlink"):
            raise ValueError(f"bad direction {self.direction!r}")

    @property
    def gain_db(self) -> float:
        return -self.pathloss_db - self.shadowing_db + self.antenna_gain_db


def link_sinr_db(
    link: LinkState,
    tx_power_dbm: float,
    allocated_prbs: int,
    interferer_powers_dbm: Sequence[float] = (),
    noise: NoiseModel = NoiseModel(),
    prb_bandwidth_hz: float = 180e3,
) -> float:
    """SINR over an allocation of ``allocated_prbs`` PRBs.

    ``tx_power_dbm`` is the power radiated over the whole allocation: the full
    UE power in uplink, per-PRB sector power times the PRB count in downlink.
    Interferer powers are received powers over the same PRBs.
    """
    if allocated_prbs < 1:
        raise ValueError("allocated_prbs must be >= 1")
    s_mw = 10.0 ** ((tx_power_dbm + link.gain_db) / 10.0)
    n_mw = 10.0 ** (noise.noise_dbm(prb_bandwidth_hz * allocated_prbs, link.direction) / 10.0)
    i_mw = math.fsum(10.0 ** (p / 10.0) for p in interferer_powers_dbm)
    return 10.0 * math.log10(s_mw / (n_mw + i_mw))


class LinkBudget:
    """Site-to-user link budgets for every user at one set of positions.

    Attributes are arrays indexed by user (and sector where 2D):

    ``los``, ``distance_m``, ``pathloss_db``, ``shadowing_db``
    ``antenna_gain_db`` (n, 3): sector antenna gain towards each user
    ``coupling_db`` (n, 3): net gain user<->sector incl. both antennas
    ``dl_prb_rx_dbm`` (n, 3): received per-PRB power from each sector
    """

    def __init__(self, positions, geometry: Geometry, sectors: Sequence[Sector], cfg: RadioConfig,
                 seed: int, ue_height_m: float = 1.5, shadowing_z: np.ndarray | None = None):
        pos = np.asarray(positions, dtype=float).reshape(-1, 2)
        n = len(pos)
        site = np.asarray(sectors[0].site_position, dtype=float)
        self.model = PathlossModel(cfg.fc_ghz, cfg.los_slope, cfg.los_intercept, cfg.los_freq_coeff,
                                   cfg.nlos_slope, cfg.nlos_intercept, cfg.nlos_freq_coeff)
        self.noise = NoiseModel(cfg.thermal_density_dbm_hz, cfg.noise_figure_enb_db, cfg.noise_figure_ue_db)
        self.prb_bandwidth_hz = cfg.prb_bandwidth_hz

        rects = geometry.buildings
        host = geometry.site_building
        if host is not None:
            rects = np.delete(rects, host, axis=0)
        site_xy = np.broadcast_to(site[:2], pos.shape)
        self.los = ~segments_blocked(site_xy, pos, rects).any(axis=1) if n else np.zeros(0, bool)
        d2 = np.hypot(pos[:, 0] - site[0], pos[:, 1] - site[1])
        self.distance_m = np.maximum(np.hypot(d2, site[2] - ue_height_m), 1.0)
        self.pathloss_db = np.asarray(self.model(self.distance_m, self.los), dtype=float).reshape(n)
        if shadowing_z is None:
            shadowing_z = np.array([substream(seed, "shadowing", i).standard_normal() for i in range(n)])
        sigma = np.where(self.los, cfg.shadowing_los_db, cfg.shadowing_nlos_db)
        self.shadowing_db = np.asarray(shadowing_z, dtype=float) * sigma
        self.antenna_gain_db = np.stack([np.atleast_1d(antenna_gain_db(s, pos)) for s in sectors], axis=1) \
            if n else np.zeros((0, len(sectors)))
        self.coupling_db = (self.antenna_gain_db + cfg.ue_antenna_gain_dbi
                            - self.pathloss_db[:, None] - self.shadowing_db[:, None])
        self.sector_prb_dbm = np.array([s.tx_power_dbm - 10.0 * math.log10(s.prbs) for s in sectors], dtype=float)
        self.dl_prb_rx_dbm = self.sector_prb_dbm[None, :] + self.coupling_db
        self.dl_prb_rx_mw = 10.0 ** (self.dl_prb_rx_dbm / 10.0)
        self.coupling_mw = 10.0 ** (self.coupling_db / 10.0)
        self.dl_noise_prb_mw = 10.0 ** (self.noise.noise_dbm(cfg.prb_bandwidth_hz, "downlink") / 10.0)
        self.ul_noise_prb_mw = 10.0 ** (self.noise.noise_dbm(cfg.prb_bandwidth_hz, "uplink") / 10.0)
        self.ue_tx_power_dbm = cfg.ue_tx_power_dbm

    def link(self, user: int, sector: int, direction: str) -> LinkState:
        return LinkState(
            tx_id=user if direction == "uplink" else -1 - sector,
            rx_id=-1 - sector if direction == "uplink" else user,
            distance_m=float(self.distance_m[user]),
            los=bool(self.los[user]),
            pathloss_db=float(self.pathloss_db[user]),
            shadowing_db=float(self.shadowing_db[user]),
            antenna_gain_db=float(self.coupling_db[user, sector] + self.pathloss_db[user] + self.shadowing_db[user]),
            direction=direction,
        )

    def dl_sinr_db(self, user: int, sector: int, neighbour_load: float = 0.0) -> float:
        """Per-PRB downlink SINR with neighbour sectors busy on a ``neighbour_load`` share of PRBs."""
        rx = self.dl_prb_rx_mw[user]
        interf = (rx.sum() - rx[sector]) * neighbour_load
        return 10.0 * math.log10(rx[sector] / (self.dl_noise_prb_mw + interf))

    def ul_snr_db(self, user: int, sector: int, prbs: int) -> float:
        """Uplink SNR with the full UE power spread over ``prbs`` PRBs."""
        s = self.ue_tx_power_dbm + self.coupling_db[user, sector]
        n = 10.0 * math.log10(self.ul_noise_prb_mw * prbs)
        return float(s - n)
