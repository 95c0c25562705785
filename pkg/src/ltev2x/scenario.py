"""Urban grid, macro site, street users and their mobility."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._rng import substream
from .config import ConfigError, RunConfig, ScenarioConfig
from .radio import AntennaPattern, LinkBudget

VEHICLE = "vehicle"
VRU = "vru"

KMH = 1.0 / 3.6  # m/s per km/h


class ScenarioError(Exception):
    pass


@dataclass(frozen=True)
class Geometry:
    """Block grid: ``rows x cols`` block slots separated by streets.

    One slot is a park (open space, walkable), the others hold buildings.
    Coordinates start at the lower-left corner of the extent.
    """

    width: float
    height: float
    buildings: np.ndarray  # (k, 4) rows x0, y0, x1, y1
    park: tuple[float, float, float, float] | None
    site_building: int | None  # index of the building carrying the site
    site_xy: tuple[float, float]
    x_streets: tuple[tuple[float, float], ...]  # vertical street bands (x ranges)
    y_streets: tuple[tuple[float, float], ...]  # horizontal street bands (y ranges)
    building_height_m: float = 24.0

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (0.0, 0.0, self.width, self.height)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def building_area(self) -> float:
        b = self.buildings
        return float(((b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])).sum()) if len(b) else 0.0

    @property
    def street_area(self) -> float:
        return self.area - self.building_area

    def in_extent(self, pts) -> np.ndarray:
        p = np.atleast_2d(pts)
        return (p[:, 0] >= 0) & (p[:, 0] <= self.width) & (p[:, 1] >= 0) & (p[:, 1] <= self.height)

    def in_building(self, pts) -> np.ndarray:
        p = np.atleast_2d(pts)
        if len(self.buildings) == 0:
            return np.zeros(len(p), dtype=bool)
        b = self.buildings
        x, y = p[:, 0:1], p[:, 1:2]
        inside = (x > b[:, 0]) & (x < b[:, 2]) & (y > b[:, 1]) & (y < b[:, 3])
        return inside.any(axis=1)

    def in_street(self, pts) -> np.ndarray:
        return self.in_extent(pts) & ~self.in_building(pts)

    def _in_bands(self, coord: np.ndarray, bands) -> np.ndarray:
        out = np.zeros(len(coord), dtype=bool)
        for lo, hi in bands:
            out |= (coord >= lo) & (coord <= hi)
        return out

    def in_park(self, pts) -> np.ndarray:
        p = np.atleast_2d(pts)
        if self.park is None:
            return np.zeros(len(p), dtype=bool)
        x0, y0, x1, y1 = self.park
        return (p[:, 0] >= x0) & (p[:, 0] <= x1) & (p[:, 1] >= y0) & (p[:, 1] <= y1)

    def street_axes(self, pts) -> tuple[np.ndarray, np.ndarray]:
        """(may move along x, may move along y) for each street point."""
        p = np.atleast_2d(pts)
        park = self.in_park(p)
        along_x = self._in_bands(p[:, 1], self.y_streets) | park
        along_y = self._in_bands(p[:, 0], self.x_streets) | park
        return along_x, along_y

    def in_intersection(self, pts) -> np.ndarray:
        p = np.atleast_2d(pts)
        return self._in_bands(p[:, 0], self.x_streets) & self._in_bands(p[:, 1], self.y_streets)

    def sample_street(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Uniform points over the street region (rejection sampling)."""
        if n == 0:
            return np.zeros((0, 2))
        if self.street_area <= 0:
            raise ScenarioError("street region is empty")
        out = []
        got = 0
        frac = self.street_area / self.area
        while got < n:
            k = max(16, int((n - got) / frac * 1.2))
            cand = rng.uniform((0.0, 0.0), (self.width, self.height), size=(k, 2))
            cand = cand[self.in_street(cand)]
            out.append(cand)
            got += len(cand)
        return np.concatenate(out)[:n]


def build_geometry(cfg: ScenarioConfig) -> Geometry:
    if cfg.rows < 1 or cfg.cols < 1 or cfg.block_m <= 0 or cfg.street_m <= 0:
        raise ConfigError(ConfigError.RANGE, "grid dimensions must be positive")
    pitch = cfg.block_m + cfg.street_m
    width = cfg.cols * cfg.block_m + (cfg.cols - 1) * cfg.street_m
    height = cfg.rows * cfg.block_m + (cfg.rows - 1) * cfg.street_m
    buildings = []
    park = None
    site_building = None
    for r in range(cfg.rows):
        for c in range(cfg.cols):
            rect = (c * pitch, r * pitch, c * pitch + cfg.block_m, r * pitch + cfg.block_m)
            if (r, c) == (cfg.park_row, cfg.park_col):
                park = rect
                continue
            if (r, c) == (cfg.site_row, cfg.site_col):
                site_building = len(buildings)
            buildings.append(rect)
    site_xy = ((cfg.site_col + 0.5) * pitch - cfg.street_m / 2, (cfg.site_row + 0.5) * pitch - cfg.street_m / 2)
    x_streets = tuple((c * pitch + cfg.block_m, (c + 1) * pitch) for c in range(cfg.cols - 1))
    y_streets = tuple((r * pitch + cfg.block_m, (r + 1) * pitch) for r in range(cfg.rows - 1))
    return Geometry(
        width=width,
        height=height,
        buildings=np.array(buildings, dtype=float).reshape(-1, 4),
        park=park,
        site_building=site_building,
        site_xy=site_xy,
        x_streets=x_streets,
        y_streets=y_streets,
        building_height_m=cfg.building_height_m,
    )


@dataclass(frozen=True)
class Sector:
    site_position: tuple[float, float, float]
    boresight_azimuth_deg: float
    tx_power_dbm: float  # total over the band
    prbs: int
    antenna: AntennaPattern = AntennaPattern()


def build_sectors(geometry: Geometry, cfg: RunConfig) -> list[Sector]:
    s, r = cfg.scenario, cfg.radio
    z = (s.building_height_m if geometry.site_building is not None else 0.0) + s.mast_height_m
    prbs = cfg.prbs_dl
    power = r.sector_power_dbm_per_10mhz + 10.0 * math.log10(cfg.run.bandwidth_dl_mhz / 10.0)
    antenna = AntennaPattern(r.beamwidth_deg, r.max_attenuation_db, r.boresight_gain_dbi)
    return [Sector((*geometry.site_xy, z), az, power, prbs, antenna) for az in s.sector_azimuths_deg]


@dataclass(frozen=True)
class Participant:
    id: int
    kind: str
    position: tuple[float, float]
    velocity: tuple[float, float] = (0.0, 0.0)  # m/s
    tx_power_dbm: float | None = None
    serving_sector: int = -1

    @property
    def is_vehicle(self) -> bool:
        return self.kind == VEHICLE

    @property
    def speed_kmh(self) -> float:
        return math.hypot(*self.velocity) / KMH


def _draw_directions(geometry: Geometry, pts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Unit vectors along a permitted street axis, uniformly among permitted ones."""
    along_x, along_y = geometry.street_axes(pts)
    dirs = np.array([(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)])
    ok = np.stack([along_x, along_x, along_y, along_y], axis=1)
    ok[~ok.any(axis=1)] = True
    u = rng.random(len(pts))
    counts = ok.sum(axis=1)
    pick = np.floor(u * counts).astype(int)
    # index of the pick-th permitted direction per row
    csum = np.cumsum(ok, axis=1)
    choice = (csum > pick[:, None]).argmax(axis=1)
    return dirs[choice]


def drop_participants(
    geometry: Geometry,
    density_per_km2: float,
    vehicle_fraction: float,
    rng: np.random.Generator,
    *,
    count_mode: str = "fixed",
    vehicle_max_kmh: float = 50.0,
    vru_max_kmh: float = 5.0,
    vehicle_tx_power_dbm: float = 24.0,
) -> list[Participant]:
    if density_per_km2 < 0:
        raise ConfigError(ConfigError.RANGE, "density must be >= 0")
    if not 0.0 <= vehicle_fraction <= 1.0:
        raise ConfigError(ConfigError.RANGE, "vehicle_fraction must lie in [0, 1]")
    mean = density_per_km2 * geometry.area / 1e6
    n = int(rng.poisson(mean)) if count_mode == "poisson" else int(round(mean))
    if n == 0:
        return []
    if geometry.street_area <= 0:
        raise ScenarioError("no street area to drop users on")
    pos = geometry.sample_street(n, rng)
    vehicle = rng.random(n) < vehicle_fraction
    vmax = np.where(vehicle, vehicle_max_kmh, vru_max_kmh) * KMH
    speed = rng.uniform(0.0, 1.0, n) * vmax
    vel = _draw_directions(geometry, pos, rng) * speed[:, None]
    return [
        Participant(
            id=i,
            kind=VEHICLE if vehicle[i] else VRU,
            position=(float(pos[i, 0]), float(pos[i, 1])),
            velocity=(float(vel[i, 0]), float(vel[i, 1])),
            tx_power_dbm=vehicle_tx_power_dbm if vehicle[i] else None,
        )
        for i in range(n)
    ]


def attach_to_sector(participant: Participant, sectors: Sequence[Sector],
                     channel: Callable[[int, tuple[float, float]], float]) -> int:
    """Serving sector = strongest received downlink power; ties go to the lowest id."""
    powers = [channel(k, participant.position) for k in range(len(sectors))]
    best = max(powers)
    return powers.index(best)


def receiver_set(transmitter: Participant, participants: Sequence[Participant], radius_m: float) -> list[Participant]:
    if radius_m <= 0:
        raise ValueError("radius must be positive")
    tx, ty = transmitter.position
    return [p for p in participants
            if p.id != transmitter.id and math.hypot(p.position[0] - tx, p.position[1] - ty) <= radius_m]


def step_mobility(participants: Sequence[Participant], dt_s: float, geometry: Geometry,
                  rng: np.random.Generator | None = None, max_substep_m: float = 0.5) -> list[Participant]:
    """Advance users along streets.

    Direction is re-drawn among permitted street axes when a user would leave
    the street region or enters an intersection.
    """
    if dt_s < 0:
        raise ValueError("dt must be >= 0")
    if dt_s == 0 or not participants:
        return list(participants)
    if rng is None:
        rng = np.random.default_rng(0)
    pos = np.array([p.position for p in participants], dtype=float)
    vel = np.array([p.velocity for p in participants], dtype=float)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    vmax = float(speed.max())
    nsub = max(1, math.ceil(vmax * dt_s / max_substep_m))
    h = dt_s / nsub
    for _ in range(nsub):
        prop = pos + vel * h
        ok = geometry.in_street(prop)
        redraw = ~ok | (geometry.in_intersection(prop) & ~geometry.in_intersection(pos))
        redraw &= speed > 0
        if redraw.any():
            idx = np.flatnonzero(redraw)
            vel[idx] = _draw_directions(geometry, pos[idx], rng) * speed[idx, None]
            prop[idx] = pos[idx] + vel[idx] * h
            ok[idx] = geometry.in_street(prop[idx])
        pos = np.where(ok[:, None], prop, pos)
    return [
        dataclasses.replace(p, position=(float(pos[i, 0]), float(pos[i, 1])),
                            velocity=(float(vel[i, 0]), float(vel[i, 1])))
        for i, p in enumerate(participants)
    ]


@dataclass
class Scenario:
    """An immutable drop: geometry, sectors, users and per-epoch link budgets.

    Without mobility there is a single epoch.  With mobility, epoch ``e``
    covers TTIs ``[e * epoch_ms, (e + 1) * epoch_ms)``.
    """

    config: RunConfig
    seed: int
    geometry: Geometry
    sectors: list[Sector]
    participants: list[Participant]
    positions: np.ndarray  # (epochs, n, 2)
    serving: np.ndarray  # (epochs, n)
    budgets: list[LinkBudget]
    epoch_ms: int
    is_vehicle: np.ndarray = field(init=False)
    _dist: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        self.is_vehicle = np.array([p.is_vehicle for p in self.participants], dtype=bool)
        self._dist = []
        for pos in self.positions:
            diff = pos[:, None, :] - pos[None, :, :]
            self._dist.append(np.hypot(diff[..., 0], diff[..., 1]))

    @property
    def n(self) -> int:
        return len(self.participants)

    def epoch(self, tti: int) -> int:
        return min(tti // self.epoch_ms, len(self.budgets) - 1)

    def budget(self, tti: int) -> LinkBudget:
        return self.budgets[self.epoch(tti)]

    def receivers(self, tx: int, tti: int, radius_m: float | None = None) -> np.ndarray:
        r = self.config.scenario.radius_m if radius_m is None else radius_m
        d = self._dist[self.epoch(tti)][tx]
        hit = d <= r
        hit[tx] = False
        return np.flatnonzero(hit)

    def serving_sector(self, user: int, tti: int) -> int:
        return int(self.serving[self.epoch(tti), user])


def _attach_all(budget: LinkBudget) -> np.ndarray:
    # argmax picks the first maximum, i.e. the lowest sector id on ties
    return np.argmax(budget.dl_prb_rx_dbm, axis=1) if len(budget.dl_prb_rx_dbm) else np.zeros(0, int)


def build_scenario(cfg: RunConfig, seed: int, participants: Sequence[Participant] | None = None,
                   duration_ms: int | None = None) -> Scenario:
    """Drop users (unless ``participants`` is given) and freeze link budgets."""
    geometry = build_geometry(cfg.scenario)
    sectors = build_sectors(geometry, cfg)
    s = cfg.scenario
    if participants is None:
        participants = drop_participants(
            geometry, s.density_per_km2, s.vehicle_fraction, substream(seed, "drop"),
            count_mode=s.count_mode, vehicle_max_kmh=s.vehicle_max_kmh, vru_max_kmh=s.vru_max_kmh,
            vehicle_tx_power_dbm=cfg.radio.ue_tx_power_dbm,
        )
    participants = list(participants)
    n = len(participants)
    shadow_z = np.array([substream(seed, "shadowing", p.id).standard_normal() for p in participants])

    if s.mobility and duration_ms:
        n_epochs = duration_ms // s.mobility_update_ms + 1
    else:
        n_epochs = 1
    epoch_ms = s.mobility_update_ms if s.mobility else 1 << 62
    mob_rng = substream(seed, "mobility")
    snapshots = [participants]
    for _ in range(n_epochs - 1):
        snapshots.append(step_mobility(snapshots[-1], s.mobility_update_ms / 1000.0, geometry, mob_rng))

    budgets, serving, positions = [], [], []
    for snap in snapshots:
        pos = np.array([p.position for p in snap], dtype=float).reshape(n, 2)
        b = LinkBudget(pos, geometry, sectors, cfg.radio, seed, s.ue_height_m, shadowing_z=shadow_z)
        budgets.append(b)
        serving.append(_attach_all(b))
        positions.append(pos)
    participants = [dataclasses.replace(p, serving_sector=int(serving[0][i])) for i, p in enumerate(participants)]
    return Scenario(cfg, seed, geometry, sectors, participants, np.array(positions).reshape(n_epochs, n, 2),
                    np.array(serving).reshape(n_epochs, n), budgets, epoch_ms)


def dump_scenario_csv(scenario: Scenario, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "kind", "x", "y", "sector"])
        for p in scenario.participants:
            w.writerow([p.id, p.kind, f"{p.position[0]:.3f}", f"{p.position[1]:.3f}", p.serving_sector])
