"""Orbit propagation and line-of-sight geometry.

Satellites fly circular polar orbits around a spherical Earth; ground
stations ride the rotating surface at the sidereal rate. Geometry is
evaluated at slot starts. The visibility table is the sparse list of
(slot, satellite, station) triples whose elevation clears the scenario
threshold, with the elevation and slant range attached.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario

EARTH_RADIUS_KM = 6371.0
MU_KM3_S2 = 398600.4418
SIDEREAL_DAY_S = 86164.0905
EARTH_ROT_RAD_S = 2.0 * math.pi / SIDEREAL_DAY_S

# slots per numpy chunk when scanning a full day; keeps the (chunk, S, G)
# work arrays around a hundred MB for the 400-satellite case
_CHUNK = 2048


def orbital_angular_rate(altitude_km: float) -> float:
    """Mean motion of a circular orbit, rad/s."""
    r = EARTH_RADIUS_KM + altitude_km
    return math.sqrt(MU_KM3_S2 / r**3)


def orbital_period(altitude_km: float) -> float:
    return 2.0 * math.pi / orbital_angular_rate(altitude_km)


def propagate(raan_deg: float, anomaly_deg: float, altitude_km: float,
              t: float) -> np.ndarray:
    """Inertial position (km) of a polar-orbit satellite at time t seconds.

    The orbit plane contains the Earth's axis; the ascending node lies in
    the equatorial plane at right ascension ``raan_deg``. At anomaly 0 the
    satellite crosses the node heading north.
    """
    r = EARTH_RADIUS_KM + altitude_km
    nu = math.radians(anomaly_deg) + orbital_angular_rate(altitude_km) * t
    raan = math.radians(raan_deg)
    node = np.array([math.cos(raan), math.sin(raan), 0.0])
    pole = np.array([0.0, 0.0, 1.0])
    return r * (math.cos(nu) * node + math.sin(nu) * pole)


def station_position(latitude_deg: float, longitude_deg: float, t: float) -> np.ndarray:
    """Inertial position (km) of a ground station at time t seconds.

    At t = 0 the rotating frame coincides with the inertial one, so a
    station's right ascension equals its longitude.
    """
    lat = math.radians(latitude_deg)
    lon = math.radians(longitude_deg) + EARTH_ROT_RAD_S * t
    return EARTH_RADIUS_KM * np.array([
        math.cos(lat) * math.cos(lon),
        math.cos(lat) * math.sin(lon),
        math.sin(lat),
    ])


def elevation_distance(sat_pos: np.ndarray, station_pos: np.ndarray) -> tuple:
    """Elevation angle (deg) and slant range (km) from station to satellite."""
    d = np.asarray(sat_pos, dtype=float) - np.asarray(station_pos, dtype=float)
    dist = float(np.linalg.norm(d))
    if dist == 0.0:
        raise ValueError("satellite and station coincide")
    up = np.asarray(station_pos, dtype=float)
    up = up / np.linalg.norm(up)
    elev = math.degrees(math.asin(float(np.dot(d, up)) / dist))
    return elev, dist


@dataclass
class VisibilityTable:
    """Sparse above-threshold geometry, sorted by (slot, satellite, station).

    ``slot``/``sat``/``station`` hold positional indices (row i of
    ``scenario.stations``), not raw ids. ``tau`` counts, per satellite, the
    slots in which it sees at least one station (the usable-slot set used
    to normalise per-satellite rates).
    """

    n_slots: int
    n_sats: int
    n_stations: int
    slot: np.ndarray
    sat: np.ndarray
    station: np.ndarray
    elevation_deg: np.ndarray
    distance_km: np.ndarray
    tau: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.tau is None:
            self.tau = np.zeros(self.n_sats, dtype=np.int64)
            if len(self.slot):
                key = self.sat.astype(np.int64) * self.n_slots + self.slot
                per_sat = np.unique(key) // self.n_slots
                sats, counts = np.unique(per_sat, return_counts=True)
                self.tau[sats] = counts

    def __len__(self):
        return len(self.slot)


def _dot_threshold(altitude_km: float, min_elevation_deg: float) -> float:
    """Cutoff on (satellite . station) above which elevation >= threshold.

    For fixed orbit radius r and station radius Re the elevation is a
    monotone function of the inertial dot product, so the cone test reduces
    to one comparison per pair.
    """
    r = EARTH_RADIUS_KM + altitude_km
    s = math.sin(math.radians(min_elevation_deg))
    re = EARTH_RADIUS_KM
    u = re * s * (math.sqrt(re * re * s * s + r * r - re * re) - re * s)
    return re * re + u


def build_visibility(scenario: Scenario) -> VisibilityTable:
    """Scan every slot and return the above-threshold triples."""
    time = scenario.time
    alt = scenario.sat_spec.altitude_km
    r = EARTH_RADIUS_KM + alt
    omega = orbital_angular_rate(alt)
    n_slots, n_sats, n_g = time.slot_count, scenario.n_sats, scenario.n_stations

    raan = np.radians([s.raan_deg for s in scenario.satellites])
    nu0 = np.radians([s.anomaly_deg for s in scenario.satellites])
    node = np.stack([np.cos(raan), np.sin(raan), np.zeros_like(raan)], axis=1)  # (S, 3)
    lat = np.radians([g.latitude_deg for g in scenario.stations])
    lon0 = np.radians([g.longitude_deg for g in scenario.stations])

    cutoff = _dot_threshold(alt, scenario.min_elevation_deg)
    sin_thresh = math.sin(math.radians(scenario.min_elevation_deg))

    out_slot, out_sat, out_g, out_elev, out_dist = [], [], [], [], []
    for start in range(0, n_slots, _CHUNK):
        stop = min(start + _CHUNK, n_slots)
        t = np.arange(start, stop, dtype=float) * time.slot_duration_s  # (T,)

        nu = nu0[:, None] + omega * t[None, :]                    # (S, T)
        sat_pos = (np.cos(nu)[..., None] * node[:, None, :]
                   + np.sin(nu)[..., None] * np.array([0.0, 0.0, 1.0]))
        sat_pos *= r                                              # (S, T, 3)

        lon = lon0[:, None] + EARTH_ROT_RAD_S * t[None, :]        # (G, T)
        st_pos = np.stack([
            np.cos(lat)[:, None] * np.cos(lon),
            np.cos(lat)[:, None] * np.sin(lon),
            np.broadcast_to(np.sin(lat)[:, None], lon.shape),
        ], axis=2) * EARTH_RADIUS_KM                              # (G, T, 3)

        # batched (S x 3) @ (3 x G) per slot
        dots = np.matmul(sat_pos.transpose(1, 0, 2), st_pos.transpose(1, 2, 0))  # (T, S, G)
        ti, si, gi = np.nonzero(dots >= cutoff)
        if len(ti) == 0:
            continue
        d = dots[ti, si, gi]
        dist = np.sqrt(r * r + EARTH_RADIUS_KM**2 - 2.0 * d)
        sin_el = (d - EARTH_RADIUS_KM**2) / (dist * EARTH_RADIUS_KM)
        elev = np.degrees(np.arcsin(np.clip(sin_el, -1.0, 1.0)))
        # the squared cutoff can admit values a hair under threshold
        keep = sin_el >= sin_thresh - 1e-12
        out_slot.append((ti + start)[keep])
        out_sat.append(si[keep])
        out_g.append(gi[keep])
        out_elev.append(elev[keep])
        out_dist.append(dist[keep])

    if out_slot:
        slot = np.concatenate(out_slot).astype(np.int64)
        sat = np.concatenate(out_sat).astype(np.int64)
        station = np.concatenate(out_g).astype(np.int64)
        elev = np.concatenate(out_elev)
        dist = np.concatenate(out_dist)
        order = np.lexsort((station, sat, slot))
        slot, sat, station = slot[order], sat[order], station[order]
        elev, dist = elev[order], dist[order]
    else:
        slot = sat = station = np.zeros(0, dtype=np.int64)
        elev = dist = np.zeros(0)

    return VisibilityTable(
        n_slots=n_slots, n_sats=n_sats, n_stations=n_g,
        slot=slot, sat=sat, station=station,
        elevation_deg=elev, distance_km=dist,
    )
