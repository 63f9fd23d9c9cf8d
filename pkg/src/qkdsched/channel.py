"""Per-link channel estimates.

Turns geometry into the numbers the schedulers care about: expected photon
successes per slot, QBER, secret-key rate and the resulting secret-key bits
for every visible (slot, satellite, station) triple. The estimate table
built here is the single input artifact every scheduler and baseline
consumes, so filtering or editing it changes all of them consistently.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import NOISE_BUCKETS, Scenario
from .orbit import VisibilityTable


def binary_entropy(p):
    """Shannon entropy of a Bernoulli(p) source, bits. h(0) = h(1) = 0."""
    p = np.asarray(p, dtype=float)
    if np.any((p < 0.0) | (p > 1.0)):
        raise ValueError("binary_entropy defined on [0, 1]")
    out = np.zeros_like(p)
    inner = (p > 0.0) & (p < 1.0)
    q = p[inner]
    out[inner] = -q * np.log2(q) - (1.0 - q) * np.log2(1.0 - q)
    return out if out.ndim else float(out)


def key_rate(qber):
    """Asymptotic secret-key fraction 1 - 2 h(E), clamped at zero.

    Crosses zero a little above E = 0.11; beyond that the link yields
    nothing regardless of brightness.
    """
    e = np.asarray(qber, dtype=float)
    if np.any((e < 0.0) | (e > 0.5)):
        raise ValueError("qber out of [0, 0.5]")
    r = np.maximum(0.0, 1.0 - 2.0 * binary_entropy(e))
    return r if r.ndim else float(r)


def atmospheric_transmissivity(zenith_transmissivity, elevation_deg):
    """Zenith transmissivity raised to the cosecant of the elevation.

    Models the air-mass increase at slant angles; defined for elevation in
    (0, 90] degrees only.
    """
    z = np.asarray(zenith_transmissivity, dtype=float)
    el = np.asarray(elevation_deg, dtype=float)
    if np.any((z <= 0.0) | (z > 1.0)):
        raise ValueError("zenith transmissivity out of (0, 1]")
    if np.any((el <= 0.0) | (el > 90.0)):
        raise ValueError("elevation out of (0, 90] degrees")
    out = z ** (1.0 / np.sin(np.radians(el)))
    return out if out.ndim else float(out)


def far_field_distance_km(receiver_aperture_m: float,
                          divergence_half_angle_urad: float) -> float:
    """Range below which the beam still fits inside the receiver aperture."""
    if receiver_aperture_m <= 0 or divergence_half_angle_urad <= 0:
        raise ValueError("aperture and divergence must be positive")
    theta = divergence_half_angle_urad * 1e-6
    return receiver_aperture_m / (2.0 * theta) / 1000.0


def free_space_transmissivity(distance_km, receiver_aperture_m: float,
                              divergence_half_angle_urad: float):
    """Diffraction spill: (d0 / D)^2 capped at 1 inside the far-field range."""
    d0 = far_field_distance_km(receiver_aperture_m, divergence_half_angle_urad)
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0.0):
        raise ValueError("distance must be positive")
    out = np.minimum(1.0, (d0 / d) ** 2)
    return out if out.ndim else float(out)


def expected_successes(transmissivity, slot_duration_s: float, source_rate_hz: float,
                       detector_efficiency: float, sifting_factor: float):
    """Sifted detections per slot for a given end-to-end transmissivity."""
    eta = np.asarray(transmissivity, dtype=float)
    out = source_rate_hz * slot_duration_s * eta * detector_efficiency * sifting_factor
    return out if out.ndim else float(out)


def qber_estimate(signal_prob, noise_prob, intrinsic_error_rate: float):
    """Intrinsic error plus the half-random noise fraction, capped at 1/2.

    ``signal_prob`` and ``noise_prob`` are per-detection-window click
    probabilities; noise clicks carry no correlation so half of them land
    in the wrong bucket. A dead window pair (both zero) contributes only
    the intrinsic error.
    """
    s = np.asarray(signal_prob, dtype=float)
    n = np.asarray(noise_prob, dtype=float)
    denom = s + n
    frac = np.divide(n, denom, out=np.zeros_like(denom), where=denom > 0)
    e = np.minimum(0.5, intrinsic_error_rate + 0.5 * frac)
    return e if e.ndim else float(e)


@dataclass
class EstimateTable:
    """Per-triple channel estimates, sorted by (slot, satellite, station).

    Index arrays are positional (row in the scenario's station tuple /
    satellite tuple). ``key_bits`` already folds in cloud cover:
    (1 - cloud) * successes * rate. ``transmitters`` / ``receivers`` carry
    the per-slot link capacities the schedulers must respect.
    """

    n_slots: int
    n_sats: int
    n_stations: int
    slot: np.ndarray
    sat: np.ndarray
    station: np.ndarray
    transmissivity: np.ndarray
    successes: np.ndarray
    qber: np.ndarray
    rate: np.ndarray
    cloud: np.ndarray
    key_bits: np.ndarray
    transmitters: np.ndarray = field(default=None)
    receivers: np.ndarray = field(default=None)
    sat_ids: np.ndarray = field(default=None)
    station_ids: np.ndarray = field(default=None)
    _bounds: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.transmitters is None:
            self.transmitters = np.ones(self.n_sats, dtype=np.int64)
        if self.receivers is None:
            self.receivers = np.ones(self.n_stations, dtype=np.int64)
        if self.sat_ids is None:
            self.sat_ids = np.arange(self.n_sats, dtype=np.int64)
        if self.station_ids is None:
            self.station_ids = np.arange(self.n_stations, dtype=np.int64)
        self._reindex()

    def _reindex(self):
        order = np.lexsort((self.station, self.sat, self.slot))
        for name in ("slot", "sat", "station", "transmissivity", "successes",
                     "qber", "rate", "cloud", "key_bits"):
            setattr(self, name, getattr(self, name)[order])
        self._bounds = np.searchsorted(self.slot, np.arange(self.n_slots + 1))

    def __len__(self):
        return len(self.slot)

    def slot_rows(self, t: int) -> np.ndarray:
        """Row indices of slot t (possibly empty)."""
        return np.arange(self._bounds[t], self._bounds[t + 1])

    def occupied_slots(self) -> np.ndarray:
        return np.unique(self.slot)

    @property
    def normalizer(self) -> float:
        """Largest per-slot key-bit figure; 1.0 for an all-zero table."""
        if len(self.key_bits) == 0:
            return 1.0
        m = float(self.key_bits.max())
        return m if m > 0 else 1.0

    def tau(self) -> np.ndarray:
        """Per-satellite count of slots with at least one usable link."""
        out = np.zeros(self.n_sats, dtype=np.int64)
        if len(self.slot):
            key = self.sat * np.int64(self.n_slots) + self.slot
            uniq = np.unique(key)
            sats, counts = np.unique(uniq // self.n_slots, return_counts=True)
            out[sats] = counts
        return out

    def take(self, mask: np.ndarray) -> "EstimateTable":
        """New table with the masked-in rows only."""
        return EstimateTable(
            n_slots=self.n_slots, n_sats=self.n_sats, n_stations=self.n_stations,
            slot=self.slot[mask], sat=self.sat[mask], station=self.station[mask],
            transmissivity=self.transmissivity[mask], successes=self.successes[mask],
            qber=self.qber[mask], rate=self.rate[mask], cloud=self.cloud[mask],
            key_bits=self.key_bits[mask],
            transmitters=self.transmitters.copy(), receivers=self.receivers.copy(),
            sat_ids=self.sat_ids.copy(), station_ids=self.station_ids.copy(),
        )


def noise_bucket(slot: np.ndarray, slot_duration_s: float) -> np.ndarray:
    """Bucket start hour (0/6/12/18) for each slot, wrapping daily."""
    hour = (np.asarray(slot, dtype=np.int64) * slot_duration_s // 3600).astype(np.int64) % 24
    return (hour // 6) * 6


def build_estimates(scenario: Scenario, visibility: VisibilityTable,
                    cloud_matrix: np.ndarray = None) -> EstimateTable:
    """Estimate every visible triple of the scenario.

    ``cloud_matrix`` is an optional (n_stations, n_slots) array of cloud
    cover in [0, 1]; omitted means clear sky.
    """
    spec, ch, time = scenario.sat_spec, scenario.channel, scenario.time
    season = time.season()

    elev = visibility.elevation_deg
    dist = visibility.distance_km
    g = visibility.station
    s = visibility.sat
    t = visibility.slot

    zenith = np.array([st.zenith_transmissivity[season] for st in scenario.stations])
    eta_atm = np.ones_like(elev)
    if len(elev):
        eta_atm = zenith[g] ** (1.0 / np.sin(np.radians(elev)))
    eta_fs = free_space_transmissivity(dist, ch.receiver_aperture_m,
                                       ch.transmit_divergence_urad) if len(dist) \
        else np.zeros(0)
    eta = eta_fs * eta_atm * spec.optics_transmissivity

    lam = expected_successes(eta, time.slot_duration_s, spec.source_rate_hz,
                             ch.detector_efficiency, ch.sifting_factor)

    bg = np.array([[st.background_noise[b] for b in NOISE_BUCKETS]
                   for st in scenario.stations])
    bucket_idx = noise_bucket(t, time.slot_duration_s) // 6
    p_noise = bg[g, bucket_idx] + spec.dark_count_prob if len(t) else np.zeros(0)
    p_signal = eta * ch.detector_efficiency * ch.sifting_factor
    e = qber_estimate(p_signal, p_noise, ch.intrinsic_error_rate) if len(t) \
        else np.zeros(0)
    r = key_rate(e)

    if cloud_matrix is not None:
        cloud_matrix = np.asarray(cloud_matrix, dtype=float)
        if cloud_matrix.shape != (scenario.n_stations, time.slot_count):
            raise ValueError("cloud_matrix must be (n_stations, n_slots)")
        c = cloud_matrix[g, t] if len(t) else np.zeros(0)
    else:
        c = np.zeros(len(t))

    bits = (1.0 - c) * lam * r

    return EstimateTable(
        n_slots=time.slot_count, n_sats=scenario.n_sats,
        n_stations=scenario.n_stations,
        slot=t.copy(), sat=s.copy(), station=g.copy(),
        transmissivity=eta, successes=lam, qber=e, rate=r, cloud=c, key_bits=bits,
        transmitters=np.full(scenario.n_sats, spec.transmitters, dtype=np.int64),
        receivers=np.array([st.receivers for st in scenario.stations], dtype=np.int64),
        sat_ids=np.array([sat.sat_id for sat in scenario.satellites], dtype=np.int64),
        station_ids=np.array([st.station_id for st in scenario.stations],
                             dtype=np.int64),
    )


_CSV_HEADER = ["slot", "satellite_id", "station_id", "transmissivity",
               "successes", "qber", "key_rate", "cloud", "key_bits"]


def write_estimates_csv(table: EstimateTable, path) -> None:
    """One row per estimated triple, raw ids, deterministic order."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_CSV_HEADER)
        for i in range(len(table)):
            w.writerow([
                int(table.slot[i]),
                int(table.sat_ids[table.sat[i]]),
                int(table.station_ids[table.station[i]]),
                repr(float(table.transmissivity[i])),
                repr(float(table.successes[i])),
                repr(float(table.qber[i])),
                repr(float(table.rate[i])),
                repr(float(table.cloud[i])),
                repr(float(table.key_bits[i])),
            ])


def read_estimates_csv(path, transmitters: np.ndarray = None,
                       receivers: np.ndarray = None) -> EstimateTable:
    """Rebuild an estimate table written by :func:`write_estimates_csv`.

    Ids are remapped to dense positional indices in sorted-id order; link
    capacities default to one each unless supplied.
    """
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != _CSV_HEADER:
            raise ValueError(f"{path}: expected columns {_CSV_HEADER}")
        for row in reader:
            rows.append((int(row["slot"]), int(row["satellite_id"]),
                         int(row["station_id"]), float(row["transmissivity"]),
                         float(row["successes"]), float(row["qber"]),
                         float(row["key_rate"]), float(row["cloud"]),
                         float(row["key_bits"])))
    if not rows:
        raise ValueError(f"{path}: empty estimate table")
    arr = np.array(rows, dtype=float)
    sat_ids = np.unique(arr[:, 1].astype(np.int64))
    station_ids = np.unique(arr[:, 2].astype(np.int64))
    sat_idx = np.searchsorted(sat_ids, arr[:, 1].astype(np.int64))
    g_idx = np.searchsorted(station_ids, arr[:, 2].astype(np.int64))
    n_slots = int(arr[:, 0].max()) + 1
    return EstimateTable(
        n_slots=n_slots, n_sats=len(sat_ids), n_stations=len(station_ids),
        slot=arr[:, 0].astype(np.int64), sat=sat_idx, station=g_idx,
        transmissivity=arr[:, 3], successes=arr[:, 4], qber=arr[:, 5],
        rate=arr[:, 6], cloud=arr[:, 7], key_bits=arr[:, 8],
        transmitters=transmitters, receivers=receivers,
        sat_ids=sat_ids, station_ids=station_ids,
    )
