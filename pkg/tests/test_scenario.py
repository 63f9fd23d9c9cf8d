import datetime as dt

import pytest

from qkdsched import scenario as sc


def test_polar_constellation_shape():
    sats = sc.build_polar_constellation(20, 20, 500.0)
    assert len(sats) == 400
    assert sats[0].raan_deg == 0.0 and sats[0].anomaly_deg == 0.0
    # ring planes 9 degrees apart over a half turn, in-ring phase 18 degrees
    assert sats[20].raan_deg == pytest.approx(9.0)
    assert sats[1].anomaly_deg == pytest.approx(18.0)
    assert sats[399].sat_id == 399
    assert max(s.raan_deg for s in sats) < 180.0


def test_polar_constellation_validation():
    with pytest.raises(sc.ScenarioError):
        sc.build_polar_constellation(0, 5, 500.0)
    with pytest.raises(sc.ScenarioError):
        sc.build_polar_constellation(2, 2, -1.0)


def test_station_validation():
    with pytest.raises(sc.ScenarioError, match="latitude"):
        sc.GroundStation(station_id=1, name="x", latitude_deg=95.0, longitude_deg=0.0)
    with pytest.raises(sc.ScenarioError, match="longitude"):
        sc.GroundStation(station_id=1, name="x", latitude_deg=0.0, longitude_deg=181.0)
    with pytest.raises(sc.ScenarioError, match="receivers"):
        sc.GroundStation(station_id=1, name="x", latitude_deg=0.0, longitude_deg=0.0,
                         receivers=0)


def test_duplicate_station_ids_rejected():
    g = sc.GroundStation(station_id=1, name="a", latitude_deg=0.0, longitude_deg=0.0)
    h = sc.GroundStation(station_id=1, name="b", latitude_deg=1.0, longitude_deg=1.0)
    with pytest.raises(sc.ScenarioError, match="duplicate"):
        sc.Scenario(
            satellites=sc.build_polar_constellation(1, 1, 500.0),
            stations=(g, h),
            sat_spec=sc.SatelliteSpec(altitude_km=500.0, source_rate_hz=1e9),
            time=sc.TimeGrid(slot_duration_s=1.0, slot_count=10),
            channel=sc.ChannelParams(),
        )


def test_season_selection():
    assert sc.TimeGrid(1.0, 10, dt.date(2022, 3, 15)).season() == "mar"
    assert sc.TimeGrid(1.0, 10, dt.date(2022, 6, 15)).season() == "jun"
    assert sc.TimeGrid(1.0, 10, dt.date(2022, 9, 15)).season() == "sep"
    assert sc.TimeGrid(1.0, 10, dt.date(2022, 12, 15)).season() == "dec"
    assert sc.TimeGrid(1.0, 10, dt.date(2022, 1, 2)).season() == "dec"


def _write_scenario(tmp_path, body=None):
    atmo = tmp_path / "atmo.csv"
    atmo.write_text(
        "station_id,season,zenith_transmissivity\n"
        + "".join(f"1,{s},0.6\n2,{s},0.55\n" for s in sc.SEASONS))
    noise = tmp_path / "noise.csv"
    noise.write_text(
        "station_id,hour_bucket,background_prob\n"
        + "".join(f"1,{b},1e-7\n2,{b},2e-7\n" for b in sc.NOISE_BUCKETS))
    text = body or """
[constellation]
rings = 2
sats_per_ring = 3
altitude_km = 500
min_elevation_deg = 20

[time]
slot_duration_s = 1
slot_count = 120
epoch = 2022-03-15

[hardware]
transmitters_per_satellite = 1
source_rate_hz = 1e9
optics_transmissivity = 0.8
dark_count_prob = 1e-8
transmit_divergence_urad = 10
receiver_aperture_m = 1.0
detector_efficiency = 0.5
sifting_factor = 0.5
intrinsic_error_rate = 0.01

[ground_stations]
atmosphere_csv = atmo.csv
noise_csv = noise.csv
g1 = 1, Alpha, 40.7, -74.0, 1
g2 = 2, Beta, 51.5, -0.1, 2
"""
    path = tmp_path / "scene.ini"
    path.write_text(text)
    return path


def test_load_scenario_round_trip(tmp_path):
    path = _write_scenario(tmp_path)
    scn = sc.load_scenario(path)
    assert scn.n_sats == 6
    assert scn.n_stations == 2
    assert scn.stations[0].name == "Alpha"
    assert scn.stations[1].receivers == 2
    assert scn.stations[0].zenith_transmissivity["mar"] == 0.6
    assert scn.stations[1].background_noise[12] == 2e-7
    assert scn.time.epoch == dt.date(2022, 3, 15)
    assert scn.min_elevation_deg == 20.0
    # loading the same file twice gives equal scenarios
    assert scn == sc.load_scenario(path)


def test_load_scenario_missing_section_names_offender(tmp_path):
    path = _write_scenario(tmp_path)
    broken = tmp_path / "broken.ini"
    broken.write_text(path.read_text().replace("[time]", "[when]"))
    with pytest.raises(sc.ScenarioError, match=r"\[time\]"):
        sc.load_scenario(broken)


def test_load_scenario_missing_key_names_offender(tmp_path):
    path = _write_scenario(tmp_path)
    broken = tmp_path / "broken.ini"
    broken.write_text(path.read_text().replace("source_rate_hz = 1e9", ""))
    with pytest.raises(sc.ScenarioError, match="source_rate_hz"):
        sc.load_scenario(broken)


def test_load_scenario_station_needs_side_tables(tmp_path):
    path = _write_scenario(tmp_path)
    text = path.read_text().replace("g2 = 2, Beta, 51.5, -0.1, 2",
                                    "g2 = 3, Gamma, 51.5, -0.1, 2")
    broken = tmp_path / "broken.ini"
    broken.write_text(text)
    with pytest.raises(sc.ScenarioError, match="station 3"):
        sc.load_scenario(broken)
