from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import pytest

from thermaqi.domain import validate_dataset
from thermaqi.features import season_of
from thermaqi.spatial import profile_from_raster
from thermaqi.synth import synth_corpus, write_corpus


def _dir_digest(root: Path) -> dict[str, str]:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


def test_same_seed_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_corpus(synth_corpus(seed=33, n_devices=2, months=1), a)
    write_corpus(synth_corpus(seed=33, n_devices=2, months=1), b)
    assert _dir_digest(a) == _dir_digest(b)


def test_different_seed_differs(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    write_corpus(synth_corpus(seed=33, n_devices=2, months=1), a)
    write_corpus(synth_corpus(seed=34, n_devices=2, months=1), b)
    assert _dir_digest(a) != _dir_digest(b)


def test_all_five_classes_present(small_corpus):
    labels = {
        int(s.label)
        for rows in small_corpus.dataset.rows.values()
        for s in rows
        if s.label is not None
    }
    assert labels == {1, 2, 3, 4, 5}


def test_winter_beats_monsoon():
    corpus = synth_corpus(seed=44, n_devices=2, months=6)  # Jul..Dec: monsoon + winter
    by_season: dict[str, list[float]] = {"winter": [], "monsoon": [], "summer": []}
    for rows in corpus.dataset.rows.values():
        for s in rows:
            if s.pm25 is not None:
                by_season[season_of(s.timestamp.month)].append(s.pm25)
    assert by_season["winter"] and by_season["monsoon"]
    assert np.mean(by_season["winter"]) > np.mean(by_season["monsoon"])


def test_diurnal_peaks_morning_evening(small_corpus):
    by_local_hour: dict[int, list[float]] = {h: [] for h in range(24)}
    offset = small_corpus.config["utc_offset_minutes"]
    for rows in small_corpus.dataset.rows.values():
        for s in rows:
            if s.pm25 is not None:
                local_hour = (s.timestamp.hour * 60 + offset) // 60 % 24
                by_local_hour[int(local_hour)].append(s.pm25)
    means = {h: np.mean(v) for h, v in by_local_hour.items() if v}
    morning = max(means[h] for h in (7, 8, 9, 10))
    evening = max(means[h] for h in (18, 19, 20, 21))
    predawn = min(means[h] for h in (2, 3, 4, 5))
    assert morning > predawn and evening > predawn


def test_temperature_humidity_couplings(small_corpus):
    temps, hums, pms = [], [], []
    for rows in small_corpus.dataset.rows.values():
        for s in rows:
            if s.pm25 is not None:
                temps.append(s.temperature)
                hums.append(s.humidity)
                pms.append(s.pm25)
    assert np.corrcoef(temps, pms)[0, 1] < 0.0
    assert np.corrcoef(hums, pms)[0, 1] > 0.0


def test_tiles_match_stored_profiles(small_corpus):
    for device_id, meta in small_corpus.dataset.devices.items():
        computed = profile_from_raster(small_corpus.tiles[device_id], small_corpus.legend)
        assert computed.fractions == meta.spatial_profile.fractions


def test_device_offsets_differ(small_corpus):
    means = [
        np.mean([s.pm25 for s in rows if s.pm25 is not None])
        for rows in small_corpus.dataset.rows.values()
    ]
    assert max(means) - min(means) > 5.0


def test_dataset_field_ranges_valid(small_corpus):
    # Gaps from dropped class-6 rows are legitimate; range violations are not.
    violations = validate_dataset(small_corpus.dataset)
    assert all("gap" in v.message for v in violations)


def test_weather_covers_every_row(small_corpus):
    for device_id, rows in small_corpus.dataset.rows.items():
        meta = small_corpus.dataset.devices[device_id]
        for s in rows:
            key = (round(meta.latitude, 2), round(meta.longitude, 2), s.timestamp)
            assert key in small_corpus.weather


def test_requires_two_devices():
    with pytest.raises(ValueError):
        synth_corpus(seed=1, n_devices=1, months=1)
