from __future__ import annotations

from datetime import datetime, timedelta, timezone
from math import cos, pi, sin

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermaqi.domain import DeviceMeta, MetRecord, Sample
from thermaqi.features import (
    CONTINUOUS_FIELDS,
    FeatureCodec,
    ScalerState,
    activity_cluster,
    build_windows,
    encode_series,
    fit_scaler,
    flatten_for_rf,
    season_of,
)
from thermaqi.spatial import SpatialProfile

UTC = timezone.utc

# Full local-hour -> cluster table.
CLUSTER_TABLE = {h: 1 for h in range(0, 7)}
CLUSTER_TABLE.update({h: 2 for h in range(7, 10)})
CLUSTER_TABLE.update({h: 3 for h in range(10, 17)})
CLUSTER_TABLE.update({h: 4 for h in range(17, 24)})


@pytest.mark.parametrize("hour,expected", sorted(CLUSTER_TABLE.items()))
def test_activity_cluster_table(hour, expected):
    assert activity_cluster(hour) == expected


def test_activity_cluster_rejects_bad_hour():
    with pytest.raises(ValueError):
        activity_cluster(24)


@pytest.mark.parametrize(
    "month,season",
    [(11, "winter"), (12, "winter"), (1, "winter"), (2, "winter"),
     (3, "summer"), (4, "summer"), (5, "summer"), (6, "summer"),
     (7, "monsoon"), (8, "monsoon"), (9, "monsoon"), (10, "monsoon")],
)
def test_season_mapping(month, season):
    assert season_of(month) == season


def _met(temp=20.0, wind_dir=90.0, tag="clear"):
    return MetRecord(
        feels_like=temp + 1,
        temp_min=temp - 1,
        temp_max=temp + 2,
        pressure=1010.0,
        wind_speed=3.0,
        wind_direction=wind_dir,
        precipitation=0.5,
        cloud_cover=40.0,
        weather_type=tag,
    )


def _sample(hour=0, temp=20.0, hum=50.0, pm25=25.0, wind_dir=90.0, tag="clear", day=1, month=1):
    return Sample(
        device_id="d1",
        timestamp=datetime(2021, month, day, hour, tzinfo=UTC),
        temperature=temp,
        humidity=hum,
        pm25=pm25,
        met=_met(temp, wind_dir, tag),
    )


PROFILE = SpatialProfile.from_dict({"park": 0.25, "water": 0.25, "highway": 0.5})
META = DeviceMeta(device_id="d1", latitude=10.0, longitude=20.0, city_tag="t", spatial_profile=PROFILE)


def test_scaler_midpoint_and_degenerate():
    scaler = fit_scaler([_sample(temp=10.0), _sample(temp=30.0)])
    assert scaler.transform("temperature", 20.0) == pytest.approx(0.5)
    assert scaler.transform("temperature", 10.0) == 0.0
    assert scaler.transform("temperature", 30.0) == 1.0
    # pressure is constant in the fixture -> degenerate rule
    assert scaler.transform("pressure", 1010.0) == 0.5


def test_scaler_clamps_test_data():
    scaler = ScalerState(bounds={f: (0.0, 1.0) for f in CONTINUOUS_FIELDS})
    assert scaler.transform("temperature", 99.0) == 1.5
    assert scaler.transform("temperature", -99.0) == -0.5


def test_scaler_deterministic_refit():
    samples = [_sample(temp=t) for t in (5.0, 15.0, 25.0)]
    assert fit_scaler(samples) == fit_scaler(samples)


def test_scaler_rejects_empty():
    with pytest.raises(ValueError):
        fit_scaler([])


def test_scaler_training_data_lands_in_unit_interval():
    import numpy as np

    rng = np.random.default_rng(0)
    samples = [
        _sample(hour=int(i % 24), temp=float(rng.uniform(-5, 45)),
                hum=float(rng.uniform(0, 100)))
        for i in range(50)
    ]
    scaler = fit_scaler(samples)
    for s in samples:
        for f in CONTINUOUS_FIELDS:
            from thermaqi.features import _continuous_value

            v = scaler.transform(f, _continuous_value(s, f))
            assert 0.0 <= v <= 1.0


def _codec(samples=None, window=6, offset=0):
    samples = samples or [_sample(temp=10.0), _sample(temp=30.0, hour=1)]
    return FeatureCodec.fit(samples, window=window, utc_offset_minutes=offset)


def test_encode_hour_cyclic_pair():
    codec = _codec(offset=0)
    row = codec.encode_row(_sample(hour=12), META)
    names = codec.feature_names()
    assert row[names.index("hour_sin")] == pytest.approx(sin(2 * pi * 12 / 24), abs=1e-9)
    assert row[names.index("hour_cos")] == pytest.approx(cos(2 * pi * 12 / 24), abs=1e-9)
    assert row[names.index("hour_cos")] == pytest.approx(-1.0, abs=1e-9)


def test_encode_month_indexed_from_zero():
    codec = _codec(offset=0)
    row = codec.encode_row(_sample(month=3), META)
    names = codec.feature_names()
    assert row[names.index("month_sin")] == pytest.approx(sin(2 * pi * 2 / 12), abs=1e-9)
    assert row[names.index("month_cos")] == pytest.approx(cos(2 * pi * 2 / 12), abs=1e-9)


def test_encode_monday_is_index_zero():
    codec = _codec(offset=0)
    # 2021-01-04 is a Monday.
    row = codec.encode_row(_sample(day=4), META)
    names = codec.feature_names()
    assert row[names.index("dow=0")] == 1.0
    assert sum(row[names.index(f"dow={d}")] for d in range(7)) == 1.0


def test_encode_respects_utc_offset():
    codec = _codec(offset=330)
    # 03:00 UTC + 5h30 = 08:30 local -> hour 8 -> cluster C2
    row = codec.encode_row(_sample(hour=3), META)
    names = codec.feature_names()
    assert row[names.index("cluster=C2")] == 1.0


def test_encode_one_hot_groups_sum_to_one():
    codec = _codec()
    row = codec.encode_row(_sample(tag="clear"), META)
    names = codec.feature_names()
    for prefix, size in [("weather_type", len(codec.weather_types) + 1), ("cluster", 4),
                         ("season", 3), ("dow", 7)]:
        cols = [i for i, n in enumerate(names) if n.startswith(prefix + "=")]
        assert len(cols) == size
        assert row[cols].sum() == 1.0
        assert np.count_nonzero(row[cols]) == 1


def test_encode_unknown_weather_maps_to_other():
    codec = _codec()
    with pytest.warns(UserWarning):
        row = codec.encode_row(_sample(tag="sandstorm"), META)
    names = codec.feature_names()
    assert row[names.index("weather_type=other")] == 1.0


def test_encode_wind_direction_on_unit_circle():
    codec = _codec()
    for deg in (0.0, 90.0, 213.5, 359.0):
        row = codec.encode_row(_sample(wind_dir=deg), META)
        names = codec.feature_names()
        s, c = row[names.index("wind_dir_sin")], row[names.index("wind_dir_cos")]
        assert s * s + c * c == pytest.approx(1.0, abs=1e-9)


def test_encode_is_pure():
    codec = _codec()
    a = codec.encode_row(_sample(), META)
    b = codec.encode_row(_sample(), META)
    assert np.array_equal(a, b)


def test_encode_spatial_block_broadcast():
    codec = _codec()
    row = codec.encode_row(_sample(), META)
    names = codec.feature_names()
    assert row[names.index("spatial=park")] == 0.25
    assert row[names.index("spatial=highway")] == 0.5


def test_manifest_roundtrip():
    codec = _codec()
    clone = FeatureCodec.from_manifest(codec.manifest())
    assert clone == codec


def _contiguous_series(n, start_hour=0):
    samples = []
    t0 = datetime(2021, 1, 1, tzinfo=UTC) + timedelta(hours=start_hour)
    for i in range(n):
        samples.append(
            Sample(
                device_id="d1",
                timestamp=t0 + timedelta(hours=i),
                temperature=20.0,
                humidity=50.0,
                pm25=25.0,
                met=_met(),
            )
        )
    return samples


def test_window_counts():
    codec = _codec(window=18)
    series = encode_series(_contiguous_series(20), META, codec)
    assert len(build_windows(series, 18)) == 3
    series = encode_series(_contiguous_series(18), META, codec)
    assert len(build_windows(series, 18)) == 1


def test_windows_never_span_segments():
    codec = _codec(window=18)
    samples = _contiguous_series(10) + _contiguous_series(10, start_hour=24)
    series = encode_series(samples, META, codec)
    with pytest.warns(UserWarning):
        assert build_windows(series, 18) == []


def test_window_label_is_final_row():
    codec = _codec(window=3)
    samples = _contiguous_series(5)
    samples[-1] = Sample(
        device_id="d1",
        timestamp=samples[-1].timestamp,
        temperature=20.0,
        humidity=50.0,
        pm25=200.0,
        met=_met(),
    )
    series = encode_series(samples, META, codec)
    windows = build_windows(series, 3)
    assert windows[-1].label == 5
    assert windows[-1].end_timestamp == samples[-1].timestamp


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(min_value=1, max_value=60), min_size=1, max_size=4),
    st.integers(min_value=1, max_value=30),
)
def test_window_count_formula_property(segment_lengths, window):
    codec = _codec(window=window)
    samples = []
    hour = 0
    for length in segment_lengths:
        samples.extend(_contiguous_series(length, start_hour=hour))
        hour += length + 3  # gap breaks the grid
    series = encode_series(samples, META, codec)
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        windows = build_windows(series, window)
    expected = sum(max(0, length - window + 1) for length in segment_lengths)
    assert len(windows) == expected


def test_flatten_for_rf_blocks():
    codec = _codec(window=4)
    series = encode_series(_contiguous_series(6), META, codec)
    inst = build_windows(series, 4)[0]
    with_temporal = flatten_for_rf(inst, codec, temporal=True)
    without = flatten_for_rf(inst, codec, temporal=False)
    assert len(with_temporal) == len(without) + len(codec.temporal_indices())
    assert np.array_equal(with_temporal, inst.features[-1])
    # Same instance, same flag -> identical vector.
    assert np.array_equal(without, flatten_for_rf(inst, codec, temporal=False))
