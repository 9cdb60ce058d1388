from __future__ import annotations

import io
import json
import logging
import math
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from routine_miner import ingest
from routine_miner.errors import ParseError
from routine_miner.ingest import (
    DetectionConfig, EnvReading, MovementEvent, SensorSample, amplitude, detect_all, detect_columns,
    detect_events, detect_events_arrays, events_to_csv, format_imu_lines, parse_samples,
    parse_timestamp, read_events_csv, read_sample_columns, to_ms, write_samples,
)
from routine_miner.synth import generate_sample_arrays, generate_samples

from conftest import T0

CFG = DetectionConfig()


def imu(t: datetime, accel=(0.0, 0.0, 1.0), device="fridge") -> SensorSample:
    return SensorSample(device, t, "imu", accel=accel)


def stream(amps: dict[float, float], seconds: float, device="fridge") -> list[SensorSample]:
    """20 Hz samples over ``seconds``; ``amps`` maps offset (s) to an amplitude along z."""
    out = []
    for i in range(round(seconds * 20)):
        off = i / 20
        a = amps.get(round(off, 2), 0.0)
        out.append(imu(T0 + timedelta(seconds=off), (0.0, 0.0, 1.0 + a), device))
    return out


# ---------------------------------------------------------------- parsing

def test_parse_example_line():
    line = '{"device_id":"fridge","ts":"2017-05-03T09:37:12.000Z","kind":"imu","ax":0.02,"ay":-0.01,"az":1.05}'
    (s,) = parse_samples([line])
    assert s.device_id == "fridge" and s.kind == "imu"
    assert s.accel == (0.02, -0.01, 1.05)
    assert s.timestamp == datetime(2017, 5, 3, 9, 37, 12, tzinfo=timezone.utc)


def test_parse_empty_stream():
    assert parse_samples([]) == []


def test_missing_az_names_line():
    lines = [
        '{"device_id":"a","ts":"2017-05-03T09:37:12.000Z","kind":"imu","ax":0,"ay":0,"az":1}',
        '{"device_id":"a","ts":"2017-05-03T09:37:12.050Z","kind":"imu","ax":0,"ay":0}',
    ]
    with pytest.raises(ParseError) as info:
        parse_samples(lines, source="log.jsonl")
    assert info.value.lineno == 2
    assert "az" in str(info.value) and "log.jsonl" in str(info.value)


@pytest.mark.parametrize("line, fragment", [
    ('{"device_id":"a","ts":"2017-05-03T09:37:12Z","kind":"gps"}', "unknown kind"),
    ('{"device_id":"a", nope', "invalid JSON"),
    ('[1, 2]', "JSON object"),
    ('{"device_id":"a","ts":"2017-05-03T09:37:12","kind":"imu","ax":0,"ay":0,"az":1}', "timezone"),
    ('{"device_id":"a","ts":"2017-05-03T09:37:12Z","kind":"imu","ax":"0","ay":0,"az":1}', "number"),
    ('{"device_id":"a","ts":"2017-05-03T09:37:12Z","kind":"imu","ax":NaN,"ay":0,"az":1}', "finite"),
    ('{"device_id":"","ts":"2017-05-03T09:37:12Z","kind":"imu","ax":0,"ay":0,"az":1}', "device_id"),
])
def test_line_errors(line, fragment):
    with pytest.raises(ParseError, match=fragment) as info:
        parse_samples(["", line])
    assert info.value.lineno == 2


def test_env_sample_and_unknown_keys():
    line = ('{"device_id":"a","ts":"2017-05-03T09:37:12.5+02:00","kind":"env","pressure":1013.2,'
            '"humidity":40,"temperature":21.5,"light":300,"battery":3.1}')
    (s,) = parse_samples([line])
    assert s.env == EnvReading(1013.2, 40.0, 21.5, 300.0)
    assert s.timestamp == datetime(2017, 5, 3, 7, 37, 12, 500000, tzinfo=timezone.utc)
    with pytest.raises(ValueError):
        amplitude(s)


def test_backwards_timestamp_warns(caplog):
    lines = [imu(T0 + timedelta(seconds=1)).to_json(), imu(T0).to_json()]
    with caplog.at_level(logging.WARNING, logger="routine_miner"):
        samples = parse_samples(lines)
    assert len(samples) == 2
    assert "backwards" in caplog.text


def test_timestamp_truncated_to_ms():
    assert parse_timestamp("2017-05-03T09:37:12.123999Z").microsecond == 123000


def test_sample_invariants():
    with pytest.raises(ValueError):
        SensorSample("a", T0, "imu")
    with pytest.raises(ValueError):
        SensorSample("a", T0, "env", accel=(0, 0, 1))
    with pytest.raises(ValueError):
        SensorSample("a", T0, "imu", accel=(math.inf, 0, 1))


def test_samples_json_round_trip():
    samples = [imu(T0, (0.1, -0.25, 0.97)),
               SensorSample("b", T0, "env", env=EnvReading(1000.0, 50.0, 20.0, 10.0))]
    buf = io.StringIO()
    write_samples(samples, buf)
    assert parse_samples(buf.getvalue().splitlines()) == samples


# ---------------------------------------------------------------- amplitude

@pytest.mark.parametrize("accel, expected", [((0, 0, 1), 0.0), ((0, 0, 0), 1.0), ((0.6, 0, 0.8), 0.0)])
def test_amplitude_examples(accel, expected):
    assert amplitude(imu(T0, accel)) == pytest.approx(expected, abs=1e-15)


# ---------------------------------------------------------------- detection

def test_quiet_stream_has_no_events():
    assert detect_events(stream({}, 20.0), CFG) == []


def test_single_burst():
    (ev,) = detect_events(stream({3.0: 0.5}, 40.0), CFG)
    assert ev.start == T0 + timedelta(seconds=3)
    assert ev.end == T0 + timedelta(seconds=23)
    assert ev.peak_amplitude == pytest.approx(0.5)
    assert ev.sample_count == 400


def test_mergeable_pair():
    (ev,) = detect_events(stream({0.0: 0.5, 20.5: 0.3}, 60.0), CFG)
    assert ev.start == T0
    assert ev.end == T0 + timedelta(seconds=40.5)
    assert ev.peak_amplitude == pytest.approx(0.5)


def test_gap_above_merge_gap_stays_split():
    events = detect_events(stream({0.0: 0.5, 21.5: 0.3}, 60.0), CFG)
    assert [e.start - T0 for e in events] == [timedelta(0), timedelta(seconds=21.5)]


def test_crossing_inside_window_does_not_extend_it():
    (ev,) = detect_events(stream({0.0: 0.5, 19.95: 0.9}, 60.0), CFG)
    assert ev.end == T0 + timedelta(seconds=20)
    assert ev.peak_amplitude == pytest.approx(0.9)


def test_threshold_is_strict():
    cfg = DetectionConfig(threshold=0.125)
    assert detect_events(stream({1.0: 0.125}, 5.0), cfg) == []
    assert len(detect_events(stream({1.0: 0.25}, 5.0), cfg)) == 1


def test_unsorted_and_mixed_devices_rejected():
    s = stream({}, 1.0)
    with pytest.raises(ValueError, match="sorted"):
        detect_events(s[::-1], CFG)
    with pytest.raises(ValueError, match="one device"):
        detect_events(s + [imu(T0 + timedelta(seconds=2), device="tv")], CFG)


def test_env_samples_ignored():
    env = SensorSample("fridge", T0, "env", env=EnvReading(1.0, 1.0, 1.0, 1.0))
    base = stream({3.0: 0.5}, 40.0)
    assert detect_events([env] + base, CFG) == detect_events(base, CFG)


def test_detection_config_rejects_non_positive():
    for kwargs in ({"threshold": 0}, {"wake_duration": -1}, {"merge_gap": 0}, {"sample_rate": math.nan}):
        with pytest.raises(ValueError):
            DetectionConfig(**kwargs)


def test_detect_all_groups_devices():
    a = stream({1.0: 0.5}, 30.0, "fridge")
    b = stream({0.5: 0.5}, 30.0, "tv")
    events = detect_all(sorted(a + b, key=lambda s: (s.timestamp, s.device_id)), CFG)
    assert [e.object_id for e in events] == ["tv", "fridge"]


amp_lists = st.lists(st.floats(0, 0.4, allow_nan=False), min_size=1, max_size=400)


@settings(max_examples=60, deadline=None)
@given(amp_lists, st.floats(0.02, 0.3), st.floats(0.1, 3.0), st.floats(0.05, 2.0))
def test_detection_properties(amps, threshold, wake, gap):
    cfg = DetectionConfig(threshold=threshold, wake_duration=wake, merge_gap=gap)
    times = np.arange(len(amps), dtype=np.int64) * 50
    a = np.array(amps)
    events = detect_events_arrays(times, a, cfg)
    assert events == detect_events_arrays(times, a, cfg)
    assert events == detect_events_arrays(times, a, cfg, windows=ingest._windows_numpy)
    for (s0, e0, _, _), (s1, _, _, _) in zip(events, events[1:]):
        assert e0 < s1 and s1 - e0 > cfg.merge_gap_ms
    assert events == reference_detect(times.tolist(), amps, cfg)
    for s, e, peak, count in events:
        inside = a[(times >= s) & (times < e)]
        assert peak > threshold and peak <= inside.max() and count <= inside.size


def reference_detect(times, amps, cfg):
    """Plain transcription of the wake/sleep rule: idle crossing opens a fixed
    window; windows at most merge_gap apart are joined; only in-window samples count."""
    windows, open_until = [], None
    for t, a in zip(times, amps):
        if open_until is not None and t < open_until:
            windows[-1][2] = max(windows[-1][2], a)
            windows[-1][3] += 1
        elif a > cfg.threshold:
            open_until = t + cfg.wake_ms
            windows.append([t, open_until, a, 1])
    merged = []
    for w in windows:
        if merged and w[0] - merged[-1][1] <= cfg.merge_gap_ms:
            merged[-1] = [merged[-1][0], w[1], max(merged[-1][2], w[2]), merged[-1][3] + w[3]]
        else:
            merged.append(w)
    return [tuple(m) for m in merged]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 0.2), st.floats(-0.2, 0.2), st.floats(0, 0.3)),
                min_size=1, max_size=300))
def test_window_count_monotone_when_norm_grows(devs):
    # with a non-negative z deviation, doubling the deviation raises every
    # amplitude, so the crossing set grows and greedy covering needs no fewer windows
    d = np.array(devs)
    times = np.arange(len(d), dtype=np.int64) * 50
    base = np.array([0.0, 0.0, 1.0])
    amp1 = ingest.amplitudes(base + d)
    amp2 = ingest.amplitudes(base + 2 * d)
    assert np.all(amp2 >= amp1 - 1e-12)
    w1 = ingest.wake_windows(times, amp1, 0.1, np.int64(2000))
    w2 = ingest.wake_windows(times, amp2, 0.1, np.int64(2000))
    assert w2[0].size >= w1[0].size


def test_doubling_deviation_can_reduce_event_count():
    # amplitude is not monotone in the deviation: (0.5, 0, -0.4) moves the
    # norm from 1.22 down to 0.98 when doubled
    assert amplitude(imu(T0, (0.5, 0.0, 0.6))) > 0.1
    assert amplitude(imu(T0, (1.0, 0.0, 0.2))) < 0.1
    # and an extra crossing can merge two events: windows [0, 20) and [21.5, 41.5)
    # are 1.5 s apart, but a crossing at 20.2 s bridges them
    before = detect_events(stream({0.0: 0.5, 21.5: 0.5}, 60.0), CFG)
    after = detect_events(stream({0.0: 0.5, 20.2: 0.5, 21.5: 0.5}, 60.0), CFG)
    assert len(before) == 2 and len(after) == 1


# ---------------------------------------------------------------- columnar path & CSV

def _jsonl(samples) -> list[str]:
    buf = io.StringIO()
    write_samples(samples, buf)
    return buf.getvalue().splitlines(keepends=True)


def test_columnar_reader_matches_object_path():
    events = [MovementEvent("fridge", T0 + timedelta(seconds=s), T0 + timedelta(seconds=s + 20), 0.7, 400)
              for s in (0, 40, 100)]
    events.append(MovementEvent("tv", T0 + timedelta(seconds=5), T0 + timedelta(seconds=25), 0.7, 400))
    samples = generate_samples(events, CFG, seed=3)
    lines = _jsonl(samples)
    lines.insert(7, json.dumps({"device_id": "hub", "ts": "2017-05-03T09:00:00+00:00", "kind": "env",
                                "pressure": 1, "humidity": 2, "temperature": 3, "light": 4}) + "\n")
    lines.insert(9, "\n")
    for chunk in (5, 64, 100_000):
        cols = read_sample_columns(lines, chunk_lines=chunk)
        assert cols.env_count == 1 and cols.imu_count == len(samples)
        assert detect_columns(cols, CFG) == detect_all(samples, CFG)


def test_columnar_reader_error_line_numbers():
    lines = _jsonl(stream({}, 1.0))
    lines[13] = '{"device_id":"fridge","ts":"2017-05-03T09:00:00.650Z","kind":"imu","ax":0,"ay":0}\n'
    with pytest.raises(ParseError) as info:
        read_sample_columns(lines, source="x.jsonl", chunk_lines=4)
    assert info.value.lineno == 14 and "az" in str(info.value)


def test_columnar_reader_sorts_backwards_steps(caplog):
    lines = _jsonl(stream({}, 1.0))
    lines[3], lines[4] = lines[4], lines[3]
    with caplog.at_level(logging.WARNING, logger="routine_miner"):
        cols = read_sample_columns(lines)
    t, _ = cols.imu["fridge"]
    assert cols.out_of_order == 1 and np.all(np.diff(t) > 0)


def test_format_imu_lines_matches_sample_json():
    times = np.array([to_ms(T0) + 999, to_ms(T0) + 1049], dtype=np.int64)
    accel = np.array([[0.1, 0.2, 0.97], [0.0, -0.5, 1.0]])
    lines = list(format_imu_lines("fridge", times, accel))
    assert [json.loads(l) for l in lines] == [json.loads(l) for l in _jsonl(parse_samples(lines))]


def test_event_csv_round_trip():
    events = [MovementEvent("Kitchen Chair", T0, T0 + timedelta(seconds=20), 0.4375, 400),
              MovementEvent('odd,"name"', T0 + timedelta(minutes=1), T0 + timedelta(minutes=2), 1.0, 1)]
    text = events_to_csv(events)
    assert text.splitlines()[0] == "object_id,start_iso,end_iso,peak_amplitude,sample_count"
    assert read_events_csv(io.StringIO(text)) == events


def test_event_csv_errors():
    with pytest.raises(ParseError, match="header"):
        read_events_csv(io.StringIO("a,b\n"))
    bad = "object_id,start_iso,end_iso,peak_amplitude,sample_count\nx,2017-05-03T09:00:00Z,oops,1,1\n"
    with pytest.raises(ParseError) as info:
        read_events_csv(io.StringIO(bad))
    assert info.value.lineno == 2


def test_generated_span_without_events_is_quiet():
    span = (T0, T0 + timedelta(hours=1))
    arrays = generate_sample_arrays([], CFG, span=span)
    t, a = arrays["tag"]
    assert t.size == 72_000
    assert detect_events_arrays(t, ingest.amplitudes(a), CFG) == []
