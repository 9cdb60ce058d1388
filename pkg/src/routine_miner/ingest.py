"""Raw sensor log parsing and movement event detection.

The tags log IMU data with a sleep/wake strategy: while idle, a sample whose
movement amplitude exceeds the threshold wakes the tag, and every sample of
the following fixed-length window belongs to one handling episode. Episodes
separated by at most ``merge_gap`` seconds are stitched into one event.

Timestamps are carried as UTC ``datetime`` objects at millisecond precision;
the detection kernel works on integer milliseconds so window arithmetic is
exact.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Iterable, Sequence

import numpy as np

from . import _jit
from .errors import ParseError

logger = logging.getLogger(__name__)

EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
EVENT_CSV_HEADER = ("object_id", "start_iso", "end_iso", "peak_amplitude", "sample_count")
ENV_FIELDS = ("pressure", "humidity", "temperature", "light")
_FRACTION = re.compile(r"(?<=:\d\d)\.(\d+)")


def to_ms(ts: datetime) -> int:
    """Milliseconds since the Unix epoch for an aware datetime."""
    return (ts - EPOCH) // timedelta(milliseconds=1)


def from_ms(ms: int) -> datetime:
    return EPOCH + timedelta(milliseconds=int(ms))


def parse_timestamp(text: str) -> datetime:
    """Parse an ISO-8601 timestamp that carries a timezone; result is UTC, truncated to ms."""
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    # fromisoformat (3.10) only takes 3 or 6 fractional digits
    text = _FRACTION.sub(lambda m: "." + (m.group(1) + "000000")[:6], text, count=1)
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError(f"timestamp {text!r} has no timezone")
    ts = ts.astimezone(timezone.utc)
    return ts.replace(microsecond=ts.microsecond // 1000 * 1000)


def format_timestamp(ts: datetime) -> str:
    """ISO-8601 UTC with millisecond precision and a ``Z`` suffix."""
    ts = ts.astimezone(timezone.utc)
    return ts.strftime("%Y-%m-%dT%H:%M:%S.") + f"{ts.microsecond // 1000:03d}Z"


@dataclass(frozen=True, slots=True)
class EnvReading:
    pressure: float
    humidity: float
    temperature: float
    light: float


@dataclass(frozen=True, slots=True)
class SensorSample:
    """One raw reading from one tag: an IMU triple in g, or an environment tuple."""

    device_id: str
    timestamp: datetime
    kind: str
    accel: tuple[float, float, float] | None = None
    env: EnvReading | None = None

    def __post_init__(self):
        if self.kind == "imu":
            if self.accel is None or self.env is not None:
                raise ValueError("imu sample needs accel and no env reading")
            if len(self.accel) != 3 or not all(math.isfinite(a) for a in self.accel):
                raise ValueError(f"accel must be 3 finite numbers, got {self.accel!r}")
        elif self.kind == "env":
            if self.env is None or self.accel is not None:
                raise ValueError("env sample needs an env reading and no accel")
        else:
            raise ValueError(f"unknown sample kind {self.kind!r}")

    def to_json(self) -> str:
        record: dict[str, object] = {
            "device_id": self.device_id,
            "ts": format_timestamp(self.timestamp),
            "kind": self.kind,
        }
        if self.kind == "imu":
            record.update(zip(("ax", "ay", "az"), self.accel))
        else:
            record.update({f: getattr(self.env, f) for f in ENV_FIELDS})
        return json.dumps(record, separators=(",", ":"))


@dataclass(frozen=True, slots=True)
class MovementEvent:
    object_id: str
    start: datetime
    end: datetime
    peak_amplitude: float
    sample_count: int

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError(f"event start {self.start} after end {self.end}")
        if self.sample_count < 1:
            raise ValueError("event must contain at least one sample")


@dataclass(frozen=True)
class DetectionConfig:
    """Wake/sleep detector settings. ``threshold`` in g, durations in seconds."""

    threshold: float = 0.1
    wake_duration: float = 20.0
    merge_gap: float = 1.0
    sample_rate: float = 20.0

    def __post_init__(self):
        for name in ("threshold", "wake_duration", "merge_gap", "sample_rate"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be strictly positive, got {value!r}")

    @property
    def wake_ms(self) -> int:
        return round(self.wake_duration * 1000)

    @property
    def merge_gap_ms(self) -> int:
        return round(self.merge_gap * 1000)

    @property
    def period_ms(self) -> int:
        return round(1000 / self.sample_rate)


# --------------------------------------------------------------------------
# parsing


def _number(record: dict, key: str, lineno: int) -> float:
    if key not in record:
        raise ParseError(f"missing required key {key!r}", lineno)
    value = record[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(f"key {key!r} must be a number, got {value!r}", lineno)
    return float(value)


def _parse_line(line: str, lineno: int) -> SensorSample:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(record, dict):
        raise ParseError("expected a JSON object", lineno)
    for key in ("device_id", "ts", "kind"):
        if key not in record:
            raise ParseError(f"missing required key {key!r}", lineno)
    device_id, kind = record["device_id"], record["kind"]
    if not isinstance(device_id, str) or not device_id:
        raise ParseError("device_id must be a non-empty string", lineno)
    try:
        ts = parse_timestamp(str(record["ts"]))
    except ValueError as exc:
        raise ParseError(f"bad timestamp: {exc}", lineno) from None
    if kind == "imu":
        accel = tuple(_number(record, k, lineno) for k in ("ax", "ay", "az"))
        if not all(math.isfinite(a) for a in accel):
            raise ParseError("accel components must be finite", lineno)
        return SensorSample(device_id, ts, "imu", accel=accel)
    if kind == "env":
        env = EnvReading(*(_number(record, k, lineno) for k in ENV_FIELDS))
        return SensorSample(device_id, ts, "env", env=env)
    raise ParseError(f"unknown kind {kind!r}", lineno)


def parse_samples(lines: Iterable[str], source: str | None = None) -> list[SensorSample]:
    """Parse JSON Lines sensor records into samples, preserving input order.

    Blank lines are skipped. A per-device timestamp that goes backwards is
    logged as a warning; syntactic and schema problems raise ``ParseError``
    naming the line.
    """
    samples: list[SensorSample] = []
    last_seen: dict[str, datetime] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            sample = _parse_line(line, lineno)
        except ParseError as exc:
            raise ParseError(exc.message, exc.lineno, source) from None
        prev = last_seen.get(sample.device_id)
        if prev is not None and sample.timestamp < prev:
            logger.warning(
                "line %d: timestamp for %s goes backwards (%s < %s)",
                lineno, sample.device_id, sample.timestamp, prev,
            )
        last_seen[sample.device_id] = sample.timestamp
        samples.append(sample)
    return samples


def write_samples(samples: Iterable[SensorSample], stream) -> None:
    for sample in samples:
        stream.write(sample.to_json())
        stream.write("\n")


# --------------------------------------------------------------------------
# columnar fast path for large logs


@dataclass
class SampleColumns:
    """IMU samples grouped per device as (times_ms, accel) arrays.

    Environment readings are only counted; they never reach detection.
    """

    imu: dict[str, tuple[np.ndarray, np.ndarray]]
    env_count: int = 0
    out_of_order: int = 0

    @property
    def imu_count(self) -> int:
        return sum(t.size for t, _ in self.imu.values())


CHUNK_LINES = 32768


def _fast_chunk(lines: list[str]):
    """Decode a block of IMU-only lines in one go.

    Returns ``(devices, times_ms, accel)`` or ``None`` when anything in the
    block needs the per-line validator (env records, odd timestamps, bad types).
    """
    try:
        records = json.loads("[" + ",".join(lines) + "]")
    except json.JSONDecodeError:
        return None
    if len(records) != len(lines) or not all(type(r) is dict for r in records):
        return None
    try:
        if any(r["kind"] != "imu" for r in records):
            return None
        devices = [r["device_id"] for r in records]
        stamps = [r["ts"] for r in records]
        values = [(r["ax"], r["ay"], r["az"]) for r in records]
    except KeyError:
        return None
    if not all(type(d) is str and d for d in set(devices)):
        return None
    if not set(map(type, (x for v in values for x in v))) <= {float, int}:
        return None
    if not all(type(s) is str and len(s) == 24 and s[23] == "Z" and s[19] == "." and s[10] == "T"
               for s in stamps):
        return None
    try:
        times = np.array([s[:-1] for s in stamps], dtype="datetime64[ms]").astype(np.int64)
    except ValueError:
        return None
    return devices, times, np.array(values, dtype=np.float64)


def _slow_chunk(lines: list[str], linenos: list[int], source: str | None):
    devices, times, values, env = [], [], [], 0
    for line, lineno in zip(lines, linenos):
        try:
            sample = _parse_line(line, lineno)
        except ParseError as exc:
            raise ParseError(exc.message, lineno, source) from None
        if sample.kind == "env":
            env += 1
            continue
        devices.append(sample.device_id)
        times.append(to_ms(sample.timestamp))
        values.append(sample.accel)
    return devices, np.array(times, dtype=np.int64), np.array(values, dtype=np.float64).reshape(-1, 3), env


def read_sample_columns(lines: Iterable[str], source: str | None = None,
                        chunk_lines: int = CHUNK_LINES) -> SampleColumns:
    """Validate JSON Lines records like ``parse_samples`` and return per-device arrays.

    Each device's samples are stably sorted by time; backwards steps are
    counted and logged once per device.
    """
    parts: dict[str, list[tuple[np.ndarray, np.ndarray]]] = {}
    env_count = 0

    def flush(block: list[str], linenos: list[int]) -> None:
        nonlocal env_count
        fast = _fast_chunk(block)
        if fast is None:
            devices, t, a, env = _slow_chunk(block, linenos, source)
            env_count += env
        else:
            devices, t, a = fast
        if not devices:
            return
        if len(set(devices)) == 1:
            parts.setdefault(devices[0], []).append((t, a))
            return
        names, inverse = np.unique(np.array(devices, dtype=object), return_inverse=True)
        for i, name in enumerate(names):
            mask = inverse == i
            parts.setdefault(name, []).append((t[mask], a[mask]))

    block: list[str] = []
    linenos: list[int] = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        block.append(line)
        linenos.append(lineno)
        if len(block) >= chunk_lines:
            flush(block, linenos)
            block, linenos = [], []
    if block:
        flush(block, linenos)

    columns = {}
    backwards_total = 0
    for device in sorted(parts):
        t = np.concatenate([p[0] for p in parts[device]])
        a = np.concatenate([p[1] for p in parts[device]]).reshape(-1, 3)
        if not np.all(np.isfinite(a)):
            raise ParseError(f"non-finite accel values for device {device}", None, source)
        backwards = int(np.count_nonzero(np.diff(t) < 0))
        if backwards:
            logger.warning("%s: %d backwards timestamp step(s); samples re-sorted", device, backwards)
            order = np.argsort(t, kind="stable")
            t, a = t[order], a[order]
            backwards_total += backwards
        columns[device] = (t, a)
    return SampleColumns(columns, env_count, backwards_total)


def format_imu_lines(device_id: str, times_ms: np.ndarray, accel: np.ndarray) -> Iterable[str]:
    """JSON Lines for one device's IMU samples (same schema as ``SensorSample.to_json``)."""
    dev = json.dumps(device_id)
    last_sec, head = None, ""
    for t, (ax, ay, az) in zip(times_ms.tolist(), accel.tolist()):
        sec, ms = divmod(t, 1000)
        if sec != last_sec:
            last_sec = sec
            head = from_ms(sec * 1000).strftime("%Y-%m-%dT%H:%M:%S")
        yield (f'{{"device_id":{dev},"ts":"{head}.{ms:03d}Z","kind":"imu",'
               f'"ax":{ax!r},"ay":{ay!r},"az":{az!r}}}\n')


def detect_columns(columns: SampleColumns, config: DetectionConfig | None = None) -> list[MovementEvent]:
    """``detect_all`` over columnar samples."""
    config = config or DetectionConfig()
    events = []
    for device, (times, accel) in columns.imu.items():
        for s, e, p, c in detect_events_arrays(times, amplitudes(accel), config):
            events.append(MovementEvent(device, from_ms(s), from_ms(e), float(p), int(c)))
    events.sort(key=lambda e: (e.start, e.object_id))
    return events


# --------------------------------------------------------------------------
# detection


def amplitude(sample: SensorSample) -> float:
    """Deviation of the acceleration magnitude from 1 g."""
    if sample.kind != "imu":
        raise ValueError(f"amplitude is defined for imu samples only, got kind={sample.kind!r}")
    ax, ay, az = sample.accel
    return abs(math.sqrt(ax * ax + ay * ay + az * az) - 1.0)


def amplitudes(accel: np.ndarray) -> np.ndarray:
    """Vectorised ``amplitude`` over an (n, 3) array."""
    accel = np.asarray(accel, dtype=np.float64)
    return np.abs(np.sqrt(np.sum(accel * accel, axis=1)) - 1.0)


@_jit.njit
def _windows_loop(times, amps, threshold, wake_ms):
    n = times.shape[0]
    starts = np.empty(n, dtype=np.int64)
    ends = np.empty(n, dtype=np.int64)
    peaks = np.empty(n, dtype=np.float64)
    counts = np.empty(n, dtype=np.int64)
    m = 0
    i = 0
    while i < n:
        if amps[i] > threshold:
            start = times[i]
            stop = start + wake_ms
            peak = amps[i]
            j = i + 1
            while j < n and times[j] < stop:
                if amps[j] > peak:
                    peak = amps[j]
                j += 1
            starts[m] = start
            ends[m] = stop
            peaks[m] = peak
            counts[m] = j - i
            m += 1
            i = j
        else:
            i += 1
    return starts[:m], ends[:m], peaks[:m], counts[:m]


def _windows_numpy(times, amps, threshold, wake_ms):
    crossings = np.flatnonzero(amps > threshold)
    starts, ends, peaks, counts = [], [], [], []
    c = 0
    while c < crossings.shape[0]:
        i = crossings[c]
        start = times[i]
        stop = start + wake_ms
        j = int(np.searchsorted(times, stop, side="left"))
        starts.append(start)
        ends.append(stop)
        peaks.append(amps[i:j].max())
        counts.append(j - i)
        c = int(np.searchsorted(crossings, j, side="left"))
    return (
        np.asarray(starts, dtype=np.int64),
        np.asarray(ends, dtype=np.int64),
        np.asarray(peaks, dtype=np.float64),
        np.asarray(counts, dtype=np.int64),
    )


wake_windows = _jit.pick(_windows_loop, _windows_numpy)


def merge_windows(starts, ends, peaks, counts, merge_gap_ms):
    """Stitch consecutive windows whose gap is at most ``merge_gap_ms``."""
    merged: list[list] = []
    for s, e, p, c in zip(starts.tolist(), ends.tolist(), peaks.tolist(), counts.tolist()):
        if merged and s - merged[-1][1] <= merge_gap_ms:
            last = merged[-1]
            last[1] = e
            last[2] = max(last[2], p)
            last[3] += c
        else:
            merged.append([s, e, p, c])
    return merged


def detect_events_arrays(
    times_ms: np.ndarray, amps: np.ndarray, config: DetectionConfig, *, windows=None
) -> list[tuple[int, int, float, int]]:
    """Array-level detector: returns (start_ms, end_ms, peak, sample_count) tuples."""
    times_ms = np.ascontiguousarray(times_ms, dtype=np.int64)
    amps = np.ascontiguousarray(amps, dtype=np.float64)
    if times_ms.shape != amps.shape:
        raise ValueError("times and amplitudes differ in length")
    if times_ms.size > 1 and np.any(np.diff(times_ms) < 0):
        raise ValueError("sample timestamps are not sorted")
    windows = windows or wake_windows
    parts = windows(times_ms, amps, float(config.threshold), np.int64(config.wake_ms))
    return [tuple(w) for w in merge_windows(*parts, config.merge_gap_ms)]


def detect_events(samples: Sequence[SensorSample], config: DetectionConfig | None = None) -> list[MovementEvent]:
    """Detect handling episodes in one device's time-ordered samples.

    Environment samples are skipped. Raises ``ValueError`` when samples come
    from more than one device or are not in time order.
    """
    config = config or DetectionConfig()
    imu = [s for s in samples if s.kind == "imu"]
    if not imu:
        return []
    devices = {s.device_id for s in samples}
    if len(devices) > 1:
        raise ValueError(f"detect_events expects one device, got {sorted(devices)}")
    device_id = imu[0].device_id
    times = np.fromiter((to_ms(s.timestamp) for s in imu), dtype=np.int64, count=len(imu))
    amps = amplitudes(np.array([s.accel for s in imu], dtype=np.float64))
    return [
        MovementEvent(device_id, from_ms(s), from_ms(e), float(p), int(c))
        for s, e, p, c in detect_events_arrays(times, amps, config)
    ]


def detect_all(samples: Sequence[SensorSample], config: DetectionConfig | None = None) -> list[MovementEvent]:
    """Run ``detect_events`` per device and merge results chronologically.

    Samples of each device are stably sorted by time first, so interleaved
    multi-device logs are accepted.
    """
    by_device: dict[str, list[SensorSample]] = {}
    for sample in samples:
        by_device.setdefault(sample.device_id, []).append(sample)
    events: list[MovementEvent] = []
    for device in sorted(by_device):
        stream = sorted(by_device[device], key=lambda s: s.timestamp)
        events.extend(detect_events(stream, config))
    events.sort(key=lambda e: (e.start, e.object_id))
    return events


# --------------------------------------------------------------------------
# event CSV


def write_events_csv(events: Iterable[MovementEvent], stream) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(EVENT_CSV_HEADER)
    for ev in events:
        writer.writerow([
            ev.object_id,
            format_timestamp(ev.start),
            format_timestamp(ev.end),
            repr(float(ev.peak_amplitude)),
            ev.sample_count,
        ])


def events_to_csv(events: Iterable[MovementEvent]) -> str:
    buf = io.StringIO()
    write_events_csv(events, buf)
    return buf.getvalue()


def read_events_csv(stream, source: str | None = None) -> list[MovementEvent]:
    reader = csv.reader(stream)
    header = next(reader, None)
    if header is None or tuple(header) != EVENT_CSV_HEADER:
        raise ParseError(f"expected header {','.join(EVENT_CSV_HEADER)}", 1, source)
    events = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(EVENT_CSV_HEADER):
            raise ParseError(f"expected {len(EVENT_CSV_HEADER)} fields, got {len(row)}", lineno, source)
        try:
            events.append(MovementEvent(
                row[0], parse_timestamp(row[1]), parse_timestamp(row[2]), float(row[3]), int(row[4])
            ))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, source) from None
    return events
