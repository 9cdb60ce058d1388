"""Planted-routine scenarios: ground truth for recovery and round-trip tests.

A scenario follows the LDA generative story at the event level. Each day
draws a routine mixture, each event draws a routine from it and then an
(object, hour) word from that routine, and the event is placed inside that
local hour. ``generate_samples`` turns events back into a 20 Hz IMU stream
that the detector maps onto the same events.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from datetime import date, datetime, timedelta, timezone
from typing import Mapping, Sequence

import numpy as np

from .corpus import WordToken, zone
from .ingest import DetectionConfig, MovementEvent, SensorSample, from_ms, to_ms


@dataclass(frozen=True)
class RoutineSpec:
    name: str
    weights: Mapping[WordToken, float]
    daily_weight: float

    def __post_init__(self):
        if not self.weights:
            raise ValueError(f"routine {self.name!r} has no (object, hour) entries")
        if any(not w > 0 for w in self.weights.values()):
            raise ValueError(f"routine {self.name!r} has non-positive weights")
        if not self.daily_weight > 0:
            raise ValueError(f"routine {self.name!r} needs a positive daily_weight")

    def distribution(self) -> dict[WordToken, float]:
        total = sum(self.weights.values())
        return {tok: w / total for tok, w in self.weights.items()}


@dataclass(frozen=True)
class ScenarioSpec:
    """A household scenario.

    ``concentration`` scales the Dirichlet that draws each day's routine
    mixture around ``daily_weight``; ``None`` gives every day exactly the
    daily weights. ``"auto"`` uses 0.1 per routine, so most days are
    dominated by one or two routines.
    """

    routines: tuple[RoutineSpec, ...]
    days: int
    events_per_day: float
    seed: int = 0
    timezone: str = "UTC"
    start_date: date = date(2017, 5, 1)
    concentration: float | str | None = "auto"

    def __post_init__(self):
        if not self.routines:
            raise ValueError("scenario needs at least one routine")
        if self.days < 1:
            raise ValueError("days must be >= 1")
        if not self.events_per_day >= 1:
            raise ValueError("events_per_day must be >= 1")
        total = sum(r.daily_weight for r in self.routines)
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise ValueError(f"routine daily weights must sum to 1, got {total}")
        if self.concentration == "auto":
            object.__setattr__(self, "concentration", 0.1 * len(self.routines))
        if self.concentration is not None and not self.concentration > 0:
            raise ValueError("concentration must be positive or None")
        zone(self.timezone)

    @property
    def daily_weights(self) -> np.ndarray:
        return np.array([r.daily_weight for r in self.routines], dtype=np.float64)

    def vocabulary(self) -> list[WordToken]:
        seen: dict[WordToken, None] = {}
        for r in self.routines:
            for tok in r.weights:
                seen.setdefault(tok, None)
        return list(seen)

    def mixture(self, routine_weights: Sequence[float] | None = None) -> dict[WordToken, float]:
        """Word distribution of the routine mixture (daily weights by default)."""
        weights = self.daily_weights if routine_weights is None else np.asarray(routine_weights, float)
        weights = weights / weights.sum()
        out: dict[WordToken, float] = {}
        for w, routine in zip(weights, self.routines):
            for tok, p in routine.distribution().items():
                out[tok] = out.get(tok, 0.0) + w * p
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> ScenarioSpec:
        routines = tuple(
            RoutineSpec(
                r["name"],
                {WordToken.decode(k): float(v) for k, v in r["weights"].items()},
                float(r["daily_weight"]),
            )
            for r in data["routines"]
        )
        extra = {}
        if "start_date" in data:
            extra["start_date"] = date.fromisoformat(data["start_date"])
        if "concentration" in data:
            extra["concentration"] = None if data["concentration"] is None else float(data["concentration"])
        return cls(
            routines=routines,
            days=int(data["days"]),
            events_per_day=float(data["events_per_day"]),
            seed=int(data.get("seed", 0)),
            timezone=data.get("timezone", "UTC"),
            **extra,
        )

    @classmethod
    def from_json(cls, text: str) -> ScenarioSpec:
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return {
            "routines": [
                {"name": r.name, "weights": {t.encode(): w for t, w in r.weights.items()},
                 "daily_weight": r.daily_weight}
                for r in self.routines
            ],
            "days": self.days,
            "events_per_day": self.events_per_day,
            "seed": self.seed,
            "timezone": self.timezone,
            "start_date": self.start_date.isoformat(),
            "concentration": self.concentration,
        }


@dataclass(frozen=True)
class Truth:
    """What the generator actually drew."""

    routine_names: tuple[str, ...]
    day_mixtures: np.ndarray
    day_counts: np.ndarray
    labels: tuple[int, ...]

    def realised_weights(self) -> np.ndarray:
        """Fraction of all events drawn from each routine."""
        counts = np.bincount(np.asarray(self.labels, dtype=np.int64), minlength=len(self.routine_names))
        return counts / max(counts.sum(), 1)


def _slot_layout(config: DetectionConfig) -> tuple[int, int]:
    """Slot length and start jitter (ms) keeping same-object events > merge_gap apart."""
    slot = config.wake_ms + 2 * config.merge_gap_ms + 10 * config.period_ms
    slack = slot - config.wake_ms - config.merge_gap_ms - 2 * config.period_ms
    return slot, slack


def generate_events(
    scenario: ScenarioSpec, detection: DetectionConfig | None = None
) -> tuple[list[MovementEvent], Truth]:
    """Draw movement events for every day of ``scenario``.

    Each event lasts one wake window. Within an (object, hour) cell, events
    occupy distinct slots of the hour with a random offset inside the slot,
    so one object's events never overlap or merge.
    """
    detection = detection or DetectionConfig()
    rng = np.random.default_rng(scenario.seed)
    tz = zone(scenario.timezone)
    slot_ms, slack_ms = _slot_layout(detection)
    n_slots = 3_600_000 // slot_ms
    routines = scenario.routines
    dists = []
    for r in routines:
        dist = r.distribution()
        dists.append((list(dist), np.array(list(dist.values()))))
    base = scenario.daily_weights
    mixtures = np.zeros((scenario.days, len(routines)))
    counts = np.zeros(scenario.days, dtype=np.int64)
    drawn: list[tuple[int, str, int]] = []
    for day in range(scenario.days):
        if scenario.concentration is None:
            mix = base.copy()
        else:
            mix = rng.dirichlet(scenario.concentration * base)
        mixtures[day] = mix
        n = int(rng.poisson(scenario.events_per_day))
        counts[day] = n
        labels = rng.choice(len(routines), size=n, p=mix)
        cells: dict[tuple[str, int], list[int]] = {}
        for label in labels:
            tokens, probs = dists[label]
            tok = tokens[rng.choice(len(tokens), p=probs)]
            cells.setdefault((tok.object_id, tok.hour), []).append(int(label))
        local_day = scenario.start_date + timedelta(days=day)
        for (obj, hour), cell_labels in sorted(cells.items()):
            if len(cell_labels) > n_slots:
                raise ValueError(
                    f"{len(cell_labels)} events for {obj} in hour {hour} exceed {n_slots} slots"
                )
            hour_start = datetime(local_day.year, local_day.month, local_day.day, hour, tzinfo=tz)
            hour_ms = to_ms(hour_start.astimezone(timezone.utc))
            slots = np.sort(rng.choice(n_slots, size=len(cell_labels), replace=False))
            offsets = rng.integers(0, slack_ms, size=len(cell_labels), endpoint=True)
            for slot, off, label in zip(slots, offsets, cell_labels):
                start = hour_ms + int(slot) * slot_ms + int(off)
                drawn.append((start, obj, label))
    drawn.sort(key=lambda e: (e[0], e[1]))
    # nominal peak and sample count of one rendered wake window
    peak = 1.5 * detection.threshold + 0.5
    n_samples = -(-detection.wake_ms // detection.period_ms)
    events = [
        MovementEvent(obj, from_ms(s), from_ms(s + detection.wake_ms), peak, n_samples)
        for s, obj, _ in drawn
    ]
    truth = Truth(
        routine_names=tuple(r.name for r in routines),
        day_mixtures=mixtures,
        day_counts=counts,
        labels=tuple(label for _, _, label in drawn),
    )
    return events, truth


def _directions(rng, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def generate_sample_arrays(
    events: Sequence[MovementEvent],
    config: DetectionConfig | None = None,
    *,
    device_id: str = "tag",
    span: tuple[datetime, datetime] | None = None,
    padding: float = 1.0,
    seed: int = 0,
) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-device (times_ms, accel) arrays; see ``generate_samples``."""
    config = config or DetectionConfig()
    period = config.period_ms
    rng = np.random.default_rng(seed)
    by_device: dict[str, list[MovementEvent]] = {}
    for ev in events:
        by_device.setdefault(ev.object_id, []).append(ev)
    if span is not None and not events:
        by_device[device_id] = []
    out = {}
    for device in sorted(by_device):
        evs = sorted(by_device[device], key=lambda e: e.start)
        starts = np.array([to_ms(e.start) for e in evs], dtype=np.int64)
        ends = np.array([to_ms(e.end) for e in evs], dtype=np.int64)
        if np.any(starts[1:] < ends[:-1]):
            raise ValueError(f"overlapping events for {device}")
        active = [s + period * np.arange(max(1, -(-(e - s) // period)), dtype=np.int64)
                  for s, e in zip(starts, ends)]
        active_t = np.concatenate(active) if active else np.zeros(0, dtype=np.int64)
        if span is not None:
            lo, hi = to_ms(span[0]), to_ms(span[1])
            quiet = np.arange(lo, hi, period, dtype=np.int64)
        else:
            pad = max(1, round(padding * 1000 / period))
            steps = period * np.arange(1, pad + 1, dtype=np.int64)
            quiet = np.concatenate([
                (starts[:, None] - steps).ravel(),
                (ends[:, None] + steps - period).ravel(),
            ]) if evs else np.zeros(0, dtype=np.int64)
        if evs and quiet.size:
            # drop quiet samples that fall inside any event span
            idx = np.searchsorted(starts, quiet, side="right") - 1
            inside = (idx >= 0) & (quiet < ends[np.clip(idx, 0, None)])
            quiet = np.unique(quiet[~inside])
        threshold = config.threshold
        amp_active = rng.uniform(1.5 * threshold, 1.5 * threshold + 0.5, size=active_t.size)
        amp_quiet = rng.uniform(-0.5 * threshold, 0.5 * threshold, size=quiet.size)
        times = np.concatenate([active_t, quiet])
        mags = 1.0 + np.concatenate([amp_active, amp_quiet])
        accel = np.round(_directions(rng, times.size) * mags[:, None], 5)
        order = np.argsort(times, kind="stable")
        out[device] = (times[order], accel[order])
    return out


def generate_samples(
    events: Sequence[MovementEvent],
    config: DetectionConfig | None = None,
    *,
    device_id: str = "tag",
    span: tuple[datetime, datetime] | None = None,
    padding: float = 1.0,
    seed: int = 0,
) -> list[SensorSample]:
    """Render events as an IMU sample stream that ``detect_events`` inverts.

    Inside each event span samples sit well above the threshold on the
    sample-rate grid anchored at the event start; quiet jitter samples fill
    ``span`` if given, otherwise ``padding`` seconds on both sides of each
    event. ``device_id`` names the stream when ``span`` is given without events.
    Overlapping events of one object raise ``ValueError``.
    """
    arrays = generate_sample_arrays(events, config, device_id=device_id, span=span,
                                    padding=padding, seed=seed)
    samples = []
    for device, (times, accel) in arrays.items():
        for t, a in zip(times.tolist(), accel.tolist()):
            samples.append(SensorSample(device, from_ms(t), "imu", accel=tuple(a)))
    samples.sort(key=lambda s: (s.timestamp, s.device_id))
    return samples


def household_scenario(days: int = 14, events_per_day: float = 200, seed: int = 0,
                        timezone: str = "Europe/Amsterdam") -> ScenarioSpec:
    """Three routines in the shape of a breakfast / cooking / evening household."""

    def routine(name, objects, hours):
        return RoutineSpec(name, {WordToken(o, h): 1.0 for o in objects for h in hours}, 1 / 3)

    return ScenarioSpec(
        routines=(
            routine("breakfast", ("Fridge", "RemoteControl"), (8, 9)),
            routine("cooking", ("CabinetDoor", "Fridge"), (16, 17)),
            routine("evening", ("RemoteControl", "Fridge"), (19, 20)),
        ),
        days=days,
        events_per_day=events_per_day,
        seed=seed,
        timezone=timezone,
    )
