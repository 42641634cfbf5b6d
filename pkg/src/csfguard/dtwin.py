"""Value-level digital twin of a farm's sensors, corruption injection and sync audit."""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

HISTORY_CAPACITY = 4096


class SensorKind(str, Enum):
    SOIL_MOISTURE = "soil_moisture"
    TEMP_HUMIDITY = "temp_humidity"
    GAS = "gas"
    LIGHT = "light"


# sensor units; no source gives thresholds, these sit well above normal jitter
DEFAULT_TOLERANCE = {
    SensorKind.SOIL_MOISTURE: 5.0,
    SensorKind.TEMP_HUMIDITY: 1.0,
    SensorKind.GAS: 20.0,
    SensorKind.LIGHT: 50.0,
}

# (baseline, per-sample noise sd) for the physical sensor model
SENSOR_BASELINE = {
    SensorKind.SOIL_MOISTURE: (45.0, 0.5),
    SensorKind.TEMP_HUMIDITY: (22.0, 0.1),
    SensorKind.GAS: (300.0, 2.0),
    SensorKind.LIGHT: (600.0, 5.0),
}


class TickError(ValueError):
    pass


class CorruptionMode(str, Enum):
    CONSTANT_OVERRIDE = "constant_override"
    SCALE = "scale"
    RANDOM_FAR = "random_far"


@dataclass(frozen=True)
class SensorReading:
    sensor_id: str
    kind: SensorKind
    value: float
    tick: int


@dataclass
class CorruptionSpec:
    """Rewrites the twin value of ``sensor_id`` for ticks in ``[start_tick, end_tick)``."""

    sensor_id: str
    mode: CorruptionMode
    parameter: float
    start_tick: int = 0
    end_tick: int | None = None

    def active(self, tick: int) -> bool:
        return tick >= self.start_tick and (self.end_tick is None or tick < self.end_tick)

    def apply(self, value: float, rng: np.random.Generator) -> float:
        if self.mode is CorruptionMode.CONSTANT_OVERRIDE:
            return float(self.parameter)
        if self.mode is CorruptionMode.SCALE:
            return value * float(self.parameter)
        # RANDOM_FAR: at least ``parameter`` away from the truth, random side
        sign = 1.0 if rng.random() < 0.5 else -1.0
        return value + sign * float(self.parameter) * (1.0 + rng.random())

    def to_dict(self) -> dict:
        return {"sensor_id": self.sensor_id, "mode": self.mode.value, "parameter": self.parameter,
                "start_tick": self.start_tick, "end_tick": self.end_tick}

    @classmethod
    def from_dict(cls, d: dict) -> "CorruptionSpec":
        return cls(d["sensor_id"], CorruptionMode(d["mode"]), float(d["parameter"]),
                   int(d.get("start_tick", 0)), d.get("end_tick"))


@dataclass(frozen=True)
class HistoryEntry:
    tick: int
    sensor_id: str
    kind: SensorKind
    physical: float
    twin: float


@dataclass
class TwinState:
    """Mirrored sensor values for one farm.

    ``jitter`` adds uniform sync noise in ``[-jitter, jitter]`` to the mirrored
    value, modelling transport and rounding error.
    """

    farm: str = ""
    corruption: CorruptionSpec | None = None
    jitter: float = 0.0
    seed: int = 0
    capacity: int = HISTORY_CAPACITY
    values: dict[str, float] = field(default_factory=dict)
    last_tick: dict[str, int] = field(default_factory=dict)
    history: deque = field(init=False)

    def __post_init__(self):
        self.history = deque(maxlen=self.capacity)
        self._rng = np.random.default_rng(self.seed)

    def event_log(self) -> list[dict]:
        return [{"tick": h.tick, "sensor": h.sensor_id, "physical": h.physical, "twin": h.twin}
                for h in self.history]

    def write_event_log(self, path) -> None:
        with Path(path).open("w") as fh:
            for row in self.event_log():
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def twin_step(state: TwinState, reading: SensorReading) -> TwinState:
    """Mirror one physical reading into the twin; corruption rewrites the mirrored value."""
    last = state.last_tick.get(reading.sensor_id)
    if last is not None and reading.tick <= last:
        raise TickError(f"{reading.sensor_id}: tick {reading.tick} does not advance past {last}")
    value = float(reading.value)
    if state.jitter > 0:
        value += float(state._rng.uniform(-state.jitter, state.jitter))
    spec = state.corruption
    if spec is not None and spec.sensor_id == reading.sensor_id and spec.active(reading.tick):
        value = spec.apply(float(reading.value), state._rng)
    state.values[reading.sensor_id] = value
    state.last_tick[reading.sensor_id] = reading.tick
    state.history.append(HistoryEntry(reading.tick, reading.sensor_id, SensorKind(reading.kind),
                                      float(reading.value), value))
    return state


@dataclass
class SyncReport:
    max_deviation: dict[str, float]
    diverged: bool
    first_divergence_tick: int | None
    tolerance: dict[str, float]
    diverged_sensors: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"max_deviation": self.max_deviation, "diverged": self.diverged,
                "first_divergence_tick": self.first_divergence_tick, "tolerance": self.tolerance,
                "diverged_sensors": self.diverged_sensors}


def _tolerance_for(tolerance, kind: SensorKind) -> float:
    if tolerance is None:
        return DEFAULT_TOLERANCE[kind]
    if isinstance(tolerance, dict):
        return float(tolerance.get(kind, tolerance.get(kind.value, DEFAULT_TOLERANCE[kind])))
    return float(tolerance)


def audit_sync(state: TwinState, tolerance=None, since_tick: int | None = None) -> SyncReport:
    """Scan retained history for ``|physical - twin| > tolerance``.

    ``tolerance`` is a number, a per-kind dict, or None for the defaults.
    ``since_tick`` restricts the scan to newer entries. Read-only.
    """
    max_dev: dict[str, float] = {}
    used: dict[str, float] = {}
    first = None
    diverged_sensors = []
    for h in list(state.history):
        if since_tick is not None and h.tick < since_tick:
            continue
        tol = _tolerance_for(tolerance, h.kind)
        used[h.sensor_id] = tol
        dev = abs(h.physical - h.twin)
        if dev > max_dev.get(h.sensor_id, -1.0):
            max_dev[h.sensor_id] = dev
        if dev > tol:
            if first is None or h.tick < first:
                first = h.tick
            if h.sensor_id not in diverged_sensors:
                diverged_sensors.append(h.sensor_id)
    return SyncReport(max_dev, first is not None, first, used, diverged_sensors)


class SensorField:
    """Seeded physical sensors for one farm: baseline plus Gaussian noise per sample."""

    def __init__(self, farm: str, seed: int, kinds=tuple(SensorKind)):
        self.farm = farm
        self.kinds = list(kinds)
        self._rng = np.random.default_rng(seed)

    def sensor_id(self, kind: SensorKind) -> str:
        return f"{self.farm}.{kind.value}"

    def sample(self, tick: int) -> list[SensorReading]:
        out = []
        for kind in self.kinds:
            base, sd = SENSOR_BASELINE[kind]
            value = round(base + float(self._rng.normal(0.0, sd)), 3)
            out.append(SensorReading(self.sensor_id(kind), kind, value, tick))
        return out
