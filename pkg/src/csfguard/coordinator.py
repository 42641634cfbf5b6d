"""Edge coordination: per-farm detectors, twin audits, quarantine and the shared data bus.

Each farm's packet stream is cut into windows of ``window_size`` rows. Per
window and farm (farms in id order) the coordinator samples the physical
sensors into the twin, runs the network detector, audits the twin, applies
the verdicts and finally publishes the twin's sensor values, unless the farm
is quarantined by then. Consumers drain their subscribed queues after every
window.
"""
from __future__ import annotations

import json
import logging
import threading
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .dtwin import CorruptionSpec, SensorField, TwinState, audit_sync, twin_step
from .modelio import load_any
from .preprocess import BENIGN, Sidecar
from .quantize import any_predict
from .traffic import PacketRecord, Scenario, bundled_scenario, simulate

log = logging.getLogger(__name__)

WINDOW_SIZE = 64
THETA = 0.5


class FarmStatus(str, Enum):
    HEALTHY = "healthy"
    ALERTED = "alerted"
    QUARANTINED = "quarantined"


class Trigger(str, Enum):
    NETWORK_MODEL = "network_model"
    TWIN_AUDIT = "twin_audit"


@dataclass
class DetectionEvent:
    farm: str
    window: int
    distribution: list[float]
    verdict: str  # "benign" or "attack"
    trigger: Trigger
    attack_kind: str | None = None
    attack_fraction: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def is_attack(self) -> bool:
        return self.verdict == "attack"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trigger"] = self.trigger.value
        return d


@dataclass
class Transition:
    farm: str
    window: int
    before: FarmStatus
    after: FarmStatus
    reason: str

    def to_dict(self) -> dict:
        return {"farm": self.farm, "window": self.window, "from": self.before.value,
                "to": self.after.value, "reason": self.reason}


@dataclass
class FarmNode:
    farm_id: str
    model: object  # Model or QuantizedModel
    sidecar: Sidecar
    twin: TwinState
    status: FarmStatus = FarmStatus.HEALTHY
    theta: float = THETA
    tolerance: object = None


@dataclass(frozen=True)
class BusRecord:
    seq: int
    farm: str
    window: int
    sensor_id: str
    value: float
    corrupted: bool
    publisher_status: FarmStatus


class DataBus:
    """Per-farm publish queues with consumer subscriptions; all mutation is serialised."""

    def __init__(self):
        self.queues: dict[str, list[BusRecord]] = {}
        self.sealed: set[str] = set()
        self.subscriptions: dict[str, list[str]] = {}
        self.cursors: dict[tuple[str, str], int] = {}
        self.consumed: dict[str, list[BusRecord]] = {}
        self.log: list[Transition] = []
        self._seq = 0
        self._lock = threading.Lock()

    def subscribe(self, consumer: str, sources) -> None:
        with self._lock:
            self.subscriptions[consumer] = sorted(sources)
            self.consumed.setdefault(consumer, [])
            for s in sources:
                self.cursors.setdefault((consumer, s), 0)

    def publish(self, farm: str, window: int, sensor_id: str, value: float, corrupted: bool,
                status: FarmStatus) -> bool:
        """Append to ``farm``'s queue; returns False when the queue is sealed."""
        with self._lock:
            if farm in self.sealed or status is FarmStatus.QUARANTINED:
                return False
            self.queues.setdefault(farm, []).append(
                BusRecord(self._seq, farm, window, sensor_id, value, corrupted, status))
            self._seq += 1
            return True

    def seal(self, farm: str) -> None:
        with self._lock:
            self.sealed.add(farm)

    def consume(self, consumer: str) -> list[BusRecord]:
        """Deliver every record published since the consumer's last read."""
        with self._lock:
            new = []
            for src in self.subscriptions.get(consumer, []):
                q = self.queues.get(src, [])
                start = self.cursors[(consumer, src)]
                new.extend(q[start:])
                self.cursors[(consumer, src)] = len(q)
            new.sort(key=lambda r: r.seq)
            self.consumed[consumer].extend(new)
            return new


def _majority(preds: np.ndarray) -> int:
    counts = np.bincount(preds)
    return int(np.argmax(counts))


def process_window(node: FarmNode, rows: np.ndarray, window: int, theta: float | None = None) -> DetectionEvent:
    """Score one window of preprocessed rows; attack if the attack-row fraction reaches ``theta``."""
    if node.status is FarmStatus.QUARANTINED:
        raise ValueError(f"farm {node.farm_id} is quarantined")
    theta = node.theta if theta is None else theta
    rows = np.asarray(rows)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise ValueError(f"expected a non-empty [rows, features] window, got shape {rows.shape}")
    probs, preds = any_predict(node.model, rows)
    benign_idx = node.sidecar.label_dict.get(BENIGN, 0)
    attack_rows = preds[preds != benign_idx]
    fraction = len(attack_rows) / len(preds)
    dist = [float(v) for v in probs.mean(axis=0)]
    if fraction >= theta and len(attack_rows):
        kind = node.sidecar.labels[_majority(attack_rows)]
        return DetectionEvent(node.farm_id, window, dist, "attack", Trigger.NETWORK_MODEL, kind, fraction)
    return DetectionEvent(node.farm_id, window, dist, "benign", Trigger.NETWORK_MODEL, None, fraction)


def audit_and_gate(node: FarmNode, window: int, since_tick: int | None = None) -> DetectionEvent | None:
    """Audit the twin; a divergence yields an attack event triggered by the audit."""
    if not node.twin.history:
        return None
    rep = audit_sync(node.twin, node.tolerance, since_tick=since_tick)
    if not rep.diverged:
        return None
    return DetectionEvent(node.farm_id, window, [], "attack", Trigger.TWIN_AUDIT, "twin_corruption", 1.0,
                          detail={"first_divergence_tick": rep.first_divergence_tick,
                                  "sensors": rep.diverged_sensors,
                                  "max_deviation": {s: rep.max_deviation[s] for s in rep.diverged_sensors}})


def apply_verdict(bus: DataBus, node: FarmNode, event: DetectionEvent, gating: bool = True) -> Transition | None:
    """Quarantine (or, with gating off, alert) a farm on an attack verdict. Idempotent."""
    if event.farm != node.farm_id:
        raise ValueError(f"event for farm {event.farm} applied to farm {node.farm_id}")
    if not event.is_attack:
        return None
    target = FarmStatus.QUARANTINED if gating else FarmStatus.ALERTED
    if node.status is target or node.status is FarmStatus.QUARANTINED:
        return None
    tr = Transition(node.farm_id, event.window, node.status, target,
                    f"{event.trigger.value}: {event.attack_kind}")
    node.status = target
    if target is FarmStatus.QUARANTINED:
        bus.seal(node.farm_id)
    bus.log.append(tr)
    log.info("farm %s %s -> %s at window %d (%s)", tr.farm, tr.before.value, tr.after.value,
             tr.window, tr.reason)
    return tr


@dataclass
class FarmSpec:
    farm_id: str
    model: str
    sidecar: str
    scenario: dict | str
    corruption: dict | None = None
    sensor_seed: int = 0
    jitter: float = 0.0


@dataclass
class CoordinatorConfig:
    farms: list[FarmSpec]
    consumer: str = "C"
    sources: list[str] = field(default_factory=lambda: ["A", "B"])
    window_size: int = WINDOW_SIZE
    theta: float = THETA
    gating: bool = True
    tolerance: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CoordinatorConfig":
        d = dict(d)
        d["farms"] = [FarmSpec(**f) for f in d["farms"]]
        return cls(**d)

    @classmethod
    def load(cls, path) -> "CoordinatorConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


# streams used by the default run: Farm A suffers an ARP poisoning campaign
# halfway through; Farm B's soil-moisture twin is overwritten with 350
DEFAULT_STREAMS = {
    "A": {"farm": "A", "duration_ticks": 300, "benign_rate": 2.0, "seed": 303,
          "windows": [{"kind": "arp_poison", "start_tick": 150, "end_tick": 300, "intensity": 3.0}]},
    "B": {"farm": "B", "duration_ticks": 300, "benign_rate": 2.0, "seed": 404, "windows": []},
}
DEFAULT_CORRUPTION = {"sensor_id": "B.soil_moisture", "mode": "constant_override", "parameter": 350.0,
                      "start_tick": 5}


def default_coordinator_config(models: dict[str, str], sidecars: dict[str, str], attacks: bool = True,
                               gating: bool = True) -> CoordinatorConfig:
    farms = []
    for i, fid in enumerate(("A", "B")):
        stream = json.loads(json.dumps(DEFAULT_STREAMS[fid]))
        if not attacks:
            stream["windows"] = []
        corruption = dict(DEFAULT_CORRUPTION) if attacks and fid == "B" else None
        farms.append(FarmSpec(fid, str(models[fid]), str(sidecars[fid]), stream, corruption, sensor_seed=11 + i))
    return CoordinatorConfig(farms=farms, gating=gating)


def load_sidecar(path) -> Sidecar:
    path = Path(path)
    if path.is_dir():
        path = path / "sidecar.json"
    return Sidecar.from_dict(json.loads(path.read_text()))


def _scenario(spec) -> Scenario:
    if isinstance(spec, dict):
        return Scenario.from_dict(spec)
    if str(spec).startswith("bundled:"):
        return bundled_scenario(str(spec).split(":", 1)[1])
    return Scenario.load(spec)


@dataclass
class ScenarioReport:
    gating: bool
    window_size: int
    theta: float
    farms: dict[str, dict]
    events: list[dict]
    transitions: list[dict]
    consumer: dict

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


@dataclass
class ScenarioRun:
    """Report plus the live objects, for inspection in tests."""

    report: ScenarioReport
    bus: DataBus
    nodes: dict[str, FarmNode]
    event_log: list[dict]

    def write_event_log(self, path) -> None:
        with Path(path).open("w") as fh:
            for row in self.event_log:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _windows(records: list[PacketRecord], size: int) -> list[list[PacketRecord]]:
    return [records[i:i + size] for i in range(0, len(records), size)]


def run_scenario(config: CoordinatorConfig) -> ScenarioRun:
    if config.window_size < 1 or not 0.0 < config.theta <= 1.0:
        raise ValueError("window_size must be >= 1 and theta in (0, 1]")
    nodes: dict[str, FarmNode] = {}
    streams: dict[str, list[list[PacketRecord]]] = {}
    sensors: dict[str, SensorField] = {}
    onset: dict[str, int | None] = {}
    for spec in sorted(config.farms, key=lambda f: f.farm_id):
        for p in (spec.model, spec.sidecar):
            if not Path(p).exists():
                raise FileNotFoundError(f"farm {spec.farm_id}: {p} does not exist")
        corruption = CorruptionSpec.from_dict(spec.corruption) if spec.corruption else None
        twin = TwinState(farm=spec.farm_id, corruption=corruption, jitter=spec.jitter, seed=spec.sensor_seed)
        nodes[spec.farm_id] = FarmNode(spec.farm_id, load_any(spec.model), load_sidecar(spec.sidecar), twin,
                                       theta=config.theta, tolerance=config.tolerance)
        windows = _windows(simulate(_scenario(spec.scenario)), config.window_size)
        streams[spec.farm_id] = windows
        sensors[spec.farm_id] = SensorField(spec.farm_id, spec.sensor_seed)
        starts = [i for i, w in enumerate(windows) if any(r.is_attack for r in w)]
        if corruption is not None:
            starts.append(corruption.start_tick)
        onset[spec.farm_id] = min(starts) if starts else None

    bus = DataBus()
    bus.subscribe(config.consumer, config.sources)
    events: list[DetectionEvent] = []
    detection: dict[str, int] = {}
    published = {fid: 0 for fid in nodes}
    n_windows = max(len(w) for w in streams.values())

    for w in range(n_windows):
        for fid, node in nodes.items():
            if node.status is FarmStatus.QUARANTINED or w >= len(streams[fid]):
                continue
            readings = sensors[fid].sample(w)
            for r in readings:
                twin_step(node.twin, r)
            rows = node.sidecar.features(streams[fid][w])
            window_events = [process_window(node, rows, w)]
            audit = audit_and_gate(node, w, since_tick=w)
            if audit is not None:
                window_events.append(audit)
            for ev in window_events:
                events.append(ev)
                if ev.is_attack:
                    detection.setdefault(fid, w)
                apply_verdict(bus, node, ev, gating=config.gating)
            compromised = onset[fid] is not None and w >= onset[fid]
            for r in readings:
                if bus.publish(fid, w, r.sensor_id, node.twin.values[r.sensor_id], compromised, node.status):
                    published[fid] += 1
        bus.consume(config.consumer)

    consumed = bus.consumed[config.consumer]
    before = after = undetected = 0
    for rec in consumed:
        if not rec.corrupted:
            continue
        det = detection.get(rec.farm)
        if det is None:
            undetected += 1
        elif rec.window < det:
            before += 1
        else:
            after += 1
    quarantine = {t.farm: t.window for t in bus.log if t.after is FarmStatus.QUARANTINED}
    farms_out = {
        fid: {"status": node.status.value, "onset_window": onset[fid],
              "detection_window": detection.get(fid), "quarantine_window": quarantine.get(fid),
              "windows": len(streams[fid]), "published": published[fid]}
        for fid, node in nodes.items()
    }
    consumer_out = {
        "id": config.consumer, "sources": list(config.sources), "consumed_total": len(consumed),
        "corrupted_before_detection": before, "corrupted_after_detection": after,
        "corrupted_undetected": undetected,
        "from_quarantined_publisher": sum(r.publisher_status is FarmStatus.QUARANTINED for r in consumed),
    }
    attack_events = [e.to_dict() for e in events if e.is_attack]
    report = ScenarioReport(config.gating, config.window_size, config.theta, farms_out, attack_events,
                            [t.to_dict() for t in bus.log], consumer_out)
    event_log = [{"kind": "event", **e.to_dict()} for e in events]
    event_log += [{"kind": "transition", **t.to_dict()} for t in bus.log]
    # detector events precede transitions within one (window, farm) slot
    event_log.sort(key=lambda r: (r["window"], r["farm"], r["kind"] != "event"))
    return ScenarioRun(report, bus, nodes, event_log)
