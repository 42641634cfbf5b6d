"""Seeded generator of labelled smart-farm network records.

A scenario runs in 100 ms ticks. Each tick draws Poisson benign traffic
(mostly sensor telemetry over HTTP) plus, inside attack windows, attacker
traffic whose per-tick rate scales linearly with the window's intensity.
Window features (``time_delta_ms``, ``rate_last_100ms``,
``distinct_dst_ports_window``) are computed from the emitted stream itself.
"""
from __future__ import annotations

import csv
import enum
import json
from collections import Counter, deque
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

TICK_S = 0.1
PORT_WINDOW_S = 1.0


class AttackKind(str, enum.Enum):
    BENIGN = "benign"
    DEAUTH = "deauth"
    SYN_FLOOD = "syn_flood"
    ARP_POISON = "arp_poison"
    DNS_SPOOF = "dns_spoof"
    EVIL_TWIN = "evil_twin"
    SQL_INJECTION = "sql_injection"
    PORT_SCAN = "port_scan"
    OS_FINGERPRINT = "os_fingerprint"


class Protocol(str, enum.Enum):
    TCP = "tcp"
    UDP = "udp"
    ICMP = "icmp"
    HTTP = "http"
    DNS = "dns"
    MGMT80211 = "mgmt80211"
    ARP = "arp"


class TcpFlag(enum.IntFlag):
    SYN = 1
    ACK = 2
    FIN = 4
    RST = 8


FARM_ATTACKS = {
    "A": frozenset({AttackKind.DEAUTH, AttackKind.ARP_POISON, AttackKind.SQL_INJECTION, AttackKind.PORT_SCAN}),
    "B": frozenset({AttackKind.EVIL_TWIN, AttackKind.OS_FINGERPRINT, AttackKind.DNS_SPOOF, AttackKind.SYN_FLOOD}),
}
DATASET_NAMES = {"A": "dataset1.csv", "B": "dataset2.csv"}
FARM_SUBNET = {"A": "192.168.1", "B": "192.168.2"}


@dataclass
class PacketRecord:
    time_delta_ms: float
    frame_len: int
    protocol: Protocol
    tcp_flags: int
    is_mgmt_deauth: bool
    is_retry: bool
    signal_dbm: float
    ttl: int
    window_size: int
    payload_len: int
    rate_last_100ms: float
    distinct_dst_ports_window: int
    arp_gratuitous: bool
    dns_answer_mismatch: bool
    bssid_known: bool
    payload_sql_meta: bool
    frame_number: int
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    timestamp: float
    is_attack: int
    attack_type: AttackKind

    def __post_init__(self):
        if (self.is_attack == 0) != (self.attack_type is AttackKind.BENIGN):
            raise ValueError(f"inconsistent labels: is_attack={self.is_attack}, attack_type={self.attack_type.value}")


FIELD_NAMES = [f.name for f in fields(PacketRecord)]
_FLOAT_FIELDS = {"time_delta_ms", "signal_dbm", "rate_last_100ms", "timestamp"}
_BOOL_FIELDS = {"is_mgmt_deauth", "is_retry", "arp_gratuitous", "dns_answer_mismatch",
                "bssid_known", "payload_sql_meta"}
_STR_FIELDS = {"src_ip", "dst_ip"}


def sig6(x: float) -> float:
    """Round to the 6 significant digits used in the CSV output."""
    return float(f"{x:.6g}")


@dataclass
class AttackWindow:
    kind: AttackKind
    start_tick: int
    end_tick: int
    intensity: float

    def active(self, tick: int) -> bool:
        return self.start_tick <= tick < self.end_tick


@dataclass
class Scenario:
    farm: str
    duration_ticks: int
    benign_rate: float
    windows: list[AttackWindow] = field(default_factory=list)
    seed: int = 0

    def validate(self) -> None:
        if self.farm not in FARM_ATTACKS:
            raise ValueError(f"unknown farm {self.farm!r}")
        if self.duration_ticks < 1 or self.benign_rate < 0:
            raise ValueError("duration_ticks must be >= 1 and benign_rate >= 0")
        for w in self.windows:
            if not 0 <= w.start_tick < w.end_tick <= self.duration_ticks:
                raise ValueError(f"window {w.kind.value} [{w.start_tick}, {w.end_tick}) "
                                 f"outside [0, {self.duration_ticks})")
            if w.intensity <= 0:
                raise ValueError(f"window {w.kind.value} needs positive intensity")
            if w.kind not in FARM_ATTACKS[self.farm]:
                raise ValueError(f"attack {w.kind.value} is not part of farm {self.farm}'s dataset")

    def to_dict(self) -> dict:
        d = asdict(self)
        for w in d["windows"]:
            w["kind"] = w["kind"].value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        windows = [AttackWindow(AttackKind(w["kind"]), int(w["start_tick"]), int(w["end_tick"]),
                                float(w["intensity"])) for w in d.get("windows", [])]
        return cls(farm=d["farm"], duration_ticks=int(d["duration_ticks"]),
                   benign_rate=float(d["benign_rate"]), windows=windows, seed=int(d.get("seed", 0)))

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


class _Net:
    """Addresses of one farm's testbed."""

    def __init__(self, farm: str):
        net = FARM_SUBNET[farm]
        self.gateway = f"{net}.1"
        self.server = f"{net}.10"
        self.sensors = [f"{net}.{i}" for i in range(21, 26)]
        self.attacker = f"{net}.66"


def _base(rng, protocol, src_ip, dst_ip, src_port, dst_port, frame_len, ttl, window, *,
          flags=0, signal=None, payload=None, **extra) -> dict:
    frame_len = int(max(24, frame_len))
    rec = {
        "protocol": protocol,
        "frame_len": frame_len,
        "tcp_flags": int(flags),
        "is_mgmt_deauth": False,
        "is_retry": bool(rng.random() < 0.05),
        "signal_dbm": round(float(signal if signal is not None else rng.normal(-58, 6)), 1),
        "ttl": int(ttl),
        "window_size": int(window),
        "payload_len": int(max(0, frame_len - 54) if payload is None else payload),
        "arp_gratuitous": False,
        "dns_answer_mismatch": False,
        "bssid_known": True,
        "payload_sql_meta": False,
        "src_ip": src_ip,
        "dst_ip": dst_ip,
        "src_port": int(src_port),
        "dst_port": int(dst_port),
    }
    rec.update(extra)
    return rec


def _eph(rng) -> int:
    return int(rng.integers(49152, 65535))


_BENIGN_MIX = ["telemetry", "response", "tcp_ctrl", "dns", "udp", "arp", "mgmt", "icmp"]
_BENIGN_P = np.array([0.40, 0.10, 0.12, 0.09, 0.07, 0.06, 0.12, 0.04])
_CTRL_FLAGS = [TcpFlag.SYN, TcpFlag.SYN | TcpFlag.ACK, TcpFlag.ACK, TcpFlag.FIN | TcpFlag.ACK, TcpFlag.RST]
_CTRL_P = np.array([0.25, 0.20, 0.40, 0.10, 0.05])


def _benign_event(rng, net: _Net, kind: str | None = None) -> dict:
    kind = kind or _BENIGN_MIX[rng.choice(len(_BENIGN_MIX), p=_BENIGN_P)]
    sensor = net.sensors[int(rng.integers(len(net.sensors)))]
    if kind == "telemetry":
        # ESP8266 (lwIP: ttl 255, window 5840) posting readings to the edge web server
        return _base(rng, Protocol.HTTP, sensor, net.server, _eph(rng), 80,
                     np.clip(rng.normal(420, 40), 300, 560), 255, 5840, flags=TcpFlag.ACK,
                     payload_sql_meta=bool(rng.random() < 0.01))
    if kind == "response":
        return _base(rng, Protocol.HTTP, net.server, sensor, 80, _eph(rng),
                     rng.normal(240, 30), 64, 64240, flags=TcpFlag.ACK)
    if kind == "tcp_ctrl":
        flags = _CTRL_FLAGS[rng.choice(len(_CTRL_FLAGS), p=_CTRL_P)]
        if rng.random() < 0.5:
            return _base(rng, Protocol.TCP, sensor, net.server, _eph(rng), 80,
                         int(rng.choice([54, 60])), 255, 5840, flags=flags, payload=0)
        return _base(rng, Protocol.TCP, net.server, sensor, 80, _eph(rng),
                     int(rng.choice([54, 60])), 64, 64240, flags=flags, payload=0)
    if kind == "dns":
        if rng.random() < 0.5:
            return _base(rng, Protocol.DNS, sensor, net.gateway, _eph(rng), 53,
                         rng.normal(75, 8), 255, 0)
        return _base(rng, Protocol.DNS, net.gateway, sensor, 53, _eph(rng), rng.normal(110, 20), 64, 0,
                     dns_answer_mismatch=bool(rng.random() < 0.01))
    if kind == "udp":
        return _base(rng, Protocol.UDP, sensor, net.gateway, 123, 123, rng.normal(90, 4), 255, 0)
    if kind == "arp":
        return _base(rng, Protocol.ARP, net.gateway if rng.random() < 0.5 else sensor, "0.0.0.0", 0, 0,
                     42, 0, 0, payload=0, arp_gratuitous=bool(rng.random() < 0.05))
    if kind == "mgmt":
        neighbour = rng.random() < 0.3
        return _base(rng, Protocol.MGMT80211, "0.0.0.0", "0.0.0.0", 0, 0, rng.normal(250, 30), 0, 0,
                     payload=0, signal=rng.normal(-82, 5) if neighbour else rng.normal(-50, 5),
                     bssid_known=not neighbour, is_mgmt_deauth=bool(rng.random() < 0.01))
    return _base(rng, Protocol.ICMP, net.gateway, net.server, 0, 0, 98, 64, 0)


class _AttackerState:
    def __init__(self, rng):
        self.scan_ports = [int(p) for p in rng.permutation(np.arange(1, 1025))]
        self.scan_pos = 0
        self.scan_src_port = _eph(rng)


_FP_WINDOWS = [1, 3, 4, 16, 63, 128, 256, 512]
_FP_FLAGS = [0, TcpFlag.FIN, TcpFlag.SYN | TcpFlag.FIN | TcpFlag.RST | TcpFlag.ACK, TcpFlag.SYN,
             TcpFlag.FIN | TcpFlag.ACK]


def _attack_event(kind: AttackKind, rng, net: _Net, st: _AttackerState) -> dict:
    near = rng.normal(-50, 6)
    if kind is AttackKind.DEAUTH:
        return _base(rng, Protocol.MGMT80211, "0.0.0.0", "0.0.0.0", 0, 0, 38 + int(rng.integers(0, 5)), 0, 0,
                     payload=0, signal=rng.normal(-44, 7), is_mgmt_deauth=bool(rng.random() < 0.95),
                     bssid_known=bool(rng.random() < 0.9), is_retry=bool(rng.random() < 0.25))
    if kind is AttackKind.SYN_FLOOD:
        spoofed = f"10.{rng.integers(0, 256)}.{rng.integers(0, 256)}.{rng.integers(1, 255)}"
        flags = TcpFlag.SYN if rng.random() < 0.99 else TcpFlag.RST
        ttl = 64 if rng.random() < 0.7 else int(rng.integers(32, 129))
        return _base(rng, Protocol.TCP, spoofed, net.server, int(rng.integers(1024, 65536)), 80,
                     int(rng.choice([54, 60])), ttl, int(rng.choice([64, 512, 1024])),
                     flags=flags, payload=0, signal=near)
    if kind is AttackKind.ARP_POISON:
        claimed = net.gateway if rng.random() < 0.6 else net.server
        return _base(rng, Protocol.ARP, claimed, "0.0.0.0", 0, 0, 42, 0, 0, payload=0, signal=near,
                     arp_gratuitous=bool(rng.random() < 0.85))
    if kind is AttackKind.DNS_SPOOF:
        victim = net.sensors[int(rng.integers(len(net.sensors)))]
        return _base(rng, Protocol.DNS, net.gateway, victim, 53, _eph(rng), rng.normal(120, 25), 64, 0,
                     signal=near, dns_answer_mismatch=bool(rng.random() < 0.9))
    if kind is AttackKind.EVIL_TWIN:
        rec = _benign_event(rng, net, str(rng.choice(["telemetry", "dns", "tcp_ctrl", "mgmt"])))
        rec["bssid_known"] = bool(rng.random() < 0.05)
        rec["signal_dbm"] = round(float(rng.normal(-32, 5)), 1)
        rec["is_mgmt_deauth"] = False
        return rec
    if kind is AttackKind.SQL_INJECTION:
        return _base(rng, Protocol.HTTP, net.attacker, net.server, _eph(rng), 80,
                     np.clip(rng.normal(650, 150), 200, 1400), 64, 64240, flags=TcpFlag.ACK,
                     signal=near, payload_sql_meta=bool(rng.random() < 0.85))
    if kind is AttackKind.PORT_SCAN:
        port = st.scan_ports[st.scan_pos % len(st.scan_ports)]
        st.scan_pos += 1
        flags = TcpFlag.SYN if rng.random() < 0.9 else TcpFlag.RST
        return _base(rng, Protocol.TCP, net.attacker, net.server, st.scan_src_port, port, 58,
                     int(rng.integers(37, 60)), 1024, flags=flags, payload=0, signal=near)
    if kind is AttackKind.OS_FINGERPRINT:
        ttl = int(rng.integers(30, 51)) if rng.random() < 0.7 else 255
        if rng.random() < 0.25:
            return _base(rng, Protocol.ICMP, net.attacker, net.server, 0, 0, rng.normal(150, 20), ttl, 0,
                         signal=near)
        flags = _FP_FLAGS[int(rng.integers(len(_FP_FLAGS)))]
        return _base(rng, Protocol.TCP, net.attacker, net.server, _eph(rng),
                     int(rng.choice([1, 22, 80, 443, 8080])), rng.normal(62, 6), ttl,
                     int(rng.choice(_FP_WINDOWS)), flags=flags, payload=0, signal=near)
    raise ValueError(f"no generator for {kind}")


DEAUTH_BURST_ON = 3
DEAUTH_BURST_PERIOD = 5


def _tick_attack_events(w: AttackWindow, tick: int, rng, net, st) -> list[tuple[float, dict]]:
    if w.kind is AttackKind.DEAUTH:
        # aireplay-style bursts: dense frames on 3 of every 5 ticks, same mean rate
        if (tick - w.start_tick) % DEAUTH_BURST_PERIOD >= DEAUTH_BURST_ON:
            return []
        n = rng.poisson(w.intensity * DEAUTH_BURST_PERIOD / DEAUTH_BURST_ON)
        start = rng.uniform(0, TICK_S * 0.5)
        return [(min(start + i * 0.002, TICK_S * 0.999), _attack_event(w.kind, rng, net, st))
                for i in range(n)]
    n = rng.poisson(w.intensity)
    return [(rng.uniform(0, TICK_S), _attack_event(w.kind, rng, net, st)) for _ in range(n)]


def simulate(scenario: Scenario) -> list[PacketRecord]:
    """Generate the labelled record stream for ``scenario`` (deterministic in its seed)."""
    scenario.validate()
    rng = np.random.default_rng(scenario.seed)
    net = _Net(scenario.farm)
    st = _AttackerState(rng)
    raw: list[tuple[float, dict, AttackKind]] = []
    for tick in range(scenario.duration_ticks):
        events = []
        for _ in range(rng.poisson(scenario.benign_rate)):
            events.append((rng.uniform(0, TICK_S), _benign_event(rng, net), AttackKind.BENIGN))
        for w in scenario.windows:
            if w.active(tick):
                events.extend((off, ev, w.kind) for off, ev in _tick_attack_events(w, tick, rng, net, st))
        events.sort(key=lambda e: e[0])
        raw.extend((sig6(tick * TICK_S + off), ev, kind) for off, ev, kind in events)
    raw.sort(key=lambda e: e[0])
    return _finalise(raw)


def _finalise(raw) -> list[PacketRecord]:
    out = []
    recent: deque[float] = deque()
    per_src: dict[str, deque] = {}
    per_src_ports: dict[str, Counter] = {}
    prev_ts = None
    for i, (ts, ev, kind) in enumerate(raw):
        while recent and recent[0] <= ts - TICK_S:
            recent.popleft()
        recent.append(ts)

        src = ev["src_ip"]
        q = per_src.setdefault(src, deque())
        ports = per_src_ports.setdefault(src, Counter())
        while q and q[0][0] <= ts - PORT_WINDOW_S:
            _, old = q.popleft()
            ports[old] -= 1
            if not ports[old]:
                del ports[old]
        if ev["dst_port"] > 0:
            q.append((ts, ev["dst_port"]))
            ports[ev["dst_port"]] += 1

        delta = 0.0 if prev_ts is None else (ts - prev_ts) * 1000.0
        prev_ts = ts
        out.append(PacketRecord(
            time_delta_ms=sig6(delta),
            rate_last_100ms=float(len(recent)),
            distinct_dst_ports_window=len(ports),
            frame_number=i + 1,
            timestamp=ts,
            is_attack=int(kind is not AttackKind.BENIGN),
            attack_type=kind,
            **ev,
        ))
    return out


def _format(name: str, value) -> str:
    if name in _FLOAT_FIELDS:
        return f"{value:.6g}"
    if name in _BOOL_FIELDS:
        return "1" if value else "0"
    if isinstance(value, enum.Enum):
        return str(value.value)
    return str(value)


def _parse(name: str, text: str):
    if name in _FLOAT_FIELDS:
        return float(text)
    if name in _BOOL_FIELDS:
        return text == "1"
    if name in _STR_FIELDS:
        return text
    if name == "protocol":
        return Protocol(text)
    if name == "attack_type":
        return AttackKind(text)
    return int(text)


def emit_dataset(records: list[PacketRecord], path) -> Path:
    """Write ``records`` as CSV with a header in field order."""
    if not records:
        raise ValueError("refusing to write an empty dataset")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIELD_NAMES)
        for r in records:
            w.writerow([_format(n, getattr(r, n)) for n in FIELD_NAMES])
    return path


def read_dataset(path) -> list[PacketRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != FIELD_NAMES:
            raise ValueError(f"{path}: unexpected header {header}")
        return [PacketRecord(**{n: _parse(n, v) for n, v in zip(header, row)}) for row in reader]


def records_to_columns(records: list[PacketRecord]) -> dict[str, list]:
    """Column-oriented view with CSV-style scalar values (enum values, not members)."""
    cols: dict[str, list] = {n: [] for n in FIELD_NAMES}
    for r in records:
        for n in FIELD_NAMES:
            v = getattr(r, n)
            cols[n].append(v.value if isinstance(v, enum.Enum) else v)
    return cols


def dataset_filename(farm: str) -> str:
    return DATASET_NAMES[farm]


def bundled_scenario(farm: str) -> Scenario:
    """The default scenario shipped for ``farm`` ("A" or "B")."""
    from importlib import resources

    name = {"A": "farm_a.json", "B": "farm_b.json"}[farm]
    with resources.files("csfguard.data").joinpath(name).open() as fh:
        return Scenario.from_dict(json.load(fh))
