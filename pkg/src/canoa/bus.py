"""Discrete-event simulation of a CAN network with scripted attacks."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .can import CanFrame, LOG_HEADER, arbitrate, format_log_line, parse_log_line, serialize_frame

ATTACK_KINDS = ("impersonation", "added_device")
IFS_BITS = 3


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class FrameSpec:
    id: int
    dlc: int
    period_s: float
    phase_s: float = 0.0


@dataclass
class EcuNode:
    name: str
    schedule: list[FrameSpec] = field(default_factory=list)

    @property
    def owned_ids(self) -> set[int]:
        return {f.id for f in self.schedule}


@dataclass(frozen=True)
class AttackScenario:
    kind: str
    attacker: str
    victim_id: int
    start: float
    rate_hz: float
    stop: float | None = None


@dataclass
class NetworkConfig:
    ecus: list[EcuNode]
    bitrate_bps: float = 500_000.0
    jitter_frac: float = 0.01
    attacks: list[AttackScenario] = field(default_factory=list)
    # free-form sections passed on to the power/auth stages
    extra: dict[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class LogEvent:
    frame: CanFrame
    sender: str
    spoofed: bool

    @property
    def t(self) -> float:
        return self.frame.timestamp


@dataclass(frozen=True)
class Interval:
    t_start: float
    t_end: float
    bits: tuple[int, ...]
    event: int  # index into the bus log

    @property
    def nbits(self) -> int:
        return len(self.bits)


@dataclass
class SimResult:
    log: list[LogEvent]
    timeline: dict[str, list[Interval]]
    dropped: list[tuple[float, str, int]]
    bitrate_bps: float
    duration: float
    stats: dict[str, Any]

    def ownership(self) -> dict[int, str]:
        return self.stats["ownership"]


def _parse_id(v) -> int:
    return int(v, 0) if isinstance(v, str) else int(v)


def parse_config(text: str) -> NetworkConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config parse error: {e}") from e
    try:
        net = doc.get("network", {})
        ecus = []
        for e in doc.get("ecu", []):
            sched = [FrameSpec(_parse_id(f["id"]), int(f.get("dlc", 8)),
                               float(f["period_s"]), float(f.get("phase_s", 0.0)))
                     for f in e.get("frames", [])]
            ecus.append(EcuNode(str(e["name"]), sched))
        attacks = [AttackScenario(str(a["kind"]), str(a["attacker"]), _parse_id(a["victim_id"]),
                                  float(a.get("start_s", 0.0)), float(a["rate_hz"]),
                                  float(a["stop_s"]) if "stop_s" in a else None)
                   for a in doc.get("attack", [])]
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"config error: {e}") from e
    extra = {k: v for k, v in doc.items() if k not in ("network", "ecu", "attack")}
    return NetworkConfig(ecus, float(net.get("bitrate_bps", 500_000)),
                         float(net.get("jitter_frac", 0.01)), attacks, extra)


def load_config(path: str | Path) -> NetworkConfig:
    return parse_config(Path(path).read_text())


def reference_config_path() -> Path:
    return Path(__file__).with_name("data") / "reference.toml"


def reference_config() -> NetworkConfig:
    return load_config(reference_config_path())


class Simulation:
    """A validated network plus the attacks injected into it."""

    def __init__(self, config: NetworkConfig):
        self.config = config
        self.attacks: list[AttackScenario] = []

    @property
    def nodes(self) -> list[EcuNode]:
        return self.config.ecus

    @property
    def bitrate(self) -> float:
        return self.config.bitrate_bps

    @property
    def pending(self) -> list[tuple[str, FrameSpec]]:
        return [(n.name, f) for n in self.nodes for f in n.schedule]

    def ownership(self) -> dict[int, str]:
        return {i: n.name for n in self.nodes for i in n.owned_ids}

    def _spec_for(self, frame_id: int) -> FrameSpec:
        for n in self.nodes:
            for f in n.schedule:
                if f.id == frame_id:
                    return f
        raise ConfigError("unknown victim id")


def build_network(config: NetworkConfig) -> Simulation:
    if not config.ecus:
        raise ConfigError("empty network")
    if not config.bitrate_bps > 0:
        raise ConfigError("bitrate must be positive")
    names = [n.name for n in config.ecus]
    if len(set(names)) != len(names):
        raise ConfigError("duplicate ecu name")
    seen: dict[int, str] = {}
    for n in config.ecus:
        for f in n.schedule:
            if not 0 <= f.id <= 0x7FF or not 0 <= f.dlc <= 8:
                raise ConfigError(f"invalid frame spec {f}")
            if not f.period_s > 0 or f.phase_s < 0:
                raise ConfigError(f"invalid period/phase for {f.id:03X}")
            if f.id in seen:
                raise ConfigError(f"ownership conflict: {f.id:03X} on {seen[f.id]} and {n.name}")
            seen[f.id] = n.name
    sim = Simulation(config)
    for a in config.attacks:
        sim = inject(sim, a)
    return sim


def inject(sim: Simulation, attack: AttackScenario) -> Simulation:
    owners = sim.ownership()
    if attack.kind not in ATTACK_KINDS:
        raise ConfigError(f"unknown attack kind {attack.kind!r}")
    if attack.victim_id not in owners:
        raise ConfigError("unknown victim id")
    if owners[attack.victim_id] == attack.attacker:
        raise ConfigError("attacker already owns victim id")
    names = {n.name for n in sim.nodes}
    if attack.kind == "impersonation" and attack.attacker not in names:
        raise ConfigError(f"impersonation attacker {attack.attacker!r} is not a network node")
    if attack.kind == "added_device" and attack.attacker in names:
        raise ConfigError(f"added device {attack.attacker!r} clashes with an existing node")
    if attack.start < 0 or not attack.rate_hz > 0:
        raise ConfigError("invalid attack timing")
    out = Simulation(sim.config)
    out.attacks = sim.attacks + [attack]
    return out


@dataclass(order=True)
class _Emission:
    release: float
    seq: int
    node: str = field(compare=False)
    id: int = field(compare=False)
    dlc: int = field(compare=False)
    spoofed: bool = field(compare=False)


def _releases(rng, period, phase, stop, jitter_frac):
    n = int(np.ceil((stop - phase) / period - 1e-9)) if stop > phase else 0
    nominal = phase + period * np.arange(n)
    jitter = rng.uniform(-jitter_frac * period, jitter_frac * period, size=n)
    return np.maximum(nominal + jitter, 0.0)


def run(sim: Simulation, duration: float, seed: int) -> SimResult:
    """Run the network for `duration` seconds; deterministic given `seed`."""
    if not duration > 0:
        raise ValueError("duration must be positive")
    cfg = sim.config
    rng = np.random.default_rng(seed)
    bit_t = 1.0 / cfg.bitrate_bps

    emissions: list[_Emission] = []
    for node in sim.nodes:
        for spec in node.schedule:
            for r in _releases(rng, spec.period_s, spec.phase_s, duration, cfg.jitter_frac):
                emissions.append(_Emission(float(r), 0, node.name, spec.id, spec.dlc, False))
    for a in sim.attacks:
        stop = min(duration, a.stop) if a.stop is not None else duration
        dlc = sim._spec_for(a.victim_id).dlc
        for r in _releases(rng, 1.0 / a.rate_hz, a.start, stop, cfg.jitter_frac):
            emissions.append(_Emission(float(r), 0, a.attacker, a.victim_id, dlc, True))
    emissions.sort(key=lambda e: (e.release, e.id, e.node))
    for i, e in enumerate(emissions):
        e.seq = i

    log: list[LogEvent] = []
    timeline: dict[str, list[Interval]] = {n.name: [] for n in sim.nodes}
    for a in sim.attacks:
        timeline.setdefault(a.attacker, [])
    dropped: list[tuple[float, str, int]] = []
    last_payload: dict[int, bytes] = {}
    max_wait: dict[int, float] = {}

    queue: dict[str, list[tuple[int, int, _Emission]]] = {}
    nxt = 0
    t_free = 0.0
    busy = 0.0
    while True:
        if not any(queue.values()):
            if nxt == len(emissions):
                break
            t = max(t_free, emissions[nxt].release)
        else:
            t = t_free
        while nxt < len(emissions) and emissions[nxt].release <= t:
            e = emissions[nxt]
            heapq.heappush(queue.setdefault(e.node, []), (e.id, e.seq, e))
            nxt += 1
        offers = [q[0][2] for q in queue.values() if q]
        # Two nodes driving one ID would collide; the earlier release goes first.
        by_id: dict[int, _Emission] = {}
        for e in sorted(offers, key=lambda e: e.seq):
            by_id.setdefault(e.id, e)
        winner_id = arbitrate(CanFrame(i, 0) for i in by_id).id
        e = by_id[winner_id]
        heapq.heappop(queue[e.node])

        if e.spoofed and e.id in last_payload:
            payload = last_payload[e.id]
        else:
            payload = rng.integers(0, 256, size=e.dlc, dtype=np.uint8).tobytes()
        frame = CanFrame(e.id, e.dlc, payload, t)
        bits = tuple(serialize_frame(frame))
        t_end = t + len(bits) * bit_t
        if t_end > duration:
            dropped.append((e.release, e.node, e.id))
            continue
        if not e.spoofed:
            last_payload[e.id] = payload
        max_wait[e.id] = max(max_wait.get(e.id, 0.0), t - e.release)
        timeline[e.node].append(Interval(t, t_end, bits, len(log)))
        log.append(LogEvent(frame, e.node, e.spoofed))
        busy += t_end - t
        t_free = t_end + IFS_BITS * bit_t

    stats = {
        "frames": len(log),
        "spoofed": sum(ev.spoofed for ev in log),
        "dropped": len(dropped),
        "utilization": busy / duration,
        "max_queue_delay_s": {f"{k:03X}": v for k, v in sorted(max_wait.items())},
        "ownership": sim.ownership(),
    }
    return SimResult(log, timeline, dropped, cfg.bitrate_bps, duration, stats)


# File formats ----------------------------------------------------------------

def format_log(log: list[LogEvent]) -> str:
    lines = [LOG_HEADER] + [format_log_line(ev.frame, ev.sender, ev.spoofed) for ev in log]
    return "\n".join(lines) + "\n"


def parse_log(text: str) -> list[LogEvent]:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0].strip() != LOG_HEADER:
        raise ValueError("not a frame log")
    return [LogEvent(*parse_log_line(ln)) for ln in lines[1:]]


TIMELINE_HEADER = "ecu,t_start,t_end,nbits,event"


def format_timeline(timeline: dict[str, list[Interval]]) -> str:
    lines = [TIMELINE_HEADER]
    for ecu in sorted(timeline):
        for iv in timeline[ecu]:
            lines.append(f"{ecu},{iv.t_start:.9f},{iv.t_end:.9f},{iv.nbits},{iv.event}")
    return "\n".join(lines) + "\n"


def timeline_from_log(log: list[LogEvent], bitrate_bps: float,
                      ecus: list[str] | None = None) -> dict[str, list[Interval]]:
    """Rebuild per-ECU intervals from a frame log by re-serializing each frame."""
    tl: dict[str, list[Interval]] = {e: [] for e in (ecus or [])}
    for i, ev in enumerate(log):
        bits = tuple(serialize_frame(ev.frame))
        tl.setdefault(ev.sender, []).append(
            Interval(ev.t, ev.t + len(bits) * (1.0 / bitrate_bps), bits, i))
    return tl
