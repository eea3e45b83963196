"""Discrete-event replay of detect -> identify -> mitigate against a worker-pool server.

The server holds one worker slot per admitted connection until the
connection finishes (FIN/RST) or its request times out; connections that
find the pool full wait in a FIFO backlog. A controller probes the server
every ``probe_interval``. While the server is unreachable it runs the
configured scheme over the mirrored traffic, blocks every classified client
and tears down that client's connections with spoofed RSTs.
"""

from __future__ import annotations

import enum
import heapq
import json
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Set

from .flow_tracker import FlowKey, FlowTracker, MetricSnapshot
from .schemes import ClassificationEvent, SchemeConfig, StrikeRegistry, is_suspicious
from .trace_io import LabeledTrace, PacketRecord, TcpFlag, seconds_to_us


class Phase(enum.Enum):
    MONITORING = "monitoring"
    IDENTIFYING = "identifying"
    MITIGATING = "mitigating"


@dataclass
class ServerConfig:
    pool_size: int = 150
    request_timeout: float = 300.0


@dataclass
class ControllerConfig:
    scheme: SchemeConfig
    probe_interval: float = 1.0


def load_sim_config(path) -> tuple:
    """Parse ``{"server": {...}, "controller": {"probe_interval", "scheme"}}``.

    ``scheme`` is an inline scheme config or a path to one, relative to the
    simulation config file.
    """
    path = Path(path)
    doc = json.loads(path.read_text())
    server = ServerConfig(**doc.get("server", {}))
    ctl = dict(doc["controller"])
    scheme = ctl.pop("scheme")
    if isinstance(scheme, str):
        scheme = json.loads((path.parent / scheme).read_text())
    return server, ControllerConfig(SchemeConfig.from_dict(scheme), **ctl)


class ServerModel:
    """Finite worker pool; all times are integer microseconds."""

    def __init__(self, target, pool_size: int = 150, request_timeout: float = 300.0):
        self.target = target
        self.pool_size = pool_size
        self.timeout_us = seconds_to_us(request_timeout)
        self.occupied: Dict[FlowKey, int] = {}
        self.backlog: "OrderedDict[FlowKey, None]" = OrderedDict()
        self.finished: Set[FlowKey] = set()
        self._timeouts: list = []
        self.acquisitions = 0
        self.releases = 0
        self.downtime_us = 0
        self.down_since: Optional[int] = None
        self.first_exhausted: Optional[int] = None

    @property
    def reachable(self) -> bool:
        return len(self.occupied) < self.pool_size

    def _note(self, now_us: int):
        if not self.reachable and self.down_since is None:
            self.down_since = now_us
            if self.first_exhausted is None:
                self.first_exhausted = now_us
        elif self.reachable and self.down_since is not None:
            self.downtime_us += now_us - self.down_since
            self.down_since = None

    def _admit(self, key: FlowKey, now_us: int):
        self.occupied[key] = now_us
        self.acquisitions += 1
        # acquisition count breaks ties so keys are never compared
        heapq.heappush(self._timeouts, (now_us + self.timeout_us, self.acquisitions, now_us, key))

    def _fill(self, now_us: int):
        while self.backlog and self.reachable:
            key, _ = self.backlog.popitem(last=False)
            self._admit(key, now_us)

    def release(self, key: FlowKey, now_us: int) -> bool:
        """End ``key`` wherever it is; returns True if it held a slot."""
        self.finished.add(key)
        if key in self.backlog:
            del self.backlog[key]
            return False
        if key not in self.occupied:
            return False
        del self.occupied[key]
        self.releases += 1
        self._fill(now_us)
        self._note(now_us)
        return True

    def advance(self, now_us: int):
        """Expire request timeouts up to ``now_us``."""
        while self._timeouts and self._timeouts[0][0] <= now_us:
            expiry, _, acquired, key = heapq.heappop(self._timeouts)
            if self.occupied.get(key) == acquired:
                self.release(key, expiry)

    def step(self, pkt: Optional[PacketRecord], now_us: int) -> bool:
        """Advance to ``now_us`` and apply one packet (or just the timer); returns reachability."""
        self.advance(now_us)
        if pkt is not None:
            t_ip, t_port = self.target
            from_client = pkt.dst_ip == t_ip and (t_port is None or pkt.dst_port == t_port)
            if from_client:
                key = FlowKey(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port)
            else:
                key = FlowKey(pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port)
            if pkt.flags & (TcpFlag.FIN | TcpFlag.RST):
                self.release(key, now_us)
            elif from_client and key not in self.occupied and key not in self.backlog:
                if key not in self.finished or pkt.has(TcpFlag.SYN):
                    self.finished.discard(key)
                    self.backlog[key] = None
                    self._fill(now_us)
        self._note(now_us)
        return self.reachable

    def connections_of(self, client_ip: str) -> List[FlowKey]:
        keys = list(self.occupied) + list(self.backlog)
        return [k for k in keys if k.client_ip == client_ip]

    def close_downtime(self, now_us: int):
        if self.down_since is not None:
            self.downtime_us += now_us - self.down_since
            self.down_since = now_us


class Controller:
    """Probe-driven phase machine plus the online identification pipeline."""

    def __init__(self, target, config: ControllerConfig,
                 classifier: Optional[Callable[[MetricSnapshot], bool]] = None):
        self.cfg = config.scheme
        self.probe_interval_us = seconds_to_us(config.probe_interval)
        self.phase = Phase.MONITORING
        self.blocked: Set[str] = set()
        self.tracker = FlowTracker(target, self.cfg.effective_handshake)
        self.registry = StrikeRegistry(self.cfg)
        self.classifier = classifier or (lambda snap: is_suspicious(snap, self.cfg))
        self.events: List[ClassificationEvent] = []
        self.log: List[dict] = []
        self.last_block_us: Optional[int] = None

    def _set_phase(self, phase: Phase, now_us: int):
        if phase is not self.phase:
            self.phase = phase
            self.log.append({"t": now_us / 1e6, "action": "phase", "phase": phase.value})

    def observe(self, snap: MetricSnapshot, model: ServerModel, now_us: int):
        ip = snap.key.client_ip
        if snap.swept:
            if ip not in self.registry.first_seen:
                return
        else:
            self.registry.observe(ip, snap.ts)
        if self.phase is Phase.MONITORING or ip in self.blocked:
            return
        event = self.registry.apply_strike(ip, snap.ts, self.classifier(snap))
        if event is not None:
            self.mitigate(event, model, now_us)

    def on_packet(self, pkt: PacketRecord, model: ServerModel):
        snap = self.tracker.ingest(pkt)
        if snap is not None:
            self.observe(snap, model, pkt.ts_us)

    def mitigate(self, event: ClassificationEvent, model: ServerModel, now_us: int) -> List[dict]:
        """Block the client and RST each of its connections; no-op if already blocked."""
        ip = event.client_ip
        if ip in self.blocked or self.phase is Phase.MONITORING:
            return []
        self.blocked.add(ip)
        self.events.append(event)
        self.last_block_us = now_us
        self._set_phase(Phase.MITIGATING, now_us)
        actions = [{"t": now_us / 1e6, "action": "block", "ip": ip}]
        for key in model.connections_of(ip):
            model.release(key, now_us)
            actions.append({"t": now_us / 1e6, "action": "rst", "ip": ip, "port": key.client_port})
        self.log.extend(actions)
        return actions

    def probe(self, model: ServerModel, now_us: int) -> Phase:
        if not model.step(None, now_us):
            if self.phase is Phase.MONITORING:
                self._set_phase(Phase.IDENTIFYING, now_us)
        elif self.phase is not Phase.MONITORING:
            quiet = self.last_block_us is None or now_us - self.last_block_us >= self.probe_interval_us
            if quiet:
                self._set_phase(Phase.MONITORING, now_us)
        return self.phase


@dataclass
class SimulationReport:
    downtime: float
    exhausted_at: Optional[float]
    time_to_last_block: Optional[float]
    blocked_attackers: int
    blocked_benign: int
    reachable_at_end: bool
    final_phase: str
    events: List[ClassificationEvent] = field(default_factory=list)
    actions: List[dict] = field(default_factory=list)
    slots_acquired: int = 0
    slots_released: int = 0

    def to_dict(self) -> dict:
        return {
            "downtime_s": self.downtime,
            "exhausted_at_s": self.exhausted_at,
            "time_to_last_block_s": self.time_to_last_block,
            "blocked_attackers": self.blocked_attackers,
            "blocked_benign": self.blocked_benign,
            "reachable_at_end": self.reachable_at_end,
            "final_phase": self.final_phase,
            "slots_acquired": self.slots_acquired,
            "slots_released": self.slots_released,
            "events": [
                {"ip": e.client_ip, "t_detect": e.detection_ts, "t_first": e.first_seen_ts} for e in self.events
            ],
            "actions": self.actions,
        }


def run_pipeline(trace: LabeledTrace, controller: ControllerConfig, server: ServerConfig = ServerConfig(),
                 classifier: Optional[Callable[[MetricSnapshot], bool]] = None,
                 tail: Optional[float] = None) -> SimulationReport:
    """Replay ``trace`` through server and controller.

    Probes tick from the first packet; the run continues ``tail`` seconds
    (default two probe intervals) past the last packet so the controller can
    settle.
    """
    model = ServerModel(trace.target, server.pool_size, server.request_timeout)
    ctl = Controller(trace.target, controller, classifier)
    step = ctl.probe_interval_us
    sweep_us = seconds_to_us(ctl.cfg.sweep_interval) if ctl.cfg.sweep_interval else None
    if not trace.packets:
        return SimulationReport(0.0, None, None, 0, 0, True, ctl.phase.value)
    start = trace.packets[0].ts_us
    end = trace.packets[-1].ts_us + (seconds_to_us(tail) if tail is not None else 2 * step)
    next_probe, next_sweep = start, (start + sweep_us if sweep_us else None)

    def timers_until(t_us: int):
        nonlocal next_probe, next_sweep
        while True:
            nxt = min(x for x in (next_probe, next_sweep) if x is not None)
            if nxt > t_us:
                return
            if next_sweep is not None and next_sweep == nxt:
                model.advance(nxt)
                for snap in ctl.tracker.sweep_idle(nxt / 1e6):
                    ctl.observe(snap, model, nxt)
                next_sweep += sweep_us
            if next_probe == nxt:
                ctl.probe(model, nxt)
                next_probe += step

    for pkt in trace.packets:
        timers_until(pkt.ts_us)
        if trace.client_ip(pkt) in ctl.blocked:
            continue
        model.step(pkt, pkt.ts_us)
        ctl.on_packet(pkt, model)
    timers_until(end)
    model.advance(end)
    model.close_downtime(end)

    blocked_attackers = len(ctl.blocked & trace.attacker_ips)
    last_block = ctl.last_block_us
    exhausted = model.first_exhausted
    return SimulationReport(
        downtime=model.downtime_us / 1e6,
        exhausted_at=None if exhausted is None else exhausted / 1e6,
        time_to_last_block=None if last_block is None or exhausted is None else (last_block - exhausted) / 1e6,
        blocked_attackers=blocked_attackers,
        blocked_benign=len(ctl.blocked) - blocked_attackers,
        reachable_at_end=model.reachable,
        final_phase=ctl.phase.value,
        events=ctl.events,
        actions=ctl.log,
        slots_acquired=model.acquisitions,
        slots_released=model.releases,
    )
