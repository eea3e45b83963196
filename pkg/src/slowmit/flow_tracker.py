"""Per-connection online metrics.

Only client-to-server packets produce rate and distance samples; server
packets just extend the connection's last-seen time. Every packet that feeds
the metrics is called *eligible*; with the handshake excluded, the client's
SYN and the pure ACK that completes the three-way handshake are not eligible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .trace_io import LabeledTrace, PacketRecord, TcpFlag, seconds_to_us


class HandshakePhase(enum.Enum):
    AWAIT_SYN = "await_syn"
    AWAIT_ACK = "await_ack"
    ESTABLISHED = "established"


@dataclass(frozen=True, slots=True)
class FlowKey:
    client_ip: str
    client_port: int
    server_ip: str
    server_port: int


class RunningStats:
    """Welford accumulator; ``variance`` is the population variance."""

    __slots__ = ("n", "mean", "m2")

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def push(self, x: float) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    @property
    def variance(self) -> float:
        return self.m2 / self.n if self.n else math.nan


@dataclass(slots=True)
class ConnectionState:
    key: FlowKey
    first_us: Optional[int] = None
    last_us: Optional[int] = None
    last_client_us: Optional[int] = None
    pkt_count: int = 0
    prev_gap_us: Optional[int] = None
    last_gap_us: Optional[int] = None
    rates: RunningStats = field(default_factory=RunningStats)
    phase: HandshakePhase = HandshakePhase.AWAIT_SYN
    closed: bool = False
    last_swept_us: Optional[int] = None

    @property
    def first_ts(self) -> Optional[float]:
        return None if self.first_us is None else self.first_us / 1e6

    @property
    def last_ts(self) -> Optional[float]:
        return None if self.last_us is None else self.last_us / 1e6


@dataclass(frozen=True, slots=True)
class MetricSnapshot:
    """Derived metrics at one instant; None marks insufficient data.

    ``d`` duration (s), ``p`` packet rate (Hz), ``delta`` distance
    difference (s), ``pbar`` mean rate (Hz), ``var`` rate variance (Hz^2).
    """

    key: FlowKey
    ts: float
    d: Optional[float] = None
    p: Optional[float] = None
    delta: Optional[float] = None
    pbar: Optional[float] = None
    var: Optional[float] = None
    swept: bool = False


def connection_metrics(state: ConnectionState, now: float) -> MetricSnapshot:
    """Metrics of ``state`` as of ``now`` without mutating it."""
    if state.first_us is None:
        return MetricSnapshot(state.key, now)
    d = now - state.first_us / 1e6
    # the rate is pinned to the last eligible arrival so a read-out is reproducible
    elapsed_us = (state.last_client_us or state.first_us) - state.first_us
    p = state.pkt_count / (elapsed_us / 1e6) if state.pkt_count >= 2 and elapsed_us > 0 else None
    delta = None
    if state.prev_gap_us is not None and state.last_gap_us is not None:
        delta = abs(state.last_gap_us - state.prev_gap_us) / 1e6
    rates = state.rates
    return MetricSnapshot(
        state.key,
        now,
        d=d,
        p=p,
        delta=delta,
        pbar=rates.mean if rates.n >= 1 else None,
        var=rates.variance if rates.n >= 2 else None,
    )


class FlowTracker:
    """State table keyed by connection for one protected target."""

    def __init__(self, target, include_handshake: bool = True):
        self.target = target
        self.include_handshake = include_handshake
        self.table: Dict[FlowKey, ConnectionState] = {}

    def _key(self, pkt: PacketRecord):
        t_ip, t_port = self.target
        if pkt.dst_ip == t_ip and (t_port is None or pkt.dst_port == t_port):
            return FlowKey(pkt.src_ip, pkt.src_port, pkt.dst_ip, pkt.dst_port), True
        return FlowKey(pkt.dst_ip, pkt.dst_port, pkt.src_ip, pkt.src_port), False

    def _eligible(self, state: ConnectionState, pkt: PacketRecord) -> bool:
        syn = pkt.has(TcpFlag.SYN)
        if state.phase is HandshakePhase.AWAIT_SYN:
            state.phase = HandshakePhase.AWAIT_ACK if syn else HandshakePhase.ESTABLISHED
        elif state.phase is HandshakePhase.AWAIT_ACK and not syn:
            state.phase = HandshakePhase.ESTABLISHED
            pure_ack = (
                pkt.payload_len == 0
                and pkt.has(TcpFlag.ACK)
                and not pkt.flags & (TcpFlag.FIN | TcpFlag.RST)
            )
            return self.include_handshake or not pure_ack
        return self.include_handshake or not syn

    def ingest(self, pkt: PacketRecord) -> Optional[MetricSnapshot]:
        """Update the table with one packet; returns the arrival's metrics if eligible."""
        key, from_client = self._key(pkt)
        state = self.table.get(key)
        if state is None or (state.closed and from_client and pkt.has(TcpFlag.SYN)):
            state = self.table[key] = ConnectionState(key)
        elif state.closed:
            return None
        closing = bool(pkt.flags & (TcpFlag.FIN | TcpFlag.RST))
        snap = None
        if from_client and self._eligible(state, pkt):
            t = pkt.ts_us
            if state.first_us is None:
                state.first_us = t
            elif state.last_client_us is not None:
                state.prev_gap_us = state.last_gap_us
                state.last_gap_us = t - state.last_client_us
            state.last_client_us = t
            state.pkt_count += 1
            elapsed_us = t - state.first_us
            if state.pkt_count >= 2 and elapsed_us > 0:
                state.rates.push(state.pkt_count / (elapsed_us / 1e6))
            state.last_us = t
            snap = connection_metrics(state, pkt.ts)
        elif state.first_us is not None:
            state.last_us = max(state.last_us, pkt.ts_us)
        if closing:
            state.closed = True
        return snap

    def sweep_idle(self, now: float) -> List[MetricSnapshot]:
        """Duration-only snapshot for every open connection that has started."""
        now_us = seconds_to_us(now)
        out = []
        for state in self.table.values():
            if state.closed or state.first_us is None:
                continue
            state.last_swept_us = now_us
            out.append(MetricSnapshot(state.key, now, d=now - state.first_us / 1e6, swept=True))
        return out


@dataclass
class MetricStream:
    """Column-oriented record of every metric snapshot of one trace replay.

    Rows are in time order. Absent metrics are NaN. ``client`` indexes into
    ``clients``; ``first_seen`` holds each client's first eligible arrival
    (NaN if it never had one).
    """

    ts: np.ndarray
    client: np.ndarray
    d: np.ndarray
    p: np.ndarray
    delta: np.ndarray
    pbar: np.ndarray
    var: np.ndarray
    swept: np.ndarray
    clients: List[str]
    first_seen: np.ndarray

    def __len__(self) -> int:
        return len(self.ts)

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)


def _nan(x: Optional[float]) -> float:
    return math.nan if x is None else x


def track(
    trace: LabeledTrace,
    include_handshake: bool = True,
    sweep_interval: Optional[float] = None,
) -> MetricStream:
    """Replay ``trace`` through a FlowTracker and collect every snapshot.

    With ``sweep_interval`` set, open connections are also swept on a fixed
    clock starting at the first packet, so idle connections keep producing
    duration samples.
    """
    tracker = FlowTracker(trace.target, include_handshake)
    clients = sorted(trace.clients())
    index = {ip: i for i, ip in enumerate(clients)}
    first_seen = np.full(len(clients), math.nan)
    rows = []

    def emit(snap: MetricSnapshot):
        rows.append((snap.ts, index[snap.key.client_ip], _nan(snap.d), _nan(snap.p),
                     _nan(snap.delta), _nan(snap.pbar), _nan(snap.var), snap.swept))

    next_sweep = None
    if sweep_interval is not None and trace.packets:
        next_sweep = trace.packets[0].ts_us + seconds_to_us(sweep_interval)
    for pkt in trace.packets:
        while next_sweep is not None and next_sweep <= pkt.ts_us:
            for snap in tracker.sweep_idle(next_sweep / 1e6):
                emit(snap)
            next_sweep += seconds_to_us(sweep_interval)
        snap = tracker.ingest(pkt)
        if snap is not None:
            i = index[snap.key.client_ip]
            if math.isnan(first_seen[i]):
                first_seen[i] = snap.ts
            emit(snap)

    cols = list(zip(*rows)) if rows else [()] * 8
    return MetricStream(
        ts=np.asarray(cols[0], dtype=float),
        client=np.asarray(cols[1], dtype=np.int64),
        d=np.asarray(cols[2], dtype=float),
        p=np.asarray(cols[3], dtype=float),
        delta=np.asarray(cols[4], dtype=float),
        pbar=np.asarray(cols[5], dtype=float),
        var=np.asarray(cols[6], dtype=float),
        swept=np.asarray(cols[7], dtype=bool),
        clients=clients,
        first_seen=first_seen,
    )
