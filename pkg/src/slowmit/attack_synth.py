"""Synthetic slow-attack and benign traffic, emitted as labeled traces.

Payloads are placeholders: only packet timing, flags and payload lengths are
generated. All generators are deterministic for a fixed ``rng_seed``; every
timestamp is snapped to whole microseconds before any gap is derived, so
fixed-interval senders produce exactly equal gaps.
"""

from __future__ import annotations

import enum
import ipaddress
import itertools
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .trace_io import LabeledTrace, PacketRecord, TcpFlag, seconds_to_us, sort_packets

DEFAULT_TARGET = ("10.0.0.80", 80)
ATTACKER_BLOCK = "128.10.0.0/16"
BENIGN_BLOCK = "192.168.0.0/16"

SYN = TcpFlag.SYN
ACK = TcpFlag.ACK
SYNACK = TcpFlag.SYN | TcpFlag.ACK
PSHACK = TcpFlag.PSH | TcpFlag.ACK
FINACK = TcpFlag.FIN | TcpFlag.ACK

_INTRA_BURST_US = 1000
_HANDSHAKE_GAP_US = 100


class Tool(enum.Enum):
    SLOWLORIS = "slowloris"
    SLOWHTTPTEST = "slowhttptest"
    SLOWLORIS_NG = "slowloris-ng"


_DEFAULT_INTERVAL = {Tool.SLOWLORIS: 15.0, Tool.SLOWHTTPTEST: 30.0, Tool.SLOWLORIS_NG: 15.0}


@dataclass
class AttackProfile:
    tool: Tool
    clients: int = 50
    sockets_per_client: int = 1
    interval: Optional[float] = None
    jitter: Optional[float] = None
    content_length: int = 8192
    body_chunk: int = 10
    burst_per_char: bool = True
    attacker_block: str = ATTACKER_BLOCK
    start_ts: float = 0.0
    duration: float = 600.0
    rng_seed: int = 0
    start_spread: float = 1.0
    rtt: float = 0.02
    target: Tuple[str, int] = DEFAULT_TARGET

    def __post_init__(self):
        self.tool = Tool(self.tool)
        self.target = tuple(self.target)
        if self.interval is None:
            self.interval = _DEFAULT_INTERVAL[self.tool]
        if self.jitter is None:
            self.jitter = 5.0 if self.tool is Tool.SLOWLORIS_NG else 0.0
        if not self.interval > self.jitter >= 0:
            raise ValueError("need interval > jitter >= 0")
        if self.clients < 1 or self.sockets_per_client < 1:
            raise ValueError("clients and sockets_per_client must be >= 1")
        if self.duration < 0:
            raise ValueError("duration must be >= 0")

    @property
    def body_packets(self) -> int:
        return math.ceil(self.content_length / self.body_chunk)

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["tool"] = self.tool.value
        doc["target"] = list(self.target)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "AttackProfile":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown profile fields: {sorted(unknown)}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "AttackProfile":
        return cls.from_dict(json.loads(Path(path).read_text()))


def allocate_ips(block: str, count: int) -> List[str]:
    """First ``count`` host addresses of ``block``, in order."""
    net = ipaddress.ip_network(block, strict=False)
    capacity = net.num_addresses - 2 if net.prefixlen < 31 else net.num_addresses
    if count > capacity:
        raise ValueError(f"{block} holds {capacity} hosts, {count} requested")
    return [str(ip) for ip in itertools.islice(net.hosts(), count)]


class _Emitter:
    def __init__(self, client_ip: str, client_port: int, target):
        self.c = (client_ip, client_port)
        self.s = target
        self.out: List[PacketRecord] = []

    def client(self, t_us: int, flags, size: int = 0):
        self.out.append(PacketRecord(t_us, self.c[0], self.s[0], self.c[1], self.s[1], flags, size))

    def server(self, t_us: int, flags, size: int = 0):
        self.out.append(PacketRecord(t_us, self.s[0], self.c[0], self.s[1], self.c[1], flags, size))

    def handshake(self, t0: int, rtt_us: int) -> int:
        """SYN, SYN-ACK, ACK; returns the time the first request byte goes out."""
        self.client(t0, SYN)
        self.server(t0 + rtt_us, SYNACK)
        self.client(t0 + rtt_us + _HANDSHAKE_GAP_US, ACK)
        return t0 + rtt_us + 2 * _HANDSHAKE_GAP_US

    def data(self, t_us: int, size: int, rtt_us: int):
        self.client(t_us, PSHACK, size)
        self.server(t_us + rtt_us // 2, ACK)


def _sockets(profile: AttackProfile):
    """Yield (emitter, connect time in us, rng) per attack socket."""
    rng = np.random.default_rng(profile.rng_seed)
    ips = allocate_ips(profile.attacker_block, profile.clients)
    start_us = seconds_to_us(profile.start_ts)
    for ip in ips:
        for s in range(profile.sockets_per_client):
            offset = seconds_to_us(rng.uniform(0.0, profile.start_spread)) if profile.start_spread > 0 else 0
            yield _Emitter(ip, 40000 + s, profile.target), start_us + offset, rng


def _finish(profile: AttackProfile, emitters) -> LabeledTrace:
    packets = [p for e in emitters for p in e.out]
    ips = allocate_ips(profile.attacker_block, profile.clients)
    return LabeledTrace(sort_packets(packets), attacker_ips=frozenset(ips), target=profile.target,
                        tool=profile.tool.value)


def synth_slowloris(profile: AttackProfile) -> LabeledTrace:
    """Request line, then one small custom header every ``interval`` seconds."""
    if profile.tool is not Tool.SLOWLORIS:
        raise ValueError("profile.tool must be slowloris")
    end_us = seconds_to_us(profile.start_ts + profile.duration)
    rtt_us, step = seconds_to_us(profile.rtt), seconds_to_us(profile.interval)
    emitters = []
    for em, t0, rng in _sockets(profile):
        t_req = em.handshake(t0, rtt_us)
        em.data(t_req, len(f"GET /?{rng.integers(0, 2000)} HTTP/1.1\r\n"), rtt_us)
        t = t_req + step
        while t <= end_us:
            em.data(t, len(f"X-a: {rng.integers(1, 5000)}\r\n"), rtt_us)
            t += step
        emitters.append(em)
    return _finish(profile, emitters)


def synth_slowhttptest(profile: AttackProfile) -> LabeledTrace:
    """Complete POST headers, then ``body_chunk``-byte body pieces every ``interval``."""
    if profile.tool is not Tool.SLOWHTTPTEST:
        raise ValueError("profile.tool must be slowhttptest")
    end_us = seconds_to_us(profile.start_ts + profile.duration)
    rtt_us, step = seconds_to_us(profile.rtt), seconds_to_us(profile.interval)
    header = (
        "POST / HTTP/1.1\r\nHost: target\r\nUser-Agent: Mozilla/5.0\r\n"
        f"Content-Length: {profile.content_length}\r\n"
        "Content-Type: application/x-www-form-urlencoded\r\n\r\n"
    )
    emitters = []
    for em, t0, _ in _sockets(profile):
        t_req = em.handshake(t0, rtt_us)
        em.data(t_req, len(header), rtt_us)
        for k in range(1, profile.body_packets + 1):
            t = t_req + k * step
            if t > end_us:
                break
            em.data(t, profile.body_chunk, rtt_us)
        emitters.append(em)
    return _finish(profile, emitters)


def _header_line(rng) -> int:
    # "X-abcd: 1234\r\n"-like lines of 12-16 characters
    return int(rng.integers(12, 17))


def synth_slowloris_ng(profile: AttackProfile) -> LabeledTrace:
    """Header lines at ``interval`` +- ``jitter`` seconds, each sent one character per packet."""
    if profile.tool is not Tool.SLOWLORIS_NG:
        raise ValueError("profile.tool must be slowloris-ng")
    end_us = seconds_to_us(profile.start_ts + profile.duration)
    rtt_us = seconds_to_us(profile.rtt)
    emitters = []
    for em, t0, rng in _sockets(profile):
        t_req = em.handshake(t0, rtt_us)
        em.data(t_req, len(f"GET /?{rng.integers(0, 2000)} HTTP/1.1\r\n"), rtt_us)
        burst = t_req
        while True:
            gap = profile.interval + rng.uniform(-profile.jitter, profile.jitter)
            length = _header_line(rng)
            burst += seconds_to_us(gap)
            if burst > end_us:
                break
            if profile.burst_per_char:
                for i in range(length):
                    em.client(burst + i * _INTRA_BURST_US, PSHACK, 1)
                em.server(burst + (length - 1) * _INTRA_BURST_US + rtt_us // 2, ACK)
            else:
                em.data(burst, length, rtt_us)
        emitters.append(em)
    return _finish(profile, emitters)


def synthesize(profile: AttackProfile) -> LabeledTrace:
    return {
        Tool.SLOWLORIS: synth_slowloris,
        Tool.SLOWHTTPTEST: synth_slowhttptest,
        Tool.SLOWLORIS_NG: synth_slowloris_ng,
    }[profile.tool](profile)


# ---------------------------------------------------------------- benign load


@dataclass
class BenignProfile:
    """Web clients with Poisson session arrivals and exponential think times.

    A ``slow_fraction`` of clients browse with long think times and high
    round-trip times, which is what makes rate-based schemes produce false
    positives.
    """

    clients: int = 500
    duration: float = 600.0
    start_ts: float = 0.0
    block: str = BENIGN_BLOCK
    rng_seed: int = 1
    sessions_mean: float = 2.0
    requests_mean: float = 3.0
    think_mean: float = 5.0
    slow_fraction: float = 0.05
    slow_think_mean: float = 40.0
    target: Tuple[str, int] = DEFAULT_TARGET

    def __post_init__(self):
        self.target = tuple(self.target)


def _benign_session(em: _Emitter, rng, t: float, n_requests: int, rtt: float, think_mean: float):
    us = seconds_to_us
    jit = lambda scale: float(rng.exponential(scale))  # noqa: E731
    em.client(us(t), SYN)
    em.server(us(t + rtt), SYNACK)
    t += rtt + jit(2e-4)
    em.client(us(t), ACK)
    t += jit(2e-3)
    for r in range(n_requests):
        em.client(us(t), PSHACK, int(rng.integers(250, 900)))
        seg_t = t + rtt + jit(rtt / 4)
        for seg in range(int(rng.integers(1, 9))):
            em.server(us(seg_t), PSHACK, 1448)
            if seg % 2 == 1:
                em.client(us(seg_t + jit(rtt / 3) + 1e-5), ACK)
            seg_t += jit(rtt / 4) + 1e-5
        t = seg_t + jit(rtt / 3) + 1e-5
        em.client(us(t), ACK)
        if r + 1 < n_requests:
            t += jit(think_mean) + 1e-3
    t += float(rng.uniform(0.05, 5.0))
    em.client(us(t), FINACK)
    em.server(us(t + rtt), FINACK)
    em.client(us(t + 1.5 * rtt + 1e-4), ACK)


def synth_benign(profile: BenignProfile) -> LabeledTrace:
    rng = np.random.default_rng(profile.rng_seed)
    emitters = []
    for ip in allocate_ips(profile.block, profile.clients):
        slow = rng.random() < profile.slow_fraction
        think = profile.slow_think_mean if slow else profile.think_mean
        rtt = float(rng.lognormal(math.log(0.3 if slow else 0.04), 0.5))
        n_sessions = 1 + int(rng.poisson(profile.sessions_mean - 1))
        starts = np.sort(rng.uniform(profile.start_ts, profile.start_ts + profile.duration, n_sessions))
        for port, t in enumerate(starts, start=49152):
            em = _Emitter(ip, port, profile.target)
            _benign_session(em, rng, float(t), int(rng.geometric(1 / profile.requests_mean)), rtt, think)
            emitters.append(em)
    packets = [p for e in emitters for p in e.out]
    return LabeledTrace(sort_packets(packets), target=profile.target, tool="benign")


def merge_traces(benign: LabeledTrace, attack: LabeledTrace, offset: float = 0.0) -> LabeledTrace:
    """Overlay ``attack`` (shifted by ``offset`` seconds) on ``benign`` traffic."""
    if benign.target != attack.target:
        raise ValueError(f"target mismatch: {benign.target} vs {attack.target}")
    clash = benign.clients() & attack.clients()
    if clash:
        raise ValueError(f"client IP collision between traces: {sorted(clash)[:5]}")
    shift = seconds_to_us(offset)
    shifted = (
        PacketRecord(p.ts_us + shift, p.src_ip, p.dst_ip, p.src_port, p.dst_port, p.flags, p.payload_len)
        for p in attack.packets
    )
    return LabeledTrace(
        sort_packets(itertools.chain(benign.packets, shifted)),
        attacker_ips=attack.attacker_ips,
        target=benign.target,
        tool=attack.tool,
    )


def attack_scenario(
    tool: "Tool | str",
    benign_clients: int = 500,
    attack_clients: int = 50,
    duration: float = 600.0,
    seed: int = 0,
    attack_start: float = 0.0,
    **profile_kw,
) -> LabeledTrace:
    """Benign background with one attack overlaid, both seeded from ``seed``."""
    benign = synth_benign(BenignProfile(clients=benign_clients, duration=duration, rng_seed=seed + 1))
    attack = synthesize(
        AttackProfile(Tool(tool), clients=attack_clients, duration=duration - attack_start,
                      start_ts=attack_start, rng_seed=seed, **profile_kw)
    )
    return merge_traces(benign, attack)
