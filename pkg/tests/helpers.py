"""Small trace builders shared by the test modules."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from slowmit.attack_synth import DEFAULT_TARGET
from slowmit.trace_io import LabeledTrace, PacketRecord, TcpFlag, seconds_to_us, sort_packets

DATA = Path(__file__).parent / "data"
TARGET = DEFAULT_TARGET
SYN, ACK, PSHACK, FINACK, RST = TcpFlag.SYN, TcpFlag.ACK, TcpFlag.PSH | TcpFlag.ACK, TcpFlag.FIN | TcpFlag.ACK, TcpFlag.RST


def thresholds():
    return json.loads((DATA / "thresholds.json").read_text())


def reference_rows():
    with open(DATA / "reference_confusion.csv") as f:
        return list(csv.DictReader(f))


def cpkt(t, ip="192.168.0.1", port=50000, flags=PSHACK, size=10, target=TARGET):
    """Client-to-server packet at ``t`` seconds."""
    return PacketRecord(seconds_to_us(t), ip, target[0], port, target[1], flags, size)


def spkt(t, ip="192.168.0.1", port=50000, flags=ACK, size=0, target=TARGET):
    return PacketRecord(seconds_to_us(t), target[0], ip, target[1], port, flags, size)


def connection(times, ip, port=50000, handshake=False, close_at=None):
    """Data packets at ``times``; optional SYN/ACK handshake before the first."""
    out = []
    if handshake:
        t0 = times[0]
        out += [cpkt(t0 - 0.1, ip, port, SYN, 0), spkt(t0 - 0.075, ip, port, SYN | ACK),
                cpkt(t0 - 0.05, ip, port, ACK, 0)]
    out += [cpkt(t, ip, port) for t in times]
    if close_at is not None:
        out.append(cpkt(close_at, ip, port, FINACK, 0))
    return out


def trace_from(conns, attackers, target=TARGET):
    """``conns`` is an iterable of packet lists."""
    pkts = [p for c in conns for p in c]
    return LabeledTrace(sort_packets(pkts), attacker_ips=frozenset(attackers), target=target)


def rate_trace(seed, n_attack=15, n_benign=45, noise=0.1, separable=False, handshake=False):
    """Attackers send every ~15 s, benign clients every ~1 s.

    A ``noise`` fraction of benign clients behave like attackers (slow,
    regular) and the same fraction of attackers send fast, so the classes
    overlap unless ``separable`` is set.
    """
    rng = np.random.default_rng(seed)
    conns, attackers = [], []

    def sender(mean_gap, jitter, n):
        start = float(rng.uniform(0, 5))
        gaps = mean_gap * (1 + jitter * rng.uniform(-1, 1, n - 1))
        return list(start + np.concatenate([[0.0], np.cumsum(gaps)]))

    for i in range(n_attack):
        ip = f"128.10.0.{i + 1}"
        attackers.append(ip)
        fast = not separable and rng.random() < noise
        times = sender(0.8 if fast else 15.0, 0.3, int(rng.integers(4, 12)))
        conns.append(connection(times, ip, handshake=handshake))
    for i in range(n_benign):
        ip = f"192.168.0.{i + 1}"
        slow = not separable and rng.random() < noise
        times = sender(12.0 if slow else 1.0, 0.5, int(rng.integers(3, 15)))
        conns.append(connection(times, ip, handshake=handshake))
    return trace_from(conns, attackers)


# acceptance bookkeeping: (id, passed, summary), printed at the end of the run
ACCEPTANCE = []


class criterion:
    """Context manager recording one acceptance line; failures still propagate."""

    def __init__(self, cid: str, summary: str):
        self.cid, self.summary, self.detail = cid, summary, ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        ok = exc_type is None
        text = self.summary + (f" ({self.detail})" if self.detail else "")
        if not ok and exc is not None and str(exc):
            text += f" -- {str(exc).splitlines()[0]}"
        ACCEPTANCE.append((self.cid, ok, text))
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {self.cid}: {text}")
        return False
