"""Attacker identification schemes and the per-client strike counter.

Each scheme is a per-arrival suspicion test on a :class:`MetricSnapshot`.
A client becomes an attacker once it has accumulated ``strikes_required``
suspicious arrivals over all of its connections. Comparisons are strict and
a missing metric is never suspicious.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from .flow_tracker import MetricSnapshot, MetricStream


class Scheme(enum.Enum):
    LC = "lc"
    LPR = "lpr"
    PDU = "pdu"
    LPR_PDU = "lpr-pdu"
    MPR = "mpr"
    PRV = "prv"

    @classmethod
    def parse(cls, name: "str | Scheme") -> "Scheme":
        if isinstance(name, Scheme):
            return name
        return cls(name.lower().replace("_", "-"))


# threshold name -> snapshot field; LC flags values above, the rest below
THRESHOLD_FIELDS: Dict[Scheme, tuple] = {
    Scheme.LC: ("d",),
    Scheme.LPR: ("p",),
    Scheme.PDU: ("delta",),
    Scheme.LPR_PDU: ("p", "delta"),
    Scheme.MPR: ("pbar",),
    Scheme.PRV: ("var",),
}
_ALL_FIELDS = ("d", "p", "delta", "pbar", "var")


def flags_high(scheme: Scheme) -> bool:
    return scheme is Scheme.LC


@dataclass(frozen=True)
class SchemeConfig:
    scheme: Scheme
    threshold_d: Optional[float] = None
    threshold_p: Optional[float] = None
    threshold_delta: Optional[float] = None
    threshold_pbar: Optional[float] = None
    threshold_var: Optional[float] = None
    include_handshake: bool = True
    strikes_required: int = 1
    sweep_interval: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme.parse(self.scheme))
        wanted = set(THRESHOLD_FIELDS[self.scheme])
        for name in _ALL_FIELDS:
            value = getattr(self, f"threshold_{name}")
            if name in wanted:
                if value is None or not value > 0:
                    raise ValueError(f"{self.scheme.value}: threshold {name!r} must be set and > 0")
            elif value is not None:
                raise ValueError(f"{self.scheme.value}: threshold {name!r} does not apply")
        if self.strikes_required < 1:
            raise ValueError("strikes_required must be >= 1")
        if self.sweep_interval is not None and not self.sweep_interval > 0:
            raise ValueError("sweep_interval must be > 0")

    @classmethod
    def make(cls, scheme, thresholds, **kw) -> "SchemeConfig":
        """Build from a ``{"p": ..., "delta": ...}`` style mapping."""
        return cls(scheme, **{f"threshold_{k}": float(v) for k, v in thresholds.items()}, **kw)

    @property
    def thresholds(self) -> Dict[str, float]:
        return {name: getattr(self, f"threshold_{name}") for name in THRESHOLD_FIELDS[self.scheme]}

    @property
    def effective_handshake(self) -> bool:
        # duration does not depend on handshake accounting: LC always sees every client packet
        return True if self.scheme is Scheme.LC else self.include_handshake

    def with_thresholds(self, **thresholds) -> "SchemeConfig":
        return replace(self, **{f"threshold_{k}": v for k, v in thresholds.items()})

    def to_dict(self) -> dict:
        out = {
            "scheme": self.scheme.value,
            "thresholds": self.thresholds,
            "include_handshake": self.include_handshake,
            "strikes": self.strikes_required,
        }
        if self.sweep_interval is not None:
            out["sweep_interval"] = self.sweep_interval
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemeConfig":
        unknown = set(doc) - {"scheme", "thresholds", "include_handshake", "strikes", "sweep_interval"}
        if unknown:
            raise ValueError(f"unknown scheme config fields: {sorted(unknown)}")
        return cls.make(
            doc["scheme"],
            doc["thresholds"],
            include_handshake=bool(doc.get("include_handshake", True)),
            strikes_required=int(doc.get("strikes", 1)),
            sweep_interval=doc.get("sweep_interval"),
        )


def load_configs(path) -> List[SchemeConfig]:
    """Read one config object or a list of them from a JSON file."""
    doc = json.loads(Path(path).read_text())
    docs = doc if isinstance(doc, list) else [doc]
    return [SchemeConfig.from_dict(d) for d in docs]


# ----------------------------------------------------------------- predicates


def _below(value: Optional[float], threshold: float) -> bool:
    return value is not None and value < threshold


def lc_suspicious(snap: MetricSnapshot, cfg: SchemeConfig) -> bool:
    return snap.d is not None and snap.d > cfg.threshold_d


def lpr_suspicious(snap: MetricSnapshot, cfg: SchemeConfig) -> bool:
    return _below(snap.p, cfg.threshold_p)


def pdu_suspicious(snap: MetricSnapshot, cfg: SchemeConfig) -> bool:
    return _below(snap.delta, cfg.threshold_delta)


def lpr_pdu_suspicious(snap: MetricSnapshot, cfg: SchemeConfig) -> bool:
    return lpr_suspicious(snap, cfg) and pdu_suspicious(snap, cfg)


def mpr_suspicious(snap: MetricSnapshot, cfg: SchemeConfig) -> bool:
    return _below(snap.pbar, cfg.threshold_pbar)


def prv_suspicious(snap: MetricSnapshot, cfg: SchemeConfig) -> bool:
    return _below(snap.var, cfg.threshold_var)


PREDICATES = {
    Scheme.LC: lc_suspicious,
    Scheme.LPR: lpr_suspicious,
    Scheme.PDU: pdu_suspicious,
    Scheme.LPR_PDU: lpr_pdu_suspicious,
    Scheme.MPR: mpr_suspicious,
    Scheme.PRV: prv_suspicious,
}


def is_suspicious(snap: MetricSnapshot, cfg: SchemeConfig) -> bool:
    return PREDICATES[cfg.scheme](snap, cfg)


def suspicious_mask(stream: MetricStream, cfg: SchemeConfig) -> np.ndarray:
    """Vectorised form of :func:`is_suspicious` over every row of ``stream``.

    NaN compares false, which gives the absent-metric rule for free.
    """
    if cfg.scheme is Scheme.LC:
        return stream.d > cfg.threshold_d
    mask = np.ones(len(stream), dtype=bool)
    for name, threshold in cfg.thresholds.items():
        mask &= stream.column(name) < threshold
    return mask


# -------------------------------------------------------------------- strikes


@dataclass(frozen=True)
class ClassificationEvent:
    client_ip: str
    scheme: Scheme
    detection_ts: float
    first_seen_ts: float

    @property
    def detection_time(self) -> float:
        return self.detection_ts - self.first_seen_ts


class StrikeRegistry:
    """Online per-client strike counts for one scheme configuration."""

    def __init__(self, cfg: SchemeConfig):
        self.cfg = cfg
        self.strikes: Dict[str, int] = {}
        self.first_seen: Dict[str, float] = {}
        self.attackers: Dict[str, ClassificationEvent] = {}

    def observe(self, client_ip: str, ts: float) -> None:
        self.first_seen.setdefault(client_ip, ts)

    def apply_strike(self, client_ip: str, arrival_ts: float, suspicious: bool) -> Optional[ClassificationEvent]:
        """Count one arrival; returns the classification event the moment it happens."""
        self.observe(client_ip, arrival_ts)
        if not suspicious or client_ip in self.attackers:
            return None
        count = self.strikes.get(client_ip, 0) + 1
        self.strikes[client_ip] = count
        if count < self.cfg.strikes_required:
            return None
        event = ClassificationEvent(client_ip, self.cfg.scheme, arrival_ts, self.first_seen[client_ip])
        self.attackers[client_ip] = event
        return event


def flagged_clients(stream: MetricStream, cfg: SchemeConfig) -> np.ndarray:
    """Boolean mask over ``stream.clients``: who reaches the strike count."""
    hits = stream.client[suspicious_mask(stream, cfg)]
    return np.bincount(hits, minlength=len(stream.clients)) >= cfg.strikes_required


def detect(stream: MetricStream, cfg: SchemeConfig) -> List[ClassificationEvent]:
    """Batch strike counting over a whole metric stream.

    Equivalent to feeding every row through :class:`StrikeRegistry` in time
    order. Events are sorted by client address order of ``stream.clients``.
    """
    mask = suspicious_mask(stream, cfg)
    rows = np.flatnonzero(mask)
    if rows.size == 0:
        return []
    # rows are time ordered; a stable sort by client keeps that order per client
    order = rows[np.argsort(stream.client[rows], kind="stable")]
    clients = stream.client[order]
    starts = np.flatnonzero(np.r_[True, clients[1:] != clients[:-1]])
    counts = np.diff(np.r_[starts, len(order)])
    k = cfg.strikes_required
    hit = counts >= k
    picks = order[starts[hit] + k - 1]
    events = []
    for row in picks:
        c = int(stream.client[row])
        ts = float(stream.ts[row])
        first = stream.first_seen[c]
        events.append(ClassificationEvent(stream.clients[c], cfg.scheme, ts, ts if math.isnan(first) else float(first)))
    return events
