"""Scoring detection runs against ground truth."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

from .flow_tracker import MetricStream, track
from .schemes import ClassificationEvent, SchemeConfig, detect
from .trace_io import LabeledTrace


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    fn: int
    tn: int

    def scaled(self, pos: int, neg: int) -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp * pos, self.fp * neg, self.fn * pos, self.tn * neg)


def confusion(classified: Iterable[str], labels: Iterable[str], all_clients: Iterable[str]) -> ConfusionMatrix:
    classified, labels, universe = set(classified), set(labels), set(all_clients)
    if not classified <= universe:
        raise EvaluationError(f"classified clients outside the trace: {sorted(classified - universe)[:5]}")
    if not labels <= universe:
        raise EvaluationError(f"labeled attackers absent from the trace: {sorted(labels - universe)[:5]}")
    return ConfusionMatrix(
        tp=len(classified & labels),
        fp=len(classified - labels),
        fn=len(labels - classified),
        tn=len(universe - classified - labels),
    )


def balanced_accuracy(cm: ConfusionMatrix) -> float:
    if cm.tp + cm.fn == 0 or cm.fp + cm.tn == 0:
        raise EvaluationError(f"balanced accuracy undefined with an empty class: {cm}")
    return (cm.tp / (cm.tp + cm.fn) + cm.tn / (cm.tn + cm.fp)) * 0.5


def detection_time_stats(events: Sequence[ClassificationEvent], labels: Iterable[str]) -> Tuple[Optional[float], Optional[float]]:
    """Mean and population standard deviation of true-positive detection times."""
    labels = set(labels)
    times = [e.detection_time for e in events if e.client_ip in labels]
    if not times:
        return None, None
    mean = math.fsum(times) / len(times)
    var = math.fsum((t - mean) ** 2 for t in times) / len(times)
    return mean, math.sqrt(var)


@dataclass
class EvalReport:
    scheme: str
    include_handshake: bool
    dataset: str
    attack: str
    confusion: ConfusionMatrix
    bacc: float
    detection_time_mean: Optional[float]
    detection_time_std: Optional[float]
    events: List[ClassificationEvent] = field(default_factory=list)
    config: Optional[SchemeConfig] = None

    def to_dict(self) -> dict:
        cm = self.confusion
        out = {
            "scheme": self.scheme,
            "handshake": self.include_handshake,
            "dataset": self.dataset,
            "attack": self.attack,
            "tp": cm.tp,
            "fp": cm.fp,
            "fn": cm.fn,
            "tn": cm.tn,
            "bacc": self.bacc,
            "det_mean_s": self.detection_time_mean,
            "det_std_s": self.detection_time_std,
            "events": [
                {"ip": e.client_ip, "t_detect": e.detection_ts, "t_first": e.first_seen_ts}
                for e in self.events
            ],
        }
        if self.config is not None:
            out["thresholds"] = self.config.thresholds
            out["strikes"] = self.config.strikes_required
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            scheme=doc["scheme"],
            include_handshake=doc["handshake"],
            dataset=doc["dataset"],
            attack=doc["attack"],
            confusion=ConfusionMatrix(doc["tp"], doc["fp"], doc["fn"], doc["tn"]),
            bacc=doc["bacc"],
            detection_time_mean=doc["det_mean_s"],
            detection_time_std=doc["det_std_s"],
        )


def score(
    trace: LabeledTrace,
    stream: MetricStream,
    cfg: SchemeConfig,
    dataset: str = "",
    attack: str = "",
) -> EvalReport:
    events = detect(stream, cfg)
    cm = confusion((e.client_ip for e in events), trace.attacker_ips, stream.clients)
    mean, std = detection_time_stats(events, trace.attacker_ips)
    return EvalReport(
        scheme=cfg.scheme.value,
        include_handshake=cfg.include_handshake,
        dataset=dataset,
        attack=attack if attack else (trace.tool or ""),
        confusion=cm,
        bacc=balanced_accuracy(cm),
        detection_time_mean=mean,
        detection_time_std=std,
        events=events,
        config=cfg,
    )


def run_experiment(trace: LabeledTrace, cfg: SchemeConfig, dataset: str = "", attack: str = "") -> EvalReport:
    """Replay ``trace`` under ``cfg`` and score the resulting classifications."""
    if not trace.attacker_ips:
        raise EvaluationError("trace has no labeled attackers")
    stream = track(trace, cfg.effective_handshake, cfg.sweep_interval)
    return score(trace, stream, cfg, dataset, attack)


def run_grid(traces: Sequence[Tuple[str, str, LabeledTrace]], configs: Sequence[SchemeConfig]) -> List[EvalReport]:
    """Every (dataset, attack, trace) against every config; metric streams are shared."""
    reports = []
    for dataset, attack, trace in traces:
        if not trace.attacker_ips:
            raise EvaluationError(f"{dataset}/{attack}: no labeled attackers")
        streams = {}
        for cfg in configs:
            key = (cfg.effective_handshake, cfg.sweep_interval)
            if key not in streams:
                streams[key] = track(trace, *key)
            reports.append(score(trace, streams[key], cfg, dataset, attack))
    return reports


TABLE_COLUMNS = ("scheme", "handshake", "dataset", "attack", "tp", "fp", "fn", "tn", "bacc", "detection time")


def _row(r: EvalReport) -> List[str]:
    cm = r.confusion
    if r.detection_time_mean is None:
        det = "-"
    else:
        det = f"t={r.detection_time_mean:.2f} sd={r.detection_time_std:.2f}"
    hs = "N/A" if r.scheme == "lc" else ("Y" if r.include_handshake else "N")
    return [r.scheme.upper(), hs, r.dataset, r.attack, str(cm.tp), str(cm.fp), str(cm.fn), str(cm.tn),
            f"{r.bacc:.3f}", det]


def render_table(reports: Sequence[EvalReport]) -> str:
    rows = [list(TABLE_COLUMNS)] + [_row(r) for r in reports]
    widths = [max(len(row[i]) for row in rows) for i in range(len(TABLE_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_csv(reports: Sequence[EvalReport]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TABLE_COLUMNS)
    writer.writerows(_row(r) for r in reports)
    return buf.getvalue()


def dump_reports(reports: Sequence[EvalReport]) -> str:
    docs = [r.to_dict() for r in reports]
    return json.dumps(docs[0] if len(docs) == 1 else docs, indent=2, sort_keys=True) + "\n"
