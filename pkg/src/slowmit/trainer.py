"""Threshold training by bisection, with an exhaustive breakpoint sweep as oracle.

Balanced accuracy as a function of one threshold is a step function whose
steps sit at observed metric values, so the sweep over those values (each
nudged by one ulp either way) finds the global optimum. Bisection is the
cheap heuristic; the two are reported side by side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .evaluator import ConfusionMatrix, balanced_accuracy
from .flow_tracker import MetricStream, track
from .schemes import THRESHOLD_FIELDS, Scheme, SchemeConfig, flagged_clients, flags_high
from .trace_io import LabeledTrace


class TrainingError(ValueError):
    pass


@dataclass
class TrainingSpec:
    scheme: Scheme
    include_handshake: bool = True
    strikes: int = 1
    search_lo: Optional[float] = None
    search_hi: Optional[float] = None
    max_iters: int = 50
    tol: float = 1e-6
    max_rounds: int = 8
    scale: str = "quantile"

    def __post_init__(self):
        self.scheme = Scheme.parse(self.scheme)
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}")


@dataclass
class Fit:
    thresholds: Dict[str, float]
    bacc: float
    iterations: int = 0
    evaluations: int = 0

    @property
    def threshold(self) -> float:
        (value,) = self.thresholds.values()
        return value


class Objective:
    """Balanced accuracy of a scheme on one trace as a function of its thresholds.

    The trace is replayed once; every evaluation is a full strike-counting
    pass over the recorded metric stream.
    """

    def __init__(self, trace: LabeledTrace, scheme: Scheme, include_handshake: bool = True,
                 strikes: int = 1, stream: Optional[MetricStream] = None):
        self.scheme = Scheme.parse(scheme)
        self.include_handshake = include_handshake
        self.strikes = strikes
        probe = SchemeConfig.make(self.scheme, {k: 1.0 for k in THRESHOLD_FIELDS[self.scheme]},
                                  include_handshake=include_handshake)
        self.stream = stream if stream is not None else track(trace, probe.effective_handshake)
        self.labels = np.array([ip in trace.attacker_ips for ip in self.stream.clients])
        self.n_attackers = int(self.labels.sum())
        if self.n_attackers == 0 or self.n_attackers == len(self.labels):
            raise TrainingError("training needs at least one attacker and one benign client")
        self.evaluations = 0
        self._cache: Dict[Tuple, Tuple[float, int]] = {}

    def config(self, **thresholds) -> SchemeConfig:
        return SchemeConfig.make(self.scheme, thresholds, include_handshake=self.include_handshake,
                                 strikes_required=self.strikes)

    def __call__(self, **thresholds) -> Tuple[float, int]:
        """(balanced accuracy, number of flagged clients)."""
        key = tuple(sorted(thresholds.items()))
        if key not in self._cache:
            self.evaluations += 1
            flagged = flagged_clients(self.stream, self.config(**thresholds))
            labels = self.labels
            cm = ConfusionMatrix(
                tp=int(np.sum(flagged & labels)),
                fp=int(np.sum(flagged & ~labels)),
                fn=int(np.sum(~flagged & labels)),
                tn=int(np.sum(~flagged & ~labels)),
            )
            self._cache[key] = (balanced_accuracy(cm), int(flagged.sum()))
        return self._cache[key]

    def values(self, name: str) -> np.ndarray:
        col = self.stream.column(name)
        return col[np.isfinite(col)]

    def client_extremes(self, name: str) -> np.ndarray:
        """Per-client min (max for duration) of a metric: the breakpoints at one strike."""
        col = self.stream.column(name)
        ok = np.isfinite(col)
        n = len(self.stream.clients)
        if flags_high(self.scheme):
            out = np.full(n, -np.inf)
            np.maximum.at(out, self.stream.client[ok], col[ok])
        else:
            out = np.full(n, np.inf)
            np.minimum.at(out, self.stream.client[ok], col[ok])
        return out[np.isfinite(out)]


def search_bounds(values: np.ndarray) -> Tuple[float, float]:
    """Extremes that bracket every observed value: one flags nobody, the other everybody."""
    if values.size == 0:
        raise TrainingError("metric is undefined for every client")
    positive = values[values > 0]
    lo = float(positive.min()) / 2 if positive.size else 1e-9
    hi = float(values.max()) * 2 if values.max() > 0 else 1.0
    return min(lo, 1e-9) if values.min() <= 0 else lo, hi


SCALES = ("quantile", "log", "linear")


def midpoint_rule(scale: str, lo: float, hi: float, knots: Optional[np.ndarray] = None) -> Callable[[float, float], float]:
    """Midpoint of two thresholds under ``scale``.

    ``quantile`` halves the number of observed ``knots`` between the two
    points (piecewise-linear between knots), so each step splits the clients
    rather than the value range. ``log`` is the geometric mean.
    """
    if scale == "linear" or (scale == "log" and lo <= 0):
        return lambda a, b: (a + b) / 2
    if scale == "log":
        return lambda a, b: math.sqrt(a * b)
    k = np.asarray(knots if knots is not None else [], dtype=float)
    xs = np.unique(np.concatenate([[lo, hi], k[(k > lo) & (k < hi)]]))
    us = np.linspace(0.0, 1.0, len(xs))

    def mid(a: float, b: float) -> float:
        u = (np.interp(a, xs, us) + np.interp(b, xs, us)) / 2
        return float(np.interp(u, us, xs))

    return mid


def _bisect(score: Callable[[float], Tuple[float, int]], lo: float, hi: float, n_attackers: int,
            max_iters: int, tol: float, midpoint: Callable[[float, float], float],
            flags_above: bool = False) -> Tuple[float, float, int]:
    """Halve [lo, hi] around its best probe point; returns (best t, best bacc, iterations).

    Each round probes the quarter points and the midpoint. Points are ranked
    by balanced accuracy, then by how close the flagged count is to the
    number of attackers. Remaining ties sit on a plateau; there the flagged
    count says which way to move (too many flagged: towards the stricter
    side), and an exact count keeps the centre. The half-interval around the
    winner is kept. ``flags_above`` marks schemes that flag values above the
    threshold, for which larger thresholds are stricter.

    The result is the best probe by the same two criteria, later probes
    winning ties: on a plateau of equal scores that is where the search
    settled, away from the plateau's edges.
    """
    def key(t: float, pos: int):
        b, n = score(t)
        excess = n - n_attackers
        if excess == 0:
            lean = -abs(pos - 2)
        else:
            stricter_is_left = not flags_above
            lean = -pos if (excess > 0) == stricter_is_left else pos
        return b, -abs(excess), lean

    # the round winner carries the round's top (bacc, count) pair
    best = max((key(lo, 0), lo), (key(hi, 4), hi))
    it = 0
    while it < max_iters and (hi - lo) / abs(hi) >= tol:
        it += 1
        mid = midpoint(lo, hi)
        q1, q3 = midpoint(lo, mid), midpoint(mid, hi)
        k, t, (lo, hi) = max(
            (key(lo, 0), lo, (lo, mid)),
            (key(q1, 1), q1, (lo, mid)),
            (key(mid, 2), mid, (q1, q3)),
            (key(q3, 3), q3, (mid, hi)),
            (key(hi, 4), hi, (mid, hi)),
        )
        if k[:2] >= best[0][:2]:
            best = (k, t)
    (bacc, _, _), t = best
    return t, bacc, it


def _check_trace(trace: LabeledTrace):
    clients = trace.clients()
    if not trace.attacker_ips & clients or not clients - trace.attacker_ips:
        raise TrainingError("degenerate labels: need attackers and benign clients")


def bisect_threshold(trace: LabeledTrace, spec: TrainingSpec, objective: Optional[Objective] = None) -> Fit:
    """Single-threshold bisection search (LC, LPR, PDU, MPR, PRV)."""
    if spec.scheme is Scheme.LPR_PDU:
        raise TrainingError("use bisect_threshold_pair for lpr-pdu")
    _check_trace(trace)
    obj = objective or Objective(trace, spec.scheme, spec.include_handshake, spec.strikes)
    (name,) = THRESHOLD_FIELDS[spec.scheme]
    extremes = obj.client_extremes(name)
    lo, hi = search_bounds(extremes)
    lo = spec.search_lo if spec.search_lo is not None else lo
    hi = spec.search_hi if spec.search_hi is not None else hi
    start = obj.evaluations
    t, b, it = _bisect(lambda x: obj(**{name: x}), lo, hi, obj.n_attackers, spec.max_iters, spec.tol,
                       midpoint_rule(spec.scale, lo, hi, extremes), flags_high(spec.scheme))
    return Fit({name: t}, b, it, obj.evaluations - start)


def bisect_threshold_pair(trace: LabeledTrace, spec: TrainingSpec) -> Fit:
    """Alternating coordinate bisection for the two LPR-PDU thresholds.

    Starts from the separately trained LPR and PDU thresholds, then bisects
    the rate threshold with the distance threshold held fixed and vice versa
    until a round no longer improves balanced accuracy by ``tol``.
    """
    _check_trace(trace)
    hs, k = spec.include_handshake, spec.strikes
    stream = Objective(trace, Scheme.LPR, hs, k).stream
    sub = dict(max_iters=spec.max_iters, tol=spec.tol, scale=spec.scale)
    fit_p = bisect_threshold(trace, TrainingSpec(Scheme.LPR, hs, k, **sub),
                             Objective(trace, Scheme.LPR, hs, k, stream=stream))
    fit_d = bisect_threshold(trace, TrainingSpec(Scheme.PDU, hs, k, **sub),
                             Objective(trace, Scheme.PDU, hs, k, stream=stream))
    obj = Objective(trace, Scheme.LPR_PDU, hs, k, stream=stream)
    bounds, rules = {}, {}
    for name in ("p", "delta"):
        values = obj.values(name)
        bounds[name] = lo, hi = search_bounds(values)
        rules[name] = midpoint_rule(spec.scale, lo, hi, values)
    cur = {"p": fit_p.threshold, "delta": fit_d.threshold}
    best_b, best = obj(**cur)[0], dict(cur)
    iterations = fit_p.iterations + fit_d.iterations
    prev = best_b
    for _ in range(spec.max_rounds):
        for name, other in (("p", "delta"), ("delta", "p")):
            fixed = cur[other]
            lo, hi = bounds[name]
            t, b, it = _bisect(lambda x: obj(**{name: x, other: fixed}), lo, hi, obj.n_attackers,
                               spec.max_iters, spec.tol, rules[name])
            iterations += it
            cur[name] = t
            if b >= best_b:
                best_b, best = b, dict(cur)
        if best_b - prev < spec.tol:
            break
        prev = best_b
    evaluations = fit_p.evaluations + fit_d.evaluations + obj.evaluations
    return Fit(best, best_b, iterations, evaluations)


def train(trace: LabeledTrace, spec: TrainingSpec) -> Fit:
    if spec.scheme is Scheme.LPR_PDU:
        return bisect_threshold_pair(trace, spec)
    return bisect_threshold(trace, spec)


def breakpoint_grid(values: np.ndarray) -> np.ndarray:
    """Each value and its neighbouring floats, restricted to valid (positive) thresholds."""
    v = np.unique(values)
    grid = np.unique(np.concatenate([v, np.nextafter(v, -np.inf), np.nextafter(v, np.inf)]))
    return grid[grid > 0]


def sweep_oracle(trace: LabeledTrace, spec: TrainingSpec, grid: Optional[Sequence[float]] = None,
                 objective: Optional[Objective] = None) -> Fit:
    """Exhaustive evaluation over ``grid``; ties go to the smallest threshold.

    The default grid covers every per-client breakpoint, which makes the
    result globally optimal for one strike.
    """
    _check_trace(trace)
    obj = objective or Objective(trace, spec.scheme, spec.include_handshake, spec.strikes)
    (name,) = THRESHOLD_FIELDS[spec.scheme]
    if grid is None:
        grid = breakpoint_grid(obj.client_extremes(name))
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise TrainingError("empty threshold grid")
    best_t, best_b = grid[0], -1.0
    for t in grid:
        b = obj(**{name: t})[0]
        if b > best_b:
            best_t, best_b = t, b
    return Fit({name: best_t}, best_b, 0, len(grid))


def _thin(grid: np.ndarray, max_points: int) -> np.ndarray:
    if len(grid) <= max_points:
        return grid
    idx = np.unique(np.linspace(0, len(grid) - 1, max_points).round().astype(int))
    return grid[idx]


def sweep_oracle_pair(trace: LabeledTrace, spec: TrainingSpec, grid_p: Optional[Sequence[float]] = None,
                      grid_delta: Optional[Sequence[float]] = None, max_points: int = 48) -> Fit:
    """Grid search over (rate, distance) pairs.

    Default grids are per-client breakpoints of each component thinned to
    ``max_points`` quantiles, so this is a reference point rather than a
    guaranteed optimum.
    """
    _check_trace(trace)
    obj = Objective(trace, Scheme.LPR_PDU, spec.include_handshake, spec.strikes)
    if grid_p is None:
        grid_p = _thin(breakpoint_grid(Objective(trace, Scheme.LPR, spec.include_handshake, spec.strikes,
                                                 stream=obj.stream).client_extremes("p")), max_points)
    if grid_delta is None:
        grid_delta = _thin(breakpoint_grid(obj.values("delta")), max_points)
    best, best_b = None, -1.0
    for p in sorted(float(x) for x in grid_p):
        for d in sorted(float(x) for x in grid_delta):
            b = obj(p=p, delta=d)[0]
            if b > best_b:
                best, best_b = {"p": p, "delta": d}, b
    if best is None:
        raise TrainingError("empty threshold grid")
    return Fit(best, best_b, 0, obj.evaluations)


def combine_max(pairs: Sequence[Dict[str, float]]) -> Dict[str, float]:
    """Coordinate-wise maximum of several trained threshold sets."""
    if not pairs:
        raise ValueError("no threshold sets to combine")
    return {name: max(pair[name] for pair in pairs) for name in pairs[0]}


def oracle(trace: LabeledTrace, spec: TrainingSpec) -> Fit:
    if spec.scheme is Scheme.LPR_PDU:
        return sweep_oracle_pair(trace, spec)
    return sweep_oracle(trace, spec)


def training_report(trace: LabeledTrace, spec: TrainingSpec, with_oracle: bool = True) -> dict:
    fit = train(trace, spec)
    doc = {
        "scheme": spec.scheme.value,
        "handshake": spec.include_handshake,
        "strikes": spec.strikes,
        "thresholds": fit.thresholds,
        "bacc": fit.bacc,
        "iterations": fit.iterations,
        "evaluations": fit.evaluations,
    }
    if with_oracle:
        ref = oracle(trace, spec)
        doc["oracle"] = {"thresholds": ref.thresholds, "bacc": ref.bacc, "evaluations": ref.evaluations}
        doc["bacc_gap"] = ref.bacc - fit.bacc
    return doc
