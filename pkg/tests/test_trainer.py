import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import connection, rate_trace, thresholds, trace_from
from slowmit import trainer
from slowmit.trainer import (
    Objective,
    TrainingError,
    TrainingSpec,
    bisect_threshold,
    bisect_threshold_pair,
    breakpoint_grid,
    combine_max,
    midpoint_rule,
    search_bounds,
    sweep_oracle,
    sweep_oracle_pair,
)

TH = thresholds()


def separable():
    # attackers every 15 s (rate <= 2/15), benign every 1 s (rate >= 1)
    attackers = [f"128.10.0.{i}" for i in range(1, 6)]
    conns = [connection([15.0 * k for k in range(5)], ip) for ip in attackers]
    conns += [connection([0.5 * i + k for k in range(6)], f"192.168.0.{i}") for i in range(1, 11)]
    return trace_from(conns, attackers)


def test_separable_rate_threshold():
    fit = bisect_threshold(separable(), TrainingSpec("lpr"))
    assert fit.bacc == 1.0
    assert 1 / 15 < fit.threshold < 1.0
    assert fit.iterations <= 50


@pytest.mark.parametrize("scale", trainer.SCALES)
def test_every_scale_solves_separable(scale):
    assert bisect_threshold(separable(), TrainingSpec("lpr", scale=scale)).bacc == 1.0


def test_inseparable_gives_half():
    # identical traffic from both classes
    conns = [connection([0, 15, 30], "128.10.0.1"), connection([0, 15, 30], "192.168.0.1")]
    trace = trace_from(conns, ["128.10.0.1"])
    assert bisect_threshold(trace, TrainingSpec("lpr")).bacc == 0.5
    assert sweep_oracle(trace, TrainingSpec("lpr")).bacc == 0.5


def test_degenerate_labels_raise():
    conns = [connection([0, 15, 30], "192.168.0.1")]
    with pytest.raises(TrainingError):
        bisect_threshold(trace_from(conns, []), TrainingSpec("lpr"))
    with pytest.raises(TrainingError):
        sweep_oracle(trace_from(conns, ["192.168.0.1"]), TrainingSpec("lpr"))


def test_pair_scheme_rejected_by_single_search():
    with pytest.raises(TrainingError):
        bisect_threshold(separable(), TrainingSpec("lpr-pdu"))


def test_bad_scale():
    with pytest.raises(ValueError):
        TrainingSpec("lpr", scale="cubic")


def test_oracle_single_candidate():
    fit = sweep_oracle(separable(), TrainingSpec("lpr"), grid=[0.5])
    assert fit.threshold == 0.5 and fit.bacc == 1.0 and fit.evaluations == 1


def test_oracle_empty_grid():
    with pytest.raises(TrainingError):
        sweep_oracle(separable(), TrainingSpec("lpr"), grid=[])


def test_oracle_ties_go_to_smallest():
    fit = sweep_oracle(separable(), TrainingSpec("lpr"), grid=[0.9, 0.3, 0.5])
    assert fit.threshold == 0.3


def test_oracle_dense_grid_cannot_beat_breakpoints():
    trace = rate_trace(3)
    spec = TrainingSpec("lpr")
    ref = sweep_oracle(trace, spec)
    dense = sweep_oracle(trace, spec, grid=np.geomspace(1e-3, 10, 4000))
    assert dense.bacc <= ref.bacc


def test_breakpoint_grid():
    grid = breakpoint_grid(np.array([0.0, 0.5, 0.5, 2.0]))
    assert 0.0 not in grid
    assert {0.5, 2.0} <= set(grid)
    assert np.nextafter(0.5, 0) in grid and np.nextafter(2.0, 3) in grid


def test_search_bounds_bracket():
    lo, hi = search_bounds(np.array([0.2, 3.0]))
    assert lo < 0.2 and hi > 3.0
    with pytest.raises(TrainingError):
        search_bounds(np.array([]))


def test_midpoint_rules():
    assert midpoint_rule("linear", 1, 100)(1, 100) == 50.5
    assert midpoint_rule("log", 1, 100)(1, 100) == pytest.approx(10.0)
    # quantile: halfway through the knots, whatever their spacing
    knots = np.array([1.0, 2.0, 3.0, 1000.0])
    mid = midpoint_rule("quantile", 0.5, 2000.0, knots)
    m = mid(0.5, 2000.0)
    assert 2.0 <= m <= 3.0


def test_combine_max_published_sets():
    for hs, expected in (("no", {"p": 0.77687, "delta": 0.000631}), ("yes", {"p": 0.783869, "delta": 5.9e-5})):
        assert combine_max(list(TH["lpr-pdu"][hs].values())) == expected
    with pytest.raises(ValueError):
        combine_max([])


def test_pair_at_least_components():
    trace = rate_trace(2, noise=0.2)
    for hs in (False, True):
        spec = TrainingSpec("lpr-pdu", include_handshake=hs)
        pair = bisect_threshold_pair(trace, spec)
        lpr = bisect_threshold(trace, TrainingSpec("lpr", include_handshake=hs))
        pdu = bisect_threshold(trace, TrainingSpec("pdu", include_handshake=hs))
        assert pair.bacc >= max(lpr.bacc, pdu.bacc)
        assert set(pair.thresholds) == {"p", "delta"}


def test_pair_oracle_grid_size():
    trace = rate_trace(4)
    fit = sweep_oracle_pair(trace, TrainingSpec("lpr-pdu"), max_points=10)
    assert fit.evaluations <= 100
    assert 0.5 <= fit.bacc <= 1.0


def test_objective_caches():
    obj = Objective(separable(), "lpr")
    assert obj(p=0.5) == (1.0, 5)
    obj(p=0.5)
    assert obj.evaluations == 1


def test_training_report_fields():
    doc = trainer.training_report(separable(), TrainingSpec("lpr"))
    assert doc["bacc"] == doc["oracle"]["bacc"] == 1.0
    assert doc["bacc_gap"] == 0.0
    assert "oracle" not in trainer.training_report(separable(), TrainingSpec("lpr"), with_oracle=False)


@settings(max_examples=25)
@given(st.integers(0, 10_000), st.sampled_from(["lpr", "pdu", "lc", "mpr"]), st.booleans())
def test_oracle_never_worse_and_bounded_iterations(seed, scheme, hs):
    trace = rate_trace(seed, n_attack=6, n_benign=18, handshake=hs)
    spec = TrainingSpec(scheme, include_handshake=hs, max_iters=20)
    fit = bisect_threshold(trace, spec)
    ref = sweep_oracle(trace, spec)
    assert ref.bacc >= fit.bacc
    assert fit.iterations <= spec.max_iters
    assert 0.0 <= fit.bacc <= 1.0


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_training_is_deterministic(seed):
    trace = rate_trace(seed, n_attack=6, n_benign=18)
    spec = TrainingSpec("lpr-pdu", include_handshake=False)
    assert bisect_threshold_pair(trace, spec) == bisect_threshold_pair(trace, spec)
