"""Exit criteria. Each test records one PASS/FAIL line, listed at the end of the run."""

import json
import math
import time

import numpy as np
import pytest

from helpers import ACK, PSHACK, SYN, TARGET, criterion, rate_trace, reference_rows, thresholds
from slowmit import cli, trainer
from slowmit.attack_synth import attack_scenario
from slowmit.evaluator import ConfusionMatrix, balanced_accuracy, run_experiment
from slowmit.flow_tracker import FlowTracker
from slowmit.mitigation_sim import ControllerConfig, Phase, ServerConfig, run_pipeline
from slowmit.schemes import SchemeConfig
from slowmit.trace_io import PacketRecord

pytestmark = pytest.mark.acceptance
TH = thresholds()


def test_1_bacc_reference_rows():
    rows = reference_rows()
    with criterion("1", f"balanced accuracy of {len(rows)} published confusion rows within 0.001") as c:
        worst = 0.0
        for r in rows:
            cm = ConfusionMatrix(*(int(r[k]) for k in ("tp", "fp", "fn", "tn")))
            worst = max(worst, abs(balanced_accuracy(cm) - float(r["bacc"])))
        c.detail = f"max abs error {worst:.5f}"
        assert len(rows) == 78
        assert worst <= 0.001


def test_2_lpr_detects_slowloris(slowloris_mix):
    cfg = SchemeConfig.make("lpr", TH["lpr"]["no"]["slowloris"], include_handshake=False)
    with criterion("2", "LPR p<0.079935 Hz, no handshake, 1 strike, 50 slowloris in 500 benign") as c:
        assert len(slowloris_mix.benign_ips()) >= 500
        rep = run_experiment(slowloris_mix, cfg)
        last = max(e.detection_ts for e in rep.events if e.client_ip in slowloris_mix.attacker_ips)
        c.detail = f"tp={rep.confusion.tp} fn={rep.confusion.fn} fp={rep.confusion.fp}, last detection t={last:.1f}s"
        assert (rep.confusion.tp, rep.confusion.fn) == (50, 0)
        assert last <= 600


def _flag_rate(trace, cfg):
    rep = run_experiment(trace, cfg)
    return rep.confusion.tp / len(trace.attacker_ips)


def test_3_pdu_uniformity():
    cfg = SchemeConfig.make("pdu", {"delta": 1e-6}, include_handshake=False)
    sl = attack_scenario("slowloris", 500, 50, 600, seed=0)
    # one packet per header line: every client gap is an inter-burst gap
    ng = attack_scenario("slowloris-ng", 500, 50, 600, seed=0, burst_per_char=False)
    ng_burst = attack_scenario("slowloris-ng", 500, 50, 600, seed=0)
    with criterion("3", "PDU at 1e-6 s flags all fixed-interval slowloris and <5% of slowloris-ng") as c:
        r_sl, r_ng, r_burst = _flag_rate(sl, cfg), _flag_rate(ng, cfg), _flag_rate(ng_burst, cfg)
        c.detail = (f"slowloris {r_sl:.0%}, ng inter-burst {r_ng:.0%}; "
                    f"with 1 ms per-character bursts ng is {r_burst:.0%}")
        assert r_sl == 1.0
        assert r_ng < 0.05


def test_4_strike_tradeoff(scenarios):
    with criterion("4", "strikes 1..4: fp weakly falls, mean detection time weakly rises, per attack") as c:
        parts = []
        for tool, trace in scenarios.items():
            fps, means = [], []
            for k in (1, 2, 3, 4):
                cfg = SchemeConfig.make("lpr", TH["lpr"]["no"]["slowloris-ng"], include_handshake=False,
                                        strikes_required=k)
                rep = run_experiment(trace, cfg)
                fps.append(rep.confusion.fp)
                means.append(rep.detection_time_mean)
            parts.append(f"{tool} fp={fps} t={[round(m, 1) for m in means]}")
            assert all(a >= b for a, b in zip(fps, fps[1:])), tool
            assert all(a <= b for a, b in zip(means, means[1:])), tool
        c.detail = "; ".join(parts)


def test_5_trainer_vs_oracle():
    with criterion("5", "bisection within 0.02 of the sweep oracle on 20 noisy traces, both 1.0 when separable") as c:
        start = time.perf_counter()
        gaps = []
        for seed in range(20):
            for hs in (False, True):
                spec = trainer.TrainingSpec("lpr", include_handshake=hs)
                noisy = rate_trace(seed, handshake=hs)
                b, o = trainer.bisect_threshold(noisy, spec), trainer.sweep_oracle(noisy, spec)
                assert o.bacc >= b.bacc, (seed, hs)
                gaps.append(o.bacc - b.bacc)
                clean = rate_trace(seed, separable=True, handshake=hs)
                b, o = trainer.bisect_threshold(clean, spec), trainer.sweep_oracle(clean, spec)
                assert (b.bacc, o.bacc) == (1.0, 1.0), (seed, hs)
        elapsed = time.perf_counter() - start
        c.detail = f"max gap {max(gaps):.4f}, {elapsed:.1f}s"
        assert max(gaps) <= 0.02
        assert elapsed < 60


def _random_stream(rng):
    n = int(rng.integers(2, 120))
    scale = 10 ** rng.uniform(-3, 2)
    gaps = rng.exponential(scale, n - 1)
    gaps[rng.random(n - 1) < 0.05] = 0.0
    times = np.concatenate([[0.0], np.cumsum(gaps)]) + rng.uniform(0, 100)
    return [PacketRecord(int(round(t * 1e6)), "192.168.0.9", TARGET[0], 50000, TARGET[1], PSHACK, 1) for t in times]


def _two_pass(pkts):
    t0 = pkts[0].ts_us
    rates = [(k + 1) / ((p.ts_us - t0) / 1e6) for k, p in enumerate(pkts) if k >= 1 and p.ts_us > t0]
    if not rates:
        return None, None
    mean = math.fsum(rates) / len(rates)
    var = math.fsum((r - mean) ** 2 for r in rates) / len(rates) if len(rates) >= 2 else None
    return mean, var


def test_6_online_statistics():
    rng = np.random.default_rng(6)
    with criterion("6", "online mean/variance of rates match two-pass values to 1e-9 relative, 1000 streams") as c:
        worst, checked = 0.0, 0
        for _ in range(1000):
            pkts = _random_stream(rng)
            tracker = FlowTracker(TARGET, include_handshake=True)
            snap = None
            for p in pkts:
                snap = tracker.ingest(p)
            mean, var = _two_pass(pkts)
            assert (snap.pbar is None) == (mean is None)
            assert (snap.var is None) == (var is None)
            for online, ref in ((snap.pbar, mean), (snap.var, var)):
                if ref is None:
                    continue
                checked += 1
                err = abs(online - ref) / abs(ref) if ref else abs(online)
                worst = max(worst, err)
                assert math.isclose(online, ref, rel_tol=1e-9, abs_tol=0.0), (online, ref)
        c.detail = f"{checked} values, max relative error {worst:.2e}"


@pytest.fixture(scope="module")
def mitigation_case():
    """Pair thresholds trained on one seeded scenario, replayed on another with the attack starting at 60 s."""
    train_trace = attack_scenario("slowloris", 500, 50, 600, seed=0)
    fit = trainer.train(train_trace, trainer.TrainingSpec("lpr-pdu", include_handshake=False))
    cfg = SchemeConfig.make("lpr-pdu", fit.thresholds, include_handshake=False)
    test_trace = attack_scenario("slowloris", 500, 50, 600, seed=1, attack_start=60)
    sim = run_pipeline(test_trace, ControllerConfig(cfg, probe_interval=1.0), ServerConfig(pool_size=50))
    ev = run_experiment(test_trace, cfg)
    return cfg, test_trace, sim, ev


def test_7a_mitigation_restores_service(mitigation_case):
    cfg, trace, sim, ev = mitigation_case
    with criterion("7a", "pool 50 vs 50 slowloris: exhaustion, identification, recovery, 0 benign blocked") as c:
        max_det = max(e.detection_time for e in ev.events if e.client_ip in trace.attacker_ips)
        bound = max_det + 2 * 1.0
        phases = [a["phase"] for a in sim.actions if a["action"] == "phase"]
        c.detail = (f"p<{cfg.threshold_p:.4g} Hz, delta<{cfg.threshold_delta:.3g} s; downtime {sim.downtime:.2f}s "
                    f"< {bound:.2f}s, {sim.blocked_attackers} attackers blocked")
        assert sim.exhausted_at is not None
        assert phases and phases[0] == Phase.IDENTIFYING.value
        assert sim.reachable_at_end
        assert sim.blocked_benign == 0
        assert sim.downtime < bound


@pytest.mark.xfail(strict=True, reason="identification only runs during an attack episode, while the evaluator "
                                       "scores the whole trace; see README")
def test_7b_sim_benign_blocks_equal_evaluator_fp(mitigation_case):
    _, _, sim, ev = mitigation_case
    with criterion("7b", "simulated benign blocks equal evaluator fp for the same configuration") as c:
        c.detail = f"sim {sim.blocked_benign}, evaluator {ev.confusion.fp}"
        assert sim.blocked_benign == ev.confusion.fp


def _cli_outputs(root, seed=7):
    root.mkdir()
    pcap = root / "mix.pcap"
    run = lambda *argv: cli.main([str(a) for a in argv])  # noqa: E731
    assert run("synth", "--tool", "slowloris", "--clients", 20, "--duration", 120, "--benign", 60,
               "--seed", seed, "--out", pcap) == 0
    assert run("train", "--trace", pcap, "--scheme", "lpr-pdu", "--no-handshake", "--out", root / "train.json") == 0
    fit = json.loads((root / "train.json").read_text())["thresholds"]
    scheme = {"scheme": "lpr-pdu", "thresholds": fit, "include_handshake": False, "strikes": 1}
    (root / "scheme.json").write_text(json.dumps(scheme))
    (root / "sim.json").write_text(json.dumps({"server": {"pool_size": 20}, "controller": {"scheme": "scheme.json"}}))
    assert run("eval", "--trace", pcap, "--config", root / "scheme.json", "--out", root / "eval.json") == 0
    assert run("simulate", "--trace", pcap, "--config", root / "sim.json", "--out", root / "sim_report.json") == 0
    assert run("report", root / "eval.json", "--out", root / "table.txt") == 0
    names = ["mix.pcap", "mix.labels.json", "train.json", "eval.json", "sim_report.json", "table.txt"]
    return {n: (root / n).read_bytes() for n in names}


def test_8_cli_determinism(tmp_path):
    with criterion("8", "synth/train/eval/simulate/report byte-identical across two runs") as c:
        first, second = _cli_outputs(tmp_path / "a"), _cli_outputs(tmp_path / "b")
        differing = [n for n in first if first[n] != second[n]]
        c.detail = f"{len(first)} outputs compared"
        assert not differing, differing


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
