"""Train LPR-PDU on one seeded scenario, then replay another through the mitigation loop.

    python3 scripts/mitigation_demo.py --pool 50 --attack-start 60
"""

import argparse

from slowmit import trainer
from slowmit.attack_synth import attack_scenario
from slowmit.evaluator import run_experiment
from slowmit.mitigation_sim import ControllerConfig, ServerConfig, run_pipeline
from slowmit.schemes import SchemeConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tool", default="slowloris")
    ap.add_argument("--pool", type=int, default=50)
    ap.add_argument("--attack-start", type=float, default=60.0)
    ap.add_argument("--probe-interval", type=float, default=1.0)
    ap.add_argument("--train-seed", type=int, default=0)
    ap.add_argument("--test-seed", type=int, default=1)
    ap.add_argument("--benign", type=int, default=500)
    args = ap.parse_args()

    train_trace = attack_scenario(args.tool, args.benign, 50, 600, seed=args.train_seed)
    fit = trainer.train(train_trace, trainer.TrainingSpec("lpr-pdu", include_handshake=False))
    cfg = SchemeConfig.make("lpr-pdu", fit.thresholds, include_handshake=False)
    print(f"trained p<{cfg.threshold_p:.4g} Hz, delta<{cfg.threshold_delta:.3g} s (train bacc {fit.bacc:.3f})")

    trace = attack_scenario(args.tool, args.benign, 50, 600, seed=args.test_seed, attack_start=args.attack_start)
    ev = run_experiment(trace, cfg)
    sim = run_pipeline(trace, ControllerConfig(cfg, args.probe_interval), ServerConfig(pool_size=args.pool))
    cm = ev.confusion
    print(f"offline: tp={cm.tp} fp={cm.fp} fn={cm.fn} bacc={ev.bacc:.3f}")
    print(f"online:  exhausted at {sim.exhausted_at}s, downtime {sim.downtime:.2f}s, "
          f"blocked {sim.blocked_attackers} attackers / {sim.blocked_benign} benign, "
          f"reachable at end: {sim.reachable_at_end}")
    for a in sim.actions:
        if a["action"] == "phase":
            print(f"  t={a['t']:8.2f}  -> {a['phase']}")


if __name__ == "__main__":
    main()
