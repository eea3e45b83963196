"""False positives and detection time as the strike count grows.

    python3 scripts/strikes_tradeoff.py --scheme lpr --threshold 0.77687 --no-handshake
"""

import argparse

from slowmit.attack_synth import attack_scenario
from slowmit.evaluator import run_grid
from slowmit.schemes import THRESHOLD_FIELDS, Scheme, SchemeConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scheme", default="lpr", choices=[s.value for s in Scheme if s is not Scheme.LPR_PDU])
    ap.add_argument("--threshold", type=float, default=0.77687)
    ap.add_argument("--handshake", action=argparse.BooleanOptionalAction, default=False)
    ap.add_argument("--max-strikes", type=int, default=4)
    ap.add_argument("--benign", type=int, default=500)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    (name,) = THRESHOLD_FIELDS[Scheme(args.scheme)]
    configs = [SchemeConfig.make(args.scheme, {name: args.threshold}, include_handshake=args.handshake,
                                 strikes_required=k) for k in range(1, args.max_strikes + 1)]
    print(f"{'attack':<14}{'strikes':>8}{'tp':>5}{'fp':>6}{'bacc':>8}{'mean t':>9}{'sd t':>8}")
    for tool in ("slowloris", "slowhttptest", "slowloris-ng"):
        trace = attack_scenario(tool, args.benign, 50, 600, seed=args.seed)
        for cfg, rep in zip(configs, run_grid([("synthetic", tool, trace)], configs)):
            mean = "-" if rep.detection_time_mean is None else f"{rep.detection_time_mean:.1f}"
            sd = "-" if rep.detection_time_std is None else f"{rep.detection_time_std:.1f}"
            cm = rep.confusion
            print(f"{tool:<14}{cfg.strikes_required:>8}{cm.tp:>5}{cm.fp:>6}{rep.bacc:>8.3f}{mean:>9}{sd:>8}")


if __name__ == "__main__":
    main()
