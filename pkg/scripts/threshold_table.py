"""Score every scheme at its published thresholds on synthetic attack mixes.

    python3 scripts/threshold_table.py --benign 500 --seed 0 [--csv]
"""

import argparse
import json
from pathlib import Path

from slowmit.attack_synth import attack_scenario
from slowmit.evaluator import render_csv, render_table, run_grid
from slowmit.schemes import SchemeConfig

THRESHOLDS = Path(__file__).resolve().parents[1] / "tests" / "data" / "thresholds.json"
TOOLS = ("slowloris", "slowhttptest", "slowloris-ng")


def configs_for(tool, table):
    out = []
    for scheme, by_hs in table.items():
        for hs, by_tool in by_hs.items():
            include = hs != "no"
            out.append(SchemeConfig.make(scheme, by_tool[tool], include_handshake=include))
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--benign", type=int, default=500)
    ap.add_argument("--attackers", type=int, default=50)
    ap.add_argument("--duration", type=float, default=600.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--csv", action="store_true")
    args = ap.parse_args()

    table = json.loads(THRESHOLDS.read_text())
    reports = []
    for tool in TOOLS:
        trace = attack_scenario(tool, args.benign, args.attackers, args.duration, seed=args.seed)
        reports += run_grid([("synthetic", tool, trace)], configs_for(tool, table))
    print((render_csv if args.csv else render_table)(reports), end="")


if __name__ == "__main__":
    main()
