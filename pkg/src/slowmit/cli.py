"""Command-line entry point: ``slowmit {synth,train,eval,simulate,report}``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from . import attack_synth, evaluator, mitigation_sim, trainer
from .schemes import THRESHOLD_FIELDS, Scheme, SchemeConfig, load_configs
from .trace_io import TraceFormatError, load_trace, write_trace

DEFAULT_SEED = 7
TOOLS = [t.value for t in attack_synth.Tool] + ["benign"]
SCHEMES = [s.value for s in Scheme]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _target(value: str):
    ip, _, port = value.rpartition(":")
    if not ip:
        raise argparse.ArgumentTypeError("expected IP:PORT")
    return ip, int(port)


def cmd_synth(args) -> int:
    if args.tool == "benign":
        trace = attack_synth.synth_benign(
            attack_synth.BenignProfile(clients=args.clients, duration=args.duration, rng_seed=args.seed))
    else:
        if args.profile:
            profile = attack_synth.AttackProfile.load(args.profile)
        else:
            profile = attack_synth.AttackProfile(args.tool, clients=args.clients, duration=args.duration,
                                                 rng_seed=args.seed)
        trace = attack_synth.synthesize(profile)
        if args.benign:
            benign = attack_synth.synth_benign(attack_synth.BenignProfile(
                clients=args.benign, duration=profile.start_ts + profile.duration, rng_seed=args.seed + 1,
                target=profile.target))
            trace = attack_synth.merge_traces(benign, trace, args.offset)
    write_trace(trace, args.out, headers_only=not args.full_payload)
    return 0


def _scheme_config(args) -> SchemeConfig:
    scheme = Scheme.parse(args.scheme)
    names = THRESHOLD_FIELDS[scheme]
    if args.threshold is None:
        raise UsageError(f"--threshold is required for {scheme.value}")
    thresholds = {names[0]: args.threshold}
    if scheme is Scheme.LPR_PDU:
        if args.threshold_delta is None:
            raise UsageError("lpr-pdu needs --threshold (rate) and --threshold-delta")
        thresholds["delta"] = args.threshold_delta
    return SchemeConfig.make(scheme, thresholds, include_handshake=args.handshake,
                             strikes_required=args.strikes, sweep_interval=args.sweep_interval)


def cmd_eval(args) -> int:
    if args.config:
        configs = load_configs(args.config)
    elif args.scheme:
        configs = [_scheme_config(args)]
    else:
        raise UsageError("eval needs --scheme or --config")
    traces = []
    for path in args.trace:
        trace = load_trace(path, args.target)
        traces.append((args.dataset or Path(path).stem, trace.tool or "", trace))
    reports = evaluator.run_grid(traces, configs)
    _emit(evaluator.dump_reports(reports), args.out)
    return 0


def cmd_train(args) -> int:
    trace = load_trace(args.trace, args.target)
    spec = trainer.TrainingSpec(args.scheme, include_handshake=args.handshake, strikes=args.strikes,
                                max_iters=args.max_iters, tol=args.tol)
    doc = trainer.training_report(trace, spec, with_oracle=not args.no_oracle)
    doc["trace"] = Path(args.trace).name
    _emit(_dumps(doc), args.out)
    return 0


def cmd_simulate(args) -> int:
    trace = load_trace(args.trace, args.target)
    server, controller = mitigation_sim.load_sim_config(args.config)
    report = mitigation_sim.run_pipeline(trace, controller, server)
    _emit(_dumps(report.to_dict()), args.out)
    return 0


def cmd_report(args) -> int:
    reports = []
    for path in args.reports:
        doc = json.loads(Path(path).read_text())
        for d in doc if isinstance(doc, list) else [doc]:
            reports.append(evaluator.EvalReport.from_dict(d))
    text = evaluator.render_csv(reports) if args.csv else evaluator.render_table(reports)
    _emit(text, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, suppress):
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--seed", type=int, default=dflt(DEFAULT_SEED), help=f"RNG seed (default {DEFAULT_SEED})")
        p.add_argument("--strikes", type=int, default=dflt(1), help="suspicious packets needed per client")
        p.add_argument("--handshake", action=argparse.BooleanOptionalAction, default=dflt(True),
                       help="count TCP handshake packets in the metrics")

    # global flags are accepted before or after the subcommand; SUPPRESS keeps
    # the subparser from clobbering a value given before it
    common = argparse.ArgumentParser(add_help=False)
    add_globals(common, suppress=True)
    common.add_argument("--out", help="output path (stdout if omitted, required for synth)")
    common.add_argument("--target", type=_target, help="target IP:PORT when a trace has no label sidecar")

    parser = _Parser(prog="slowmit", description="Slow DDoS detection, training and mitigation toolkit")
    add_globals(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a labeled attack trace")
    p.add_argument("--tool", choices=TOOLS, required=True)
    p.add_argument("--clients", type=int, default=50)
    p.add_argument("--duration", type=float, default=600.0)
    p.add_argument("--profile", help="attack profile JSON (overrides --clients/--duration)")
    p.add_argument("--benign", type=int, default=0, help="merge this many synthetic benign clients")
    p.add_argument("--offset", type=float, default=0.0, help="attack start offset in the merged trace")
    p.add_argument("--full-payload", action="store_true", help="write zero-filled payload bytes")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="train scheme thresholds by bisection")
    p.add_argument("--trace", required=True)
    p.add_argument("--scheme", choices=SCHEMES, required=True)
    p.add_argument("--max-iters", type=int, default=50)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--no-oracle", action="store_true", help="skip the exhaustive comparison")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score schemes on labeled traces")
    p.add_argument("--trace", action="append", required=True, help="repeat for several traces")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--threshold", type=float, help="d, p, delta, pbar or var depending on the scheme")
    p.add_argument("--threshold-delta", type=float, help="distance threshold for lpr-pdu")
    p.add_argument("--sweep-interval", type=float, help="also sweep idle connections (seconds)")
    p.add_argument("--config", help="scheme config JSON (object or list) instead of --scheme")
    p.add_argument("--dataset", help="dataset label for the reports (default: trace file stem)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", parents=[common], help="replay a trace through the mitigation pipeline")
    p.add_argument("--trace", required=True)
    p.add_argument("--config", required=True, help="simulation config JSON")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", parents=[common], help="render eval reports as a text table")
    p.add_argument("reports", nargs="+")
    p.add_argument("--csv", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "synth" and not args.out:
        parser.error("synth requires --out")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))
    except (TraceFormatError, evaluator.EvaluationError, trainer.TrainingError, ValueError, KeyError,
            OSError) as exc:
        print(f"slowmit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
