"""Flow-based identification and mitigation of slow DDoS attackers."""

from .attack_synth import AttackProfile, BenignProfile, Tool, attack_scenario, merge_traces, synth_benign, synthesize
from .evaluator import ConfusionMatrix, EvalReport, balanced_accuracy, confusion, run_experiment
from .flow_tracker import FlowTracker, MetricSnapshot, track
from .schemes import ClassificationEvent, Scheme, SchemeConfig, StrikeRegistry, detect
from .trace_io import LabeledTrace, PacketRecord, TcpFlag, label_from_blocks, load_trace, read_pcap, write_trace

__version__ = "0.1.0"
