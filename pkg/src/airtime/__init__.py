"""Airtime ledgers, idle-time bandwidth estimators and rate adaptation on a
deterministic 802.11 DCF simulator."""
from .adaptation import AdaptationOutput, AdaptationParams, AdaptationState, apply_to_source, step
from .engine import RngStream, SchedulingError, Simulator
from .estimators import F_TABLE, SpParams, SsParams, sp_estimate, ss_estimate, ss_estimate_window
from .harness import ExperimentConfig, RunReport, compare_methods, in_band_fraction, load_report, run
from .ledger import Category, LinkQuality, NodeStats, TimeLedger, WindowStats, retry_rate, throughput
from .medium import MacTimingParams, exchange_airtime, frame_airtime
from .network import NetConfig, Network, measure_capacity
from .scenario import CBR, VBR, FlowSpec, Saturating, Topology, TopologyError, parse_topology

__version__ = "0.1.0"

__all__ = [
    "AdaptationOutput", "AdaptationParams", "AdaptationState", "CBR", "Category",
    "ExperimentConfig", "F_TABLE", "FlowSpec", "LinkQuality", "MacTimingParams", "NetConfig",
    "Network", "NodeStats", "RngStream", "RunReport", "Saturating", "SchedulingError",
    "Simulator", "SpParams", "SsParams", "TimeLedger", "Topology", "TopologyError", "VBR",
    "WindowStats", "apply_to_source", "compare_methods", "exchange_airtime", "frame_airtime",
    "in_band_fraction", "load_report", "measure_capacity", "parse_topology", "retry_rate",
    "run", "sp_estimate", "ss_estimate", "ss_estimate_window", "step", "throughput",
]
