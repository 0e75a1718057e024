"""Federated learning over mobile transporters: simulation and route planning."""

from fedex.topology import Topology, build_topology, generate_grid_network, grid_preset
from fedex.routes import Tour, brute_force_tsp, tour_rtt, two_opt, validate_tour
from fedex.assignment import (
    Assignment,
    Objective,
    assignment_cost,
    brute_force_assignment,
    card,
    gibbs_conditional,
)
from fedex.engine import SimConfig, Trace, local_round, run_aligned, run_async, run_sync, simulate
from fedex.config import ExperimentSpec, parse_config, render_config
from fedex.experiments import SummaryRecord, sweep
from fedex.charts import render_chart

__all__ = [
    "Assignment",
    "ExperimentSpec",
    "Objective",
    "SimConfig",
    "SummaryRecord",
    "Topology",
    "Tour",
    "Trace",
    "assignment_cost",
    "brute_force_assignment",
    "brute_force_tsp",
    "build_topology",
    "card",
    "generate_grid_network",
    "gibbs_conditional",
    "grid_preset",
    "local_round",
    "parse_config",
    "render_chart",
    "render_config",
    "run_aligned",
    "run_async",
    "run_sync",
    "simulate",
    "sweep",
    "tour_rtt",
    "two_opt",
    "validate_tour",
]

__version__ = "0.1.0"
