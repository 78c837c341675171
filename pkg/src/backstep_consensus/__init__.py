"""Distributed adaptive backstepping consensus for strict-feedback agents on directed graphs."""

from .controller import Cascade, ControllerGains, Epsilon, nussbaum, robust_term
from .digraph import DirectedGraph, chain_graph, cycle_graph, has_spanning_tree, laplacian
from .plant import AgentModel, DisturbanceSignal, NonFinite
from .refgen import RefDesign, RefState
from .sim import Scenario, run_scenario

__version__ = "0.1.0"
