"""Continuous-time distributed optimization with proportional-integral coupling."""
from .graph import Graph, GraphError, complete_graph, erdos_renyi, path_graph
from .network import Algorithm, CouplingConfig, Join, Leave, Mode, NetworkSystem, assemble, join_leave, message_dimension
from .problems import CostEnsemble, QuadraticLocal, minimizer, random_quadratic_ensemble
from .solver import DivergenceError, Trajectory, estimate_rate, integrate

__version__ = "0.1.0"
