"""Linear regions of ReLU networks along one-dimensional data manifolds."""

from .curves import Chord, Circle, EmbeddedCircle, Polyline, RegressionTask, Tractrix, embedded_circle
from .network import Network, NeuronId, forward, init_random, load_model, save_model
from .regions import RegionReport, brute_force_count, count_regions, distance_statistics

__version__ = "0.1.0"

__all__ = ["Chord", "Circle", "EmbeddedCircle", "Polyline", "RegressionTask", "Tractrix", "embedded_circle",
           "Network", "NeuronId", "forward", "init_random", "load_model", "save_model", "RegionReport",
           "brute_force_count", "count_regions", "distance_statistics"]
