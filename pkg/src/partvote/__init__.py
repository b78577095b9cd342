"""Occlusion-robust 3D object classification from part graphs.

Point clouds are segmented into curvature-bounded parts, connected into a
graph, encoded per part in a repeatable local frame, convolved with
(spherical) kernel point convolutions, and classified through a center
voting scheme that separates object parts from background clutter.
"""

from .config import RunConfig, desk_config
from .data import LabeledObject, synth_dataset, synth_object
from .geometry import PointCloud, SpatialIndex, estimate_normals, farthest_point_sampling, load_cloud
from .network import PartVoteNet
from .partgraph import GrowConfig, Part, PartGraph, build_part_graph
from .pipeline import MetricsReport, ablate, evaluate, train
from .voting import ClusterPrediction, VoteConfig, VoteSet

__version__ = "0.1.0"

__all__ = [
    "RunConfig", "desk_config", "LabeledObject", "synth_dataset", "synth_object",
    "PointCloud", "SpatialIndex", "estimate_normals", "farthest_point_sampling",
    "load_cloud", "PartVoteNet", "GrowConfig", "Part", "PartGraph",
    "build_part_graph", "MetricsReport", "ablate", "evaluate", "train",
    "ClusterPrediction", "VoteConfig", "VoteSet", "__version__",
]
