"""Spatio-temporally consistent localization on topological maps."""

from .topo_graph import MapConfig, Pose2D, TopoMap, build_map_real, build_map_sim, \
    nearest_node, pose_distance
from .localizer import Localizer, LocalizerConfig, localize_step, reset_state
from .map_sampler import sample_submap
from .trainer import TrainConfig, train

__all__ = [
    "MapConfig", "Pose2D", "TopoMap", "build_map_real", "build_map_sim",
    "nearest_node", "pose_distance", "Localizer", "LocalizerConfig",
    "localize_step", "reset_state", "sample_submap", "TrainConfig", "train",
]
