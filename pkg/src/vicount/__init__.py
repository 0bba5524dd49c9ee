"""Video individual counting via context-informed one-to-many cross-frame matching."""

from .dataset import (
    Frame,
    FramePairGT,
    PedestrianObservation,
    VideoSequence,
    derive_flow_labels,
    ground_truth_total,
    load_sequence,
    sample_pairs,
    save_sequence,
)
from .model import ModelConfig, OmanModel, load_checkpoint, save_checkpoint
from .ompm import FlowCounts, aggregate_video, count_flows, decode_matches
from .simulator import SimConfig, descriptor_stats, generate
from .training import TrainConfig, grad_check, train

__all__ = [
    "Frame",
    "FramePairGT",
    "PedestrianObservation",
    "VideoSequence",
    "derive_flow_labels",
    "ground_truth_total",
    "load_sequence",
    "sample_pairs",
    "save_sequence",
    "ModelConfig",
    "OmanModel",
    "load_checkpoint",
    "save_checkpoint",
    "FlowCounts",
    "aggregate_video",
    "count_flows",
    "decode_matches",
    "SimConfig",
    "descriptor_stats",
    "generate",
    "TrainConfig",
    "grad_check",
    "train",
]

__version__ = "0.1.0"
