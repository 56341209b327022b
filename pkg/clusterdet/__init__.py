"""clusterdet - cluster-guided tiny object detection tooling.

Center heatmaps, local-scale crop selection, crop fusion, Gaussian Wasserstein box
losses and COCO-style evaluation, plus a seeded synthetic benchmark.
"""

from .evaluation import EvalConfig, EvalReport, evaluate
from .fusion import fuse, to_global
from .geometry import Box, Detection, GroundTruth, iou, wasserstein_closed
from .heatmap import Heatmap, decode, encode
from .losses import LossConfig, gwd_loss
from .lsm import ClusterRegion, CropTransform, LsmConfig, crop_and_rescale, lsm_pipeline
from .synthetic import PipelineMode, PseudoDetectorConfig, SceneConfig, build_scene, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Box",
    "ClusterRegion",
    "CropTransform",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "GroundTruth",
    "Heatmap",
    "LossConfig",
    "LsmConfig",
    "PipelineMode",
    "PseudoDetectorConfig",
    "SceneConfig",
    "build_scene",
    "crop_and_rescale",
    "decode",
    "encode",
    "evaluate",
    "fuse",
    "gwd_loss",
    "iou",
    "lsm_pipeline",
    "run_pipeline",
    "to_global",
    "wasserstein_closed",
]
