"""Coarse-to-fine rigid point cloud registration.

A forward-only pipeline: handcrafted multi-resolution descriptors, a
consistency-aware coarse matcher with spot-guided attention, and a
sparse-to-dense pose estimator, plus evaluation metrics, loss functions,
synthetic scene generation, and a benchmark harness.
"""

from .cloud import PointCloud, voxel_downsample
from .config import PipelineConfig, load_config, parse_config_text, save_config
from .metrics import (
    MetricsConfig,
    fmr,
    inlier_ratio,
    patch_overlap_ratio,
    pir,
    pmr,
    registration_recall,
    registration_rmse,
    rre,
    rte,
)
from .pipeline import CastRegistrar, register_pair
from .pose import (
    Correspondence,
    DegenerateConfigurationError,
    RigidTransform,
    weighted_kabsch,
)
from .spatial import SpatialIndex
from .synth import SceneSpec, generate_scene

__version__ = "1.0.0"

__all__ = [
    "PointCloud",
    "voxel_downsample",
    "PipelineConfig",
    "load_config",
    "parse_config_text",
    "save_config",
    "MetricsConfig",
    "fmr",
    "inlier_ratio",
    "patch_overlap_ratio",
    "pir",
    "pmr",
    "registration_recall",
    "registration_rmse",
    "rre",
    "rte",
    "CastRegistrar",
    "register_pair",
    "Correspondence",
    "DegenerateConfigurationError",
    "RigidTransform",
    "weighted_kabsch",
    "SpatialIndex",
    "SceneSpec",
    "generate_scene",
    "__version__",
]
