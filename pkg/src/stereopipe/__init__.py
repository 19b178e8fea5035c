"""Software stereo pipeline: rectification, census, SGM and post-processing."""

from stereopipe.imagecore import (
    INVALID,
    MAX_DIM,
    DisparityMap,
    FormatError,
    GrayImage,
)
from stereopipe.sgm import CostVolume, MatchConfig, max_disparity
from stereopipe.costpost import PostConfig
from stereopipe.disppost import FilterConfig
from stereopipe.pipeline import PipelineConfig, run_pipeline

__all__ = [
    "INVALID",
    "MAX_DIM",
    "CostVolume",
    "DisparityMap",
    "FilterConfig",
    "FormatError",
    "GrayImage",
    "MatchConfig",
    "PipelineConfig",
    "PostConfig",
    "max_disparity",
    "run_pipeline",
]

__version__ = "0.1.0"
