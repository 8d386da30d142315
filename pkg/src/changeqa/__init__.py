"""Curation pipeline turning bi-temporal semantic masks into localized change-QA data."""

from .config import PipelineConfig, load_config
from .raster import ClassMap, DiffMask, PixelRect, RgbImage, SemanticMask, diff_mask
from .regions import ChangeRegion, RegionThresholds, connected_components, extract_candidates
from .pipeline import run_pipeline, write_dataset

__all__ = [
    "PipelineConfig",
    "load_config",
    "ClassMap",
    "DiffMask",
    "PixelRect",
    "RgbImage",
    "SemanticMask",
    "diff_mask",
    "ChangeRegion",
    "RegionThresholds",
    "connected_components",
    "extract_candidates",
    "run_pipeline",
    "write_dataset",
]

__version__ = "0.1.0"
