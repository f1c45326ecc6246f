"""Hierarchical semantic segmentation and scattering-mechanism
classification of polarimetric SAR coherency imagery."""

from .config import PipelineConfig
from .rasters import CoherencyImage, ScalarRaster, load_image, multilook, pauli_rgb, save_image, span
from .synth import SyntheticScene, sample_wishart_scene

__version__ = "0.1.0"

__all__ = [
    "CoherencyImage",
    "PipelineConfig",
    "ScalarRaster",
    "SyntheticScene",
    "load_image",
    "multilook",
    "pauli_rgb",
    "sample_wishart_scene",
    "save_image",
    "span",
    "__version__",
]
