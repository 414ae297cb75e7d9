"""Offline image-to-bundle exporter for the keypoint pipeline's file formats."""

from .backbones import PatchStatsBackbone, TorchScriptBackbone
from .export import ExportJob, export_features, export_masks, load_image, run_job
from .segmenters import PromptFloodSegmenter, TorchScriptSegmenter

__version__ = "0.1.0"
