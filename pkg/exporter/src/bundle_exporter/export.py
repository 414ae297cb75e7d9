"""Export jobs: images -> feature bundles + region masks + manifest fragment."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import formats
from .backbones import PATCH, PatchStatsBackbone
from .errors import ExporterError, InvalidJobError, UnreadableImageError
from .segmenters import PromptFloodSegmenter


@dataclass(frozen=True)
class ExportJob:
    images: tuple[str, ...]
    out_dir: str
    layer_indices: tuple[int, int, int] = (-3, -2, -1)
    prompts: tuple[tuple[int, int], ...] = ((224, 224),)
    target_size: int = 448
    max_regions: int | None = None

    def __post_init__(self):
        if len(set(self.layer_indices)) != len(self.layer_indices):
            raise InvalidJobError("layer indices must be distinct")
        if self.target_size < 1:
            raise InvalidJobError("target size must be positive")
        if not self.images:
            raise InvalidJobError("job needs at least one image")
        for row, col in self.prompts:
            if not (0 <= row < self.target_size and 0 <= col < self.target_size):
                raise InvalidJobError(f"prompt ({row}, {col}) outside the {self.target_size} frame")


def load_image(path, target_size: int) -> np.ndarray:
    """Decode and corner-aligned-resize to (target, target, 3) floats in [0, 1]."""
    try:
        with Image.open(path) as img:
            arr = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    except (OSError, ValueError) as exc:
        raise UnreadableImageError(f"cannot read image {path}: {exc}") from exc
    return _resize(arr, target_size, target_size)


def _axis_positions(n_in: int, n_out: int):
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(int), 0, max(n_in - 2, 0))
    return lo, np.minimum(lo + 1, n_in - 1), pos - lo


def _resize(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    y0, y1, wy = _axis_positions(arr.shape[0], out_h)
    x0, x1, wx = _axis_positions(arr.shape[1], out_w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    top = (1 - wx) * arr[y0][:, x0] + wx * arr[y0][:, x1]
    bot = (1 - wx) * arr[y1][:, x0] + wx * arr[y1][:, x1]
    return (1 - wy) * top + wy * bot


@dataclass
class ImageResult:
    image: str
    status: str
    bundle: str | None = None
    masks: list[str] = field(default_factory=list)
    feature_grid: tuple[int, int] | None = None
    truncated_masks: int = 0
    warnings: list[str] = field(default_factory=list)
    category: str | None = None
    message: str | None = None

    def to_json(self) -> dict:
        out = {"image": self.image, "status": self.status}
        if self.status == "ok":
            out.update(
                bundle=self.bundle,
                masks=self.masks,
                feature_grid=list(self.feature_grid),
                mask_resolution=[448 if self.feature_grid is None else self.feature_grid[0] * PATCH] * 2,
                scale_factor=float(PATCH),
                truncated_masks=self.truncated_masks,
                warnings=self.warnings,
            )
        else:
            out.update(category=self.category, message=self.message)
        return out


def export_features(job: ExportJob, backbone=None) -> list[ImageResult]:
    """Write one FBND bundle per readable image; failures become error records."""
    backbone = backbone or PatchStatsBackbone()
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for image_path in job.images:
        stem = Path(image_path).stem
        try:
            image = load_image(image_path, job.target_size)
            layers = backbone.extract(image, job.layer_indices)
            rel = f"{stem}.fbnd"
            formats.write_bundle(out / rel, layers)
            grid = layers[0].shape[:2]
            results.append(ImageResult(image=str(image_path), status="ok", bundle=rel, feature_grid=grid))
        except ExporterError as exc:
            results.append(
                ImageResult(
                    image=str(image_path), status="error", category=type(exc).__name__, message=str(exc)
                )
            )
    return results


def export_masks(job: ExportJob, segmenter=None) -> list[ImageResult]:
    """Write per-region FMSK masks; over-produced masks are truncated by area."""
    segmenter = segmenter or PromptFloodSegmenter()
    out = Path(job.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for image_path in job.images:
        stem = Path(image_path).stem
        try:
            image = load_image(image_path, job.target_size)
            masks = segmenter.segment(image, job.prompts)
            result = ImageResult(image=str(image_path), status="ok", feature_grid=(job.target_size // PATCH,) * 2)
            if not masks:
                result.warnings.append("empty segmentation: no masks produced")
            if job.max_regions is not None and len(masks) > job.max_regions:
                order = sorted(range(len(masks)), key=lambda i: (-int(masks[i].sum()), i))
                keep = sorted(order[: job.max_regions])
                result.truncated_masks = len(masks) - len(keep)
                masks = [masks[i] for i in keep]
            for rid, mask in enumerate(masks):
                rel = f"{stem}_r{rid}.fmsk"
                formats.write_mask(out / rel, mask)
                result.masks.append(rel)
            results.append(result)
        except ExporterError as exc:
            results.append(
                ImageResult(
                    image=str(image_path), status="error", category=type(exc).__name__, message=str(exc)
                )
            )
    return results


def run_job(job: ExportJob, backbone=None, segmenter=None) -> dict:
    """Features + masks + a manifest fragment (written to export_manifest.json)."""
    backbone = backbone or PatchStatsBackbone()
    segmenter = segmenter or PromptFloodSegmenter()
    feature_results = {r.image: r for r in export_features(job, backbone)}
    mask_results = {r.image: r for r in export_masks(job, segmenter)}
    images = []
    for image_path in job.images:
        feat = feature_results[str(image_path)]
        seg = mask_results[str(image_path)]
        if feat.status != "ok":
            images.append(feat.to_json())
            continue
        merged = feat.to_json()
        if seg.status == "ok":
            merged["masks"] = seg.masks
            merged["truncated_masks"] = seg.truncated_masks
            merged["warnings"] = feat.warnings + seg.warnings
        else:
            merged["warnings"] = feat.warnings + [f"segmentation failed: {seg.message}"]
        images.append(merged)
    fragment = {
        "backbone": {
            "name": backbone.name,
            "weights_sha256": backbone.weights_sha256(),
            "layer_indices": list(job.layer_indices),
        },
        "segmenter": {"name": segmenter.name},
        "target_size": job.target_size,
        "patch": PATCH,
        "images": images,
    }
    path = Path(job.out_dir) / "export_manifest.json"
    path.write_text(json.dumps(fragment, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return fragment
