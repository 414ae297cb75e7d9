"""Dense-feature backbones.

`PatchStatsBackbone` is the deterministic, dependency-free default: eight
hand-built channel statistics pooled onto a 14-pixel patch grid at three
pyramid scales (one per requested layer), then mixed by fixed seeded
projections. `TorchScriptBackbone` is the seam for a real pretrained model: it
loads a scripted module from a local file and expects three (H, W, C) feature
maps back. Both record a content hash of their weights so exported bundles are
pinned to the exact parameters that produced them.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .errors import ModelLoadError

PATCH = 14


def _box_down(arr: np.ndarray, factor: int) -> np.ndarray:
    h, w = arr.shape[:2]
    hh, ww = h // factor, w // factor
    return arr[: hh * factor, : ww * factor].reshape(hh, factor, ww, factor, -1).mean(axis=(1, 3))


def _nearest_up(arr: np.ndarray, factor: int) -> np.ndarray:
    return np.repeat(np.repeat(arr, factor, axis=0), factor, axis=1)


def _base_channels(image: np.ndarray) -> np.ndarray:
    """(H, W, 8): color, luminance, gradients, a Laplacian, local contrast."""
    r, g, b = image[:, :, 0], image[:, :, 1], image[:, :, 2]
    gray = 0.299 * r + 0.587 * g + 0.114 * b
    dx = np.zeros_like(gray)
    dy = np.zeros_like(gray)
    dx[:, 1:-1] = (gray[:, 2:] - gray[:, :-2]) / 2.0
    dy[1:-1, :] = (gray[2:, :] - gray[:-2, :]) / 2.0
    lap = np.zeros_like(gray)
    lap[1:-1, 1:-1] = (
        gray[:-2, 1:-1] + gray[2:, 1:-1] + gray[1:-1, :-2] + gray[1:-1, 2:] - 4.0 * gray[1:-1, 1:-1]
    )
    mean3 = _nearest_up(_box_down(gray[:, :, None], 2), 2)[: gray.shape[0], : gray.shape[1], 0]
    contrast = np.abs(gray - mean3)
    return np.stack([r, g, b, gray, np.abs(dx), np.abs(dy), np.abs(lap), contrast], axis=2)


class PatchStatsBackbone:
    """Deterministic local feature extractor on the 14-pixel patch grid."""

    name = "patch-stats-v1"
    base_channels = 8

    def __init__(self, channels: int = 8, seed: int = 7031):
        rng = np.random.default_rng(seed)
        self.channels = channels
        self.projections = [
            rng.standard_normal((self.base_channels, channels)) / np.sqrt(self.base_channels)
            for _ in range(3)
        ]

    def weights_sha256(self) -> str:
        digest = hashlib.sha256()
        for proj in self.projections:
            digest.update(proj.astype("<f8").tobytes())
        return digest.hexdigest()

    def extract(self, image: np.ndarray, layer_indices) -> list[np.ndarray]:
        """Three (H/14, W/14, channels) float32 maps, one pyramid scale per layer."""
        base = _base_channels(image)
        layers = []
        for rank, _ in enumerate(sorted(layer_indices)):
            smoothed = base
            if rank > 0:
                factor = 2**rank
                smoothed = _nearest_up(_box_down(base, factor), factor)
                smoothed = smoothed[: base.shape[0], : base.shape[1]]
            pooled = _box_down(smoothed, PATCH)
            layers.append((pooled @ self.projections[rank]).astype(np.float32))
        return layers


class TorchScriptBackbone:
    """Adapter for a scripted pretrained model stored locally.

    The module must map a (1, 3, H, W) float tensor to three feature maps,
    each (1, C, h, w) or (h, w, C).
    """

    name = "torchscript"

    def __init__(self, weights_path):
        try:
            import torch
        except ImportError as exc:
            raise ModelLoadError("torch is not installed; cannot load a scripted backbone") from exc
        path = Path(weights_path) if weights_path else None
        if path is None or not path.exists():
            raise ModelLoadError(f"backbone weights not available locally: {weights_path!r}")
        self._torch = torch
        self.module = torch.jit.load(str(path), map_location="cpu").eval()
        self.weights_path = path

    def weights_sha256(self) -> str:
        return hashlib.sha256(self.weights_path.read_bytes()).hexdigest()

    def extract(self, image: np.ndarray, layer_indices) -> list[np.ndarray]:
        torch = self._torch
        with torch.no_grad():
            tensor = torch.from_numpy(image.astype(np.float32)).permute(2, 0, 1).unsqueeze(0)
            outputs = self.module(tensor)
        layers = []
        for out in outputs:
            arr = out.detach().cpu().numpy()
            if arr.ndim == 4:
                arr = np.moveaxis(arr[0], 0, -1)
            layers.append(np.ascontiguousarray(arr, dtype=np.float32))
        if len(layers) != 3:
            raise ModelLoadError(f"scripted backbone returned {len(layers)} maps, expected 3")
        return layers
