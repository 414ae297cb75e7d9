"""Promptable region segmenters.

`PromptFloodSegmenter` grows one region per prompt point by color similarity
to the seed pixel (deterministic breadth-first flood). `TorchScriptSegmenter`
is the local-weights seam for a real promptable model.
"""

from __future__ import annotations

import hashlib
from collections import deque
from pathlib import Path

import numpy as np

from .errors import ModelLoadError


class PromptFloodSegmenter:
    name = "prompt-flood-v1"

    def __init__(self, tolerance: float = 0.14, max_fraction: float = 0.6):
        self.tolerance = tolerance
        self.max_fraction = max_fraction

    def segment(self, image: np.ndarray, prompts) -> list[np.ndarray]:
        """One boolean mask per prompt (row, col); masks may overlap."""
        h, w = image.shape[:2]
        cap = int(self.max_fraction * h * w)
        masks = []
        for row, col in prompts:
            seed = image[row, col]
            mask = np.zeros((h, w), dtype=bool)
            mask[row, col] = True
            queue = deque([(row, col)])
            count = 1
            while queue and count < cap:
                r, c = queue.popleft()
                for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                    if 0 <= nr < h and 0 <= nc < w and not mask[nr, nc]:
                        if np.linalg.norm(image[nr, nc] - seed) < self.tolerance:
                            mask[nr, nc] = True
                            queue.append((nr, nc))
                            count += 1
            masks.append(mask)
        return masks


class TorchScriptSegmenter:
    """Adapter for a scripted promptable segmenter stored locally."""

    name = "torchscript-segmenter"

    def __init__(self, weights_path):
        try:
            import torch
        except ImportError as exc:
            raise ModelLoadError("torch is not installed; cannot load a scripted segmenter") from exc
        path = Path(weights_path) if weights_path else None
        if path is None or not path.exists():
            raise ModelLoadError(f"segmenter weights not available locally: {weights_path!r}")
        self._torch = torch
        self.module = torch.jit.load(str(path), map_location="cpu").eval()
        self.weights_path = path

    def weights_sha256(self) -> str:
        return hashlib.sha256(self.weights_path.read_bytes()).hexdigest()

    def segment(self, image: np.ndarray, prompts) -> list[np.ndarray]:
        torch = self._torch
        with torch.no_grad():
            tensor = torch.from_numpy(image.astype(np.float32)).permute(2, 0, 1).unsqueeze(0)
            points = torch.tensor(list(prompts), dtype=torch.float32)
            outputs = self.module(tensor, points)
        return [np.asarray(m.detach().cpu().numpy()).astype(bool) for m in outputs]
