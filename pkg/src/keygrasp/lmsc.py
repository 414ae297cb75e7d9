"""Multi-scale clustering of fused dense features into candidate keypoints.

The stage turns three backbone feature layers plus region masks into a
deterministic, region-ordered list of candidate pixels: fuse the layers with
learnable per-layer projections and mixing weights, add up- and down-sampled
context, reduce per-pixel features with PCA, and cluster each region's reduced
features, mapping every cluster center to its nearest in-region pixel. Regions
too small to cluster contribute their centroid pixel instead.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import numerics
from .errors import InvalidArgumentError
from .numerics import DenseMap

IMAGE_SIZE = 448


@dataclass(frozen=True)
class RegionMask:
    """Boolean bitmap on the feature grid with at least one set pixel."""

    bitmap: np.ndarray
    region_id: int

    def __post_init__(self):
        arr = np.asarray(self.bitmap, dtype=bool)
        if arr.ndim != 2:
            raise InvalidArgumentError("mask bitmap must be 2-D")
        if not arr.any():
            raise InvalidArgumentError(f"region {self.region_id} has no pixels")
        object.__setattr__(self, "bitmap", arr)

    @property
    def pixel_count(self) -> int:
        return int(self.bitmap.sum())


@dataclass
class MlpParams:
    """Two-layer perceptron; `activation` is 'tanh' or 'identity'."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ("tanh", "identity"):
            raise InvalidArgumentError(f"unknown activation {self.activation!r}")


@dataclass
class FusionParams:
    """Per-layer linear projections + normalization stats, mixing weights, and the MLP."""

    proj_weights: tuple[np.ndarray, np.ndarray, np.ndarray]
    proj_biases: tuple[np.ndarray, np.ndarray, np.ndarray]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    alphas: np.ndarray
    mlp: MlpParams

    def __post_init__(self):
        if len(self.proj_weights) != 3 or len(self.proj_biases) != 3:
            raise InvalidArgumentError("fusion expects exactly 3 layer projections")
        for arr in (*self.proj_weights, *self.proj_biases, self.norm_mean, self.norm_std, self.alphas):
            if not np.all(np.isfinite(arr)):
                raise InvalidArgumentError("fusion parameters must be finite")
        if np.any(self.norm_std <= 0):
            raise InvalidArgumentError("normalization std must be positive")

    @property
    def output_dim(self) -> int:
        return self.mlp.w2.shape[1]


@dataclass(frozen=True)
class Candidate:
    region_id: int
    cluster_index: int
    grid_row: int
    grid_col: int
    row: int
    col: int
    descriptor: np.ndarray
    feature_center: np.ndarray
    from_fallback: bool


@dataclass(frozen=True)
class CandidateKeypointSet:
    """Candidates ordered by (region_id, cluster_index); slots are region-major."""

    candidates: tuple[Candidate, ...]
    regions: int
    clusters_per_region: int
    grid_shape: tuple[int, int]
    image_size: int

    @property
    def n_slots(self) -> int:
        return self.regions * self.clusters_per_region

    def slot_of(self, cand: Candidate) -> int:
        return cand.region_id * self.clusters_per_region + cand.cluster_index

    def by_slot(self) -> dict[int, Candidate]:
        return {self.slot_of(c): c for c in self.candidates}


def fuse_graph(layers: Sequence[ad.Var], params: dict[str, ad.Var], norm_mean, norm_std, activation: str) -> ad.Var:
    """Differentiable fusion: MLP(sum_m alpha_m * standardize(linear_m(layer_m)))."""
    h, w = layers[0].value.shape[:2]
    mixed = None
    for m, layer in enumerate(layers):
        flat = ad.reshape(layer, (h * w, layer.value.shape[2]))
        z = ad.linear(flat, params[f"fusion/proj{m}/w"], params[f"fusion/proj{m}/b"])
        inv_std = 1.0 / norm_std[m]
        z = ad.affine_const(z, inv_std, -norm_mean[m] * inv_std)
        alpha_m = _component(params["fusion/alphas"], m)
        term = ad.scale(z, alpha_m)
        mixed = term if mixed is None else ad.add(mixed, term)
    hidden = ad.linear(mixed, params["fusion/mlp/w1"], params["fusion/mlp/b1"])
    if activation == "tanh":
        hidden = ad.tanh(hidden)
    out = ad.linear(hidden, params["fusion/mlp/w2"], params["fusion/mlp/b2"])
    return ad.reshape(out, (h, w, out.value.shape[1]))


def _component(vec: ad.Var, idx: int) -> ad.Var:
    def vjp(g):
        grad = np.zeros_like(vec.value)
        grad[idx] = g
        return grad

    return ad.Var(vec.value[idx], (vec,), (vjp,))


def multiscale_graph(f: ad.Var) -> ad.Var:
    """f + realigned 2x upsample + realigned 1/2x downsample."""
    h, w = f.value.shape[:2]
    up = ad.resize_bilinear(ad.resize_bilinear(f, 2 * h, 2 * w), h, w)
    down = ad.resize_bilinear(ad.resize_bilinear(f, max(1, h // 2), max(1, w // 2)), h, w)
    return ad.add(ad.add(f, up), down)


def _params_as_vars(params: FusionParams) -> dict[str, ad.Var]:
    out = {}
    for m in range(3):
        out[f"fusion/proj{m}/w"] = ad.constant(params.proj_weights[m])
        out[f"fusion/proj{m}/b"] = ad.constant(params.proj_biases[m])
    out["fusion/alphas"] = ad.constant(params.alphas)
    out["fusion/mlp/w1"] = ad.constant(params.mlp.w1)
    out["fusion/mlp/b1"] = ad.constant(params.mlp.b1)
    out["fusion/mlp/w2"] = ad.constant(params.mlp.w2)
    out["fusion/mlp/b2"] = ad.constant(params.mlp.b2)
    return out


def fuse_layers(layers: Sequence[DenseMap], params: FusionParams) -> DenseMap:
    """Fuse three same-shaped feature layers into one dense map."""
    if len(layers) != 3:
        raise InvalidArgumentError("fusion expects exactly 3 layers")
    shape = layers[0].data.shape[:2]
    for layer in layers:
        if layer.data.shape[:2] != shape:
            raise InvalidArgumentError("fusion layers must share spatial shape")
    for m, layer in enumerate(layers):
        if layer.channels != params.proj_weights[m].shape[0]:
            raise InvalidArgumentError(
                f"layer {m} has {layer.channels} channels, projection expects {params.proj_weights[m].shape[0]}"
            )
    graph = fuse_graph(
        [ad.constant(layer.data) for layer in layers],
        _params_as_vars(params),
        params.norm_mean,
        params.norm_std,
        params.mlp.activation,
    )
    return DenseMap(graph.value)


def multiscale(f: DenseMap) -> DenseMap:
    """Add realigned up- and down-sampled context to a dense map."""
    if f.height < 2 or f.width < 2:
        raise InvalidArgumentError("multiscale needs at least a 2x2 map")
    return DenseMap(multiscale_graph(ad.constant(f.data)).value)


@dataclass(frozen=True)
class ReducedFeatures:
    features: DenseMap
    zero_variance: bool


def reduce_features(f_ms: DenseMap, target_dim: int) -> ReducedFeatures:
    """Project per-pixel features onto the top-k PCA basis fit over all pixels."""
    if target_dim < 1 or target_dim > f_ms.channels:
        raise InvalidArgumentError(f"target_dim={target_dim} must be in [1, {f_ms.channels}]")
    flat = f_ms.data.reshape(-1, f_ms.channels)
    if bool(np.all(flat == flat[0])):
        zeros = np.zeros((f_ms.height, f_ms.width, target_dim))
        return ReducedFeatures(DenseMap(zeros), zero_variance=True)
    model = numerics.pca_fit(flat, target_dim)
    projected = numerics.pca_transform(model, flat).reshape(f_ms.height, f_ms.width, target_dim)
    return ReducedFeatures(DenseMap(projected), zero_variance=False)


def _region_seed(seed: int, region_id: int) -> int:
    return int(np.random.SeedSequence([seed, region_id]).generate_state(1)[0])


def grid_to_image(grid_idx: int, grid_size: int, image_size: int) -> int:
    """Map a feature-grid index to the pixel-center-aligned image coordinate."""
    mapped = (grid_idx + 0.5) * image_size / grid_size - 0.5
    return int(np.clip(np.rint(mapped), 0, image_size - 1))


def extract_candidates(
    f_reduced: DenseMap,
    masks: Sequence[RegionMask],
    clusters_per_region: int,
    seed: int,
    image_size: int = IMAGE_SIZE,
) -> CandidateKeypointSet:
    """Cluster each region's reduced features into candidate pixels.

    Clusterable regions (pixel count >= J) contribute J candidates, each the
    in-region pixel whose feature vector is nearest its cluster center; smaller
    regions contribute the single mask pixel nearest their geometric centroid.
    Within a region, candidates are ordered by pixel position (row-major), so
    a candidate's slot survives small feature drift.
    """
    if not masks:
        raise InvalidArgumentError("need at least one region mask")
    if clusters_per_region < 1:
        raise InvalidArgumentError("clusters_per_region must be >= 1")
    ids = [m.region_id for m in masks]
    if len(set(ids)) != len(ids):
        raise InvalidArgumentError("region ids must be unique")
    grid_h, grid_w = f_reduced.height, f_reduced.width
    candidates: list[Candidate] = []
    for mask in sorted(masks, key=lambda m: m.region_id):
        if mask.bitmap.shape != (grid_h, grid_w):
            raise InvalidArgumentError(
                f"mask {mask.region_id} shape {mask.bitmap.shape} does not match feature grid {(grid_h, grid_w)}"
            )
        pixels = np.argwhere(mask.bitmap)  # row-major order
        feats = f_reduced.data[pixels[:, 0], pixels[:, 1]]
        if pixels.shape[0] < clusters_per_region:
            centroid = pixels.mean(axis=0)
            nearest = int(np.argmin(((pixels - centroid) ** 2).sum(axis=1)))
            entries = [(pixels[nearest], feats[nearest], feats[nearest], True)]
        else:
            result = numerics.kmeans(feats, clusters_per_region, seed=_region_seed(seed, mask.region_id))
            entries = []
            for center in result.centers:
                nearest = int(np.argmin(((feats - center) ** 2).sum(axis=1)))
                entries.append((pixels[nearest], feats[nearest], center, False))
            entries.sort(key=lambda e: (int(e[0][0]), int(e[0][1])))
        for cluster_index, (pix, descriptor, center, fallback) in enumerate(entries):
            gr, gc = int(pix[0]), int(pix[1])
            candidates.append(
                Candidate(
                    region_id=mask.region_id,
                    cluster_index=cluster_index,
                    grid_row=gr,
                    grid_col=gc,
                    row=grid_to_image(gr, grid_h, image_size),
                    col=grid_to_image(gc, grid_w, image_size),
                    descriptor=np.array(descriptor),
                    feature_center=np.array(center),
                    from_fallback=fallback,
                )
            )
    return CandidateKeypointSet(
        candidates=tuple(candidates),
        regions=len(masks),
        clusters_per_region=clusters_per_region,
        grid_shape=(grid_h, grid_w),
        image_size=image_size,
    )
