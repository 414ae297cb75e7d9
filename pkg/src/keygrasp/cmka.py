"""Affordance-conditioned keypoint selection and its weakly-supervised training.

A learnable weight row per affordance class scores the candidate keypoints;
inference takes the top three (slots: functional, little, wrist, in descending
weight order). Training has no keypoint labels: a class-activation head on the
third-person feature map is trained with cross-entropy, a contact prototype is
distilled from its high-activation support, and a cosine loss pulls the soft
(temperature-softmax) aggregate of projected candidate features toward that
prototype. Total loss is the plain sum of the two terms.

Weight rows are sized to the full slot grid (regions x clusters); slots left
empty by fallback regions are excluded from the softmax and from selection.

Training is single-threaded and bit-deterministic for a given seed. Trained
parameters are plain arrays, immutable by convention after training; inference
only reads them and is safe to run concurrently across images.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from . import lmsc
from .errors import (
    EmptyPrototypeError,
    InsufficientCandidatesError,
    InvalidArgumentError,
    TrainingDivergedError,
)
from .lmsc import Candidate, CandidateKeypointSet, FusionParams, MlpParams
from .numerics import DenseMap, kmeans

SLOT_NAMES = ("functional", "little", "wrist")

PROTOTYPE_SEED = 0  # prototype clustering is internal and fixed for determinism
PROTOTYPE_CLUSTERS = 3


@dataclass
class SelectionWeights:
    """One weight row per affordance class over the region-major candidate slots."""

    matrix: np.ndarray
    slot_semantics = SLOT_NAMES

    def __post_init__(self):
        arr = np.asarray(self.matrix, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgumentError("selection weights must be a (classes, slots) matrix")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("selection weights must be finite")
        self.matrix = arr

    @property
    def n_classes(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_slots(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class KeypointFeature:
    vector: np.ndarray
    source_keypoint: tuple[int, int]
    radius_used: int


@dataclass(frozen=True)
class GlobalKeypointFeature:
    vector: np.ndarray


@dataclass(frozen=True)
class Prototype:
    vector: np.ndarray


@dataclass
class CamHead:
    """Feed-forward layer, two same-padded 3x3 convolutions, 1x1 class-aware head."""

    ff_w: np.ndarray
    ff_b: np.ndarray
    conv1_k: np.ndarray
    conv1_b: np.ndarray
    conv2_k: np.ndarray
    conv2_b: np.ndarray
    cls_w: np.ndarray
    cls_b: np.ndarray

    @property
    def in_channels(self) -> int:
        return self.ff_w.shape[0]

    @property
    def n_classes(self) -> int:
        return self.cls_w.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 15
    seed: int = 0
    radius: int = 4
    temperature: float = 0.5

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidArgumentError("learning rate must be nonnegative")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.radius < 0:
            raise InvalidArgumentError("radius must be nonnegative")
        if self.temperature <= 0:
            raise InvalidArgumentError("temperature must be positive")


@dataclass(frozen=True)
class ModelSpec:
    """Shape bookkeeping for every learnable tensor."""

    n_classes: int
    layer_channels: tuple[int, int, int]
    proj_dim: int
    hidden_dim: int
    fused_dim: int
    exo_channels: int
    cam_hidden: int
    regions: int
    clusters_per_region: int
    pca_dim: int
    radius: int
    temperature: float
    mlp_activation: str = "tanh"

    @property
    def n_slots(self) -> int:
        return self.regions * self.clusters_per_region


@dataclass
class TrainedParams:
    spec: ModelSpec
    fusion: FusionParams
    selection: SelectionWeights
    cam: CamHead
    proj_w: np.ndarray
    proj_b: np.ndarray


@dataclass(frozen=True)
class TrainSample:
    ego_layers: tuple[DenseMap, DenseMap, DenseMap]
    exo_features: DenseMap
    label: int
    candidates: CandidateKeypointSet


@dataclass(frozen=True)
class EpochLoss:
    total: float
    classification: float
    cosine: float


@dataclass(frozen=True)
class TrainResult:
    params: TrainedParams
    initial_loss: EpochLoss
    history: tuple[EpochLoss, ...]


@dataclass(frozen=True)
class SelectedKeypoints:
    """The three chosen candidates in slot order (functional, little, wrist)."""

    functional: Candidate
    little: Candidate
    wrist: Candidate
    slots: tuple[int, int, int]
    weights: tuple[float, float, float]

    def as_tuple(self) -> tuple[Candidate, Candidate, Candidate]:
        return (self.functional, self.little, self.wrist)


def select_keypoints(weights_row: np.ndarray, candidates: CandidateKeypointSet) -> SelectedKeypoints:
    """Pick the top-3 candidates by weight; descending weight fills the slots in order."""
    row = np.asarray(weights_row, dtype=np.float64)
    if row.shape != (candidates.n_slots,):
        raise InvalidArgumentError(f"weight row has shape {row.shape}, expected ({candidates.n_slots},)")
    by_slot = candidates.by_slot()
    if len(by_slot) < 3:
        raise InsufficientCandidatesError(f"need at least 3 candidates, have {len(by_slot)}")
    ranked = sorted(by_slot, key=lambda slot: (-row[slot], slot))[:3]
    picks = [by_slot[s] for s in ranked]
    return SelectedKeypoints(
        functional=picks[0],
        little=picks[1],
        wrist=picks[2],
        slots=tuple(ranked),
        weights=tuple(float(row[s]) for s in ranked),
    )


def disc_indices(height: int, width: int, row: int, col: int, radius: int) -> tuple[np.ndarray, np.ndarray]:
    """In-bounds pixels within Euclidean distance `radius` of (row, col)."""
    rr = np.arange(max(0, row - radius), min(height, row + radius + 1))
    cc = np.arange(max(0, col - radius), min(width, col + radius + 1))
    grid_r, grid_c = np.meshgrid(rr, cc, indexing="ij")
    keep = (grid_r - row) ** 2 + (grid_c - col) ** 2 <= radius * radius
    return grid_r[keep], grid_c[keep]


def extract_region_feature(f: DenseMap, kp: tuple[int, int], radius: int) -> KeypointFeature:
    """Mean feature over the disc of pixels around `kp` (clipped to the map)."""
    row, col = int(kp[0]), int(kp[1])
    if not (0 <= row < f.height and 0 <= col < f.width):
        raise InvalidArgumentError(f"keypoint {kp} outside {f.height}x{f.width} map")
    rows, cols = disc_indices(f.height, f.width, row, col, radius)
    return KeypointFeature(
        vector=f.data[rows, cols].mean(axis=0),
        source_keypoint=(row, col),
        radius_used=radius,
    )


def aggregate_keypoint_features(
    features: Sequence[KeypointFeature], proj_w: np.ndarray, proj_b: np.ndarray
) -> GlobalKeypointFeature:
    """Sum of linearly projected per-keypoint features."""
    if len(features) != 3:
        raise InvalidArgumentError("aggregation expects exactly 3 keypoint features")
    for feat in features:
        if feat.vector.shape[0] != proj_w.shape[0]:
            raise InvalidArgumentError("keypoint feature dimension does not match projection")
    total = np.zeros(proj_w.shape[1])
    for feat in features:
        total = total + feat.vector @ proj_w + proj_b
    return GlobalKeypointFeature(vector=total)


def _vec(x) -> np.ndarray:
    return np.asarray(getattr(x, "vector", x), dtype=np.float64)


def cosine_loss(f_op, f_gk) -> tuple[float, np.ndarray]:
    """1 - cosine similarity, plus the analytic gradient with respect to f_gk."""
    return ad.cosine_distance_and_grad(_vec(f_op), _vec(f_gk))


def classification_loss(scores: np.ndarray, label: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy and its gradient with respect to the scores."""
    return ad.softmax_cross_entropy_and_grad(np.asarray(scores, dtype=np.float64), label)


@dataclass(frozen=True)
class CamOutput:
    localization: DenseMap
    scores: np.ndarray


def cam_graph(x: ad.Var, params: dict[str, ad.Var]) -> tuple[ad.Var, ad.Var]:
    """Differentiable class-activation head; returns (P, per-class spatial means)."""
    h, w, cin = x.value.shape
    z = ad.reshape(x, (h * w, cin))
    z = ad.tanh(ad.linear(z, params["cam/ff/w"], params["cam/ff/b"]))
    for layer in ("conv1", "conv2"):
        kernel = params[f"cam/{layer}/k"]
        kh, kw, kcin, kcout = kernel.value.shape
        cols = ad.unfold3x3(ad.reshape(z, (h, w, kcin)))
        z = ad.tanh(ad.linear(cols, ad.reshape(kernel, (kh * kw * kcin, kcout)), params[f"cam/{layer}/b"]))
    p_flat = ad.linear(z, params["cam/cls/w"], params["cam/cls/b"])
    n_classes = params["cam/cls/w"].value.shape[1]
    p = ad.reshape(p_flat, (h, w, n_classes))
    return p, ad.mean_hw(p)


def _cam_vars(head: CamHead) -> dict[str, ad.Var]:
    return {
        "cam/ff/w": ad.constant(head.ff_w),
        "cam/ff/b": ad.constant(head.ff_b),
        "cam/conv1/k": ad.constant(head.conv1_k),
        "cam/conv1/b": ad.constant(head.conv1_b),
        "cam/conv2/k": ad.constant(head.conv2_k),
        "cam/conv2/b": ad.constant(head.conv2_b),
        "cam/cls/w": ad.constant(head.cls_w),
        "cam/cls/b": ad.constant(head.cls_b),
    }


def cam_forward(f_exo: DenseMap, head: CamHead) -> CamOutput:
    """Run the class-activation head on a third-person feature map."""
    if f_exo.channels != head.in_channels:
        raise InvalidArgumentError(
            f"exo map has {f_exo.channels} channels, head expects {head.in_channels}"
        )
    p, scores = cam_graph(ad.constant(f_exo.data), _cam_vars(head))
    return CamOutput(localization=DenseMap(p.value), scores=scores.value.copy())


def extract_prototype(f_exo: DenseMap, localization: DenseMap, label: int, seed: int = PROTOTYPE_SEED) -> Prototype:
    """Distill a contact prototype from the high-activation support of one class.

    Pixels at or above the class channel's mean activation are clustered
    (K-means, up to 3 clusters) and the center most cosine-similar to the
    masked mean feature is returned.
    """
    if not 0 <= label < localization.channels:
        raise InvalidArgumentError(f"label {label} out of range for {localization.channels} classes")
    if localization.data.shape[:2] != f_exo.data.shape[:2]:
        raise InvalidArgumentError("localization map and feature map shapes differ")
    act = localization.data[:, :, label]
    mask = act >= act.mean()
    if not mask.any():
        raise EmptyPrototypeError("no pixels at or above the mean activation")
    feats = f_exo.data[mask]
    masked_mean = feats.mean(axis=0)
    mean_norm = float(np.linalg.norm(masked_mean))
    if mean_norm == 0.0:
        raise EmptyPrototypeError("activation support has zero mean feature")
    k = min(PROTOTYPE_CLUSTERS, feats.shape[0])
    centers = kmeans(feats, k, seed=seed).centers
    norms = np.linalg.norm(centers, axis=1)
    sims = np.full(k, -np.inf)
    valid = norms > 0
    sims[valid] = (centers[valid] @ masked_mean) / (norms[valid] * mean_norm)
    if not valid.any():
        raise EmptyPrototypeError("all cluster centers are zero vectors")
    return Prototype(vector=centers[int(np.argmax(sims))].copy())


TRAINABLE = (
    "fusion/proj0/w",
    "fusion/proj0/b",
    "fusion/proj1/w",
    "fusion/proj1/b",
    "fusion/proj2/w",
    "fusion/proj2/b",
    "fusion/alphas",
    "fusion/mlp/w1",
    "fusion/mlp/b1",
    "fusion/mlp/w2",
    "fusion/mlp/b2",
    "select/weights",
    "proj/w",
    "proj/b",
    "cam/ff/w",
    "cam/ff/b",
    "cam/conv1/k",
    "cam/conv1/b",
    "cam/conv2/k",
    "cam/conv2/b",
    "cam/cls/w",
    "cam/cls/b",
)


def _near_identity(rng: np.random.Generator, din: int, dout: int) -> np.ndarray:
    """Rectangular identity plus small seeded noise."""
    return np.eye(din, dout) + 0.01 * rng.standard_normal((din, dout))


def initialize_params(spec: ModelSpec, seed: int) -> TrainedParams:
    """Deterministic parameter init; square maps start near identity."""
    rng = np.random.default_rng(seed)
    proj_ws = tuple(_near_identity(rng, c, spec.proj_dim) for c in spec.layer_channels)
    proj_bs = tuple(np.zeros(spec.proj_dim) for _ in range(3))
    fusion = FusionParams(
        proj_weights=proj_ws,
        proj_biases=proj_bs,
        norm_mean=np.zeros((3, spec.proj_dim)),
        norm_std=np.ones((3, spec.proj_dim)),
        alphas=np.full(3, 1.0 / 3.0),
        mlp=MlpParams(
            w1=_near_identity(rng, spec.proj_dim, spec.hidden_dim),
            b1=np.zeros(spec.hidden_dim),
            w2=_near_identity(rng, spec.hidden_dim, spec.fused_dim),
            b2=np.zeros(spec.fused_dim),
            activation=spec.mlp_activation,
        ),
    )
    # fan-in scaled init keeps activations and gradients O(1) through the head
    cam = CamHead(
        ff_w=rng.standard_normal((spec.exo_channels, spec.cam_hidden)) / np.sqrt(spec.exo_channels),
        ff_b=np.zeros(spec.cam_hidden),
        conv1_k=rng.standard_normal((3, 3, spec.cam_hidden, spec.cam_hidden)) / np.sqrt(9 * spec.cam_hidden),
        conv1_b=np.zeros(spec.cam_hidden),
        conv2_k=rng.standard_normal((3, 3, spec.cam_hidden, spec.cam_hidden)) / np.sqrt(9 * spec.cam_hidden),
        conv2_b=np.zeros(spec.cam_hidden),
        cls_w=rng.standard_normal((spec.cam_hidden, spec.n_classes)) / np.sqrt(spec.cam_hidden),
        cls_b=np.zeros(spec.n_classes),
    )
    return TrainedParams(
        spec=spec,
        fusion=fusion,
        selection=SelectionWeights(np.zeros((spec.n_classes, spec.n_slots))),
        cam=cam,
        proj_w=_near_identity(rng, spec.fused_dim, spec.exo_channels),
        proj_b=np.zeros(spec.exo_channels),
    )


def params_to_arrays(params: TrainedParams) -> dict[str, np.ndarray]:
    f = params.fusion
    return {
        "fusion/proj0/w": f.proj_weights[0],
        "fusion/proj0/b": f.proj_biases[0],
        "fusion/proj1/w": f.proj_weights[1],
        "fusion/proj1/b": f.proj_biases[1],
        "fusion/proj2/w": f.proj_weights[2],
        "fusion/proj2/b": f.proj_biases[2],
        "fusion/alphas": f.alphas,
        "fusion/mlp/w1": f.mlp.w1,
        "fusion/mlp/b1": f.mlp.b1,
        "fusion/mlp/w2": f.mlp.w2,
        "fusion/mlp/b2": f.mlp.b2,
        "fusion/norm_mean": f.norm_mean,
        "fusion/norm_std": f.norm_std,
        "select/weights": params.selection.matrix,
        "proj/w": params.proj_w,
        "proj/b": params.proj_b,
        "cam/ff/w": params.cam.ff_w,
        "cam/ff/b": params.cam.ff_b,
        "cam/conv1/k": params.cam.conv1_k,
        "cam/conv1/b": params.cam.conv1_b,
        "cam/conv2/k": params.cam.conv2_k,
        "cam/conv2/b": params.cam.conv2_b,
        "cam/cls/w": params.cam.cls_w,
        "cam/cls/b": params.cam.cls_b,
    }


def arrays_to_params(arrays: dict[str, np.ndarray], spec: ModelSpec) -> TrainedParams:
    fusion = FusionParams(
        proj_weights=(arrays["fusion/proj0/w"], arrays["fusion/proj1/w"], arrays["fusion/proj2/w"]),
        proj_biases=(arrays["fusion/proj0/b"], arrays["fusion/proj1/b"], arrays["fusion/proj2/b"]),
        norm_mean=arrays["fusion/norm_mean"],
        norm_std=arrays["fusion/norm_std"],
        alphas=arrays["fusion/alphas"],
        mlp=MlpParams(
            w1=arrays["fusion/mlp/w1"],
            b1=arrays["fusion/mlp/b1"],
            w2=arrays["fusion/mlp/w2"],
            b2=arrays["fusion/mlp/b2"],
            activation=spec.mlp_activation,
        ),
    )
    cam = CamHead(
        ff_w=arrays["cam/ff/w"],
        ff_b=arrays["cam/ff/b"],
        conv1_k=arrays["cam/conv1/k"],
        conv1_b=arrays["cam/conv1/b"],
        conv2_k=arrays["cam/conv2/k"],
        conv2_b=arrays["cam/conv2/b"],
        cls_w=arrays["cam/cls/w"],
        cls_b=arrays["cam/cls/b"],
    )
    return TrainedParams(
        spec=spec,
        fusion=fusion,
        selection=SelectionWeights(arrays["select/weights"]),
        cam=cam,
        proj_w=arrays["proj/w"],
        proj_b=arrays["proj/b"],
    )


def _row(mat: ad.Var, idx: int) -> ad.Var:
    def vjp(g):
        grad = np.zeros_like(mat.value)
        grad[idx] = g
        return grad

    return ad.Var(mat.value[idx], (mat,), (vjp,))


def _gather(vec: ad.Var, indices: np.ndarray) -> ad.Var:
    def vjp(g):
        grad = np.zeros_like(vec.value)
        np.add.at(grad, indices, g)
        return grad

    return ad.Var(vec.value[indices], (vec,), (vjp,))


def _sample_losses(
    variables: dict[str, ad.Var],
    sample: TrainSample,
    spec: ModelSpec,
    config: TrainConfig,
    norm_mean: np.ndarray,
    norm_std: np.ndarray,
    discs: list[tuple[np.ndarray, np.ndarray]],
    slot_order: np.ndarray,
) -> tuple[ad.Var, ad.Var, ad.Var]:
    """Build one sample's loss graph; returns (total, classification, cosine)."""
    layers = [ad.constant(dm.data) for dm in sample.ego_layers]
    fused = lmsc.fuse_graph(layers, variables, norm_mean, norm_std, spec.mlp_activation)
    f_ms = lmsc.multiscale_graph(fused)
    feats = ad.disc_means(f_ms, discs)
    projected = ad.linear(feats, variables["proj/w"], variables["proj/b"])
    row = _gather(_row(variables["select/weights"], sample.label), slot_order)
    attention = ad.masked_softmax(row, np.ones(len(slot_order), dtype=bool), config.temperature)
    f_gk = ad.vecmat(attention, projected)

    exo = ad.constant(sample.exo_features.data)
    p, scores = cam_graph(exo, variables)
    l_cls = ad.cross_entropy(scores, sample.label)
    prototype = extract_prototype(sample.exo_features, DenseMap(p.value), sample.label)
    l_cos = ad.cosine_loss_against(f_gk, prototype.vector)
    return ad.add(l_cls, l_cos), l_cls, l_cos


def _prepare_sample(sample: TrainSample, spec: ModelSpec, config: TrainConfig):
    """Precompute the disc index arrays and slot ordering for one sample."""
    cands = sample.candidates
    grid_h, grid_w = cands.grid_shape
    ordered = sorted(cands.candidates, key=cands.slot_of)
    discs = [disc_indices(grid_h, grid_w, c.grid_row, c.grid_col, config.radius) for c in ordered]
    slot_order = np.array([cands.slot_of(c) for c in ordered], dtype=np.int64)
    return discs, slot_order


def train(dataset: Sequence[TrainSample], config: TrainConfig, spec: ModelSpec) -> TrainResult:
    """Stochastic gradient descent (batch size 1) on classification + cosine loss."""
    if not dataset:
        raise InvalidArgumentError("training dataset is empty")
    for sample in dataset:
        if not 0 <= sample.label < spec.n_classes:
            raise InvalidArgumentError(f"label {sample.label} outside {spec.n_classes} classes")
        if sample.candidates.n_slots != spec.n_slots:
            raise InvalidArgumentError("candidate slot grid does not match the model spec")
    params = initialize_params(spec, config.seed)
    arrays = params_to_arrays(params)
    variables = {name: ad.param(arrays[name].copy()) for name in TRAINABLE}
    norm_mean = params.fusion.norm_mean
    norm_std = params.fusion.norm_std
    prepared = [_prepare_sample(s, spec, config) for s in dataset]

    def epoch_mean(rows: list[tuple[float, float, float]]) -> EpochLoss:
        arr = np.asarray(rows)
        return EpochLoss(*(float(v) for v in arr.mean(axis=0)))

    initial_rows = []
    for sample, (discs, slot_order) in zip(dataset, prepared):
        total, l_cls, l_cos = _sample_losses(variables, sample, spec, config, norm_mean, norm_std, discs, slot_order)
        initial_rows.append((float(total.value), float(l_cls.value), float(l_cos.value)))
    initial = epoch_mean(initial_rows)

    history: list[EpochLoss] = []
    for epoch in range(1, config.epochs + 1):
        rows = []
        for sample, (discs, slot_order) in zip(dataset, prepared):
            total, l_cls, l_cos = _sample_losses(
                variables, sample, spec, config, norm_mean, norm_std, discs, slot_order
            )
            if not np.isfinite(total.value):
                raise TrainingDivergedError(f"non-finite loss in epoch {epoch}", epoch=epoch)
            rows.append((float(total.value), float(l_cls.value), float(l_cos.value)))
            ad.backward(total)
            for name in TRAINABLE:
                var = variables[name]
                var.value = var.value - config.learning_rate * var.grad
        history.append(epoch_mean(rows))

    final_arrays = {name: variables[name].value.copy() for name in TRAINABLE}
    final_arrays["fusion/norm_mean"] = norm_mean
    final_arrays["fusion/norm_std"] = norm_std
    return TrainResult(
        params=arrays_to_params(final_arrays, spec),
        initial_loss=initial,
        history=tuple(history),
    )


@dataclass(frozen=True)
class InferenceResult:
    selection: SelectedKeypoints
    candidates: CandidateKeypointSet
    zero_variance_features: bool


def infer(
    ego_layers: Sequence[DenseMap],
    masks: Sequence[lmsc.RegionMask],
    affordance: int,
    params: TrainedParams,
    seed: int,
    image_size: int = lmsc.IMAGE_SIZE,
) -> InferenceResult:
    """Full pipeline: fuse, multiscale, reduce, extract candidates, select top-3."""
    spec = params.spec
    if not 0 <= affordance < spec.n_classes:
        raise InvalidArgumentError(f"affordance {affordance} out of range for {spec.n_classes} classes")
    fused = lmsc.fuse_layers(list(ego_layers), params.fusion)
    f_ms = lmsc.multiscale(fused)
    reduced = lmsc.reduce_features(f_ms, spec.pca_dim)
    cands = lmsc.extract_candidates(
        reduced.features, masks, spec.clusters_per_region, seed=seed, image_size=image_size
    )
    selection = select_keypoints(params.selection.matrix[affordance], cands)
    return InferenceResult(selection=selection, candidates=cands, zero_variance_features=reduced.zero_variance)
