"""Deterministic numeric kernels shared by the rest of the package.

Everything here is a pure function of its inputs plus an explicit seed, in
64-bit arithmetic. Conventions that downstream modules depend on bit-exactly:

* PCA variance uses the population convention (divide by n).
* K-means seeding is distance-weighted (k-means++ style) from the given seed,
  with empty clusters repaired by moving the farthest point out of the largest
  cluster; iteration cap 100, center-movement tolerance 1e-6.
* Bilinear resampling is corner-aligned; a single-sample output axis reads the
  source axis midpoint.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NumericError

KMEANS_MAX_ITER = 100
KMEANS_TOL = 1e-6


@dataclass(frozen=True)
class DenseMap:
    """Row-major (height, width, channels) grid of finite reals."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3:
            raise InvalidArgumentError(f"dense map must be (H, W, C), got shape {arr.shape}")
        if arr.size == 0:
            raise InvalidArgumentError("dense map must be non-empty")
        if not np.all(np.isfinite(arr)):
            raise InvalidArgumentError("dense map contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class PcaModel:
    """Top-k principal directions: `components` rows are orthonormal, variances descending."""

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray


@dataclass(frozen=True)
class ClusterResult:
    centers: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: tuple[float, ...]


def _as_samples(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise InvalidArgumentError(f"sample matrix must be (n, d) with n, d >= 1, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("sample matrix contains non-finite values")
    return arr


def pca_fit(x, k: int) -> PcaModel:
    """Fit the top-k principal directions of mean-centered `x` ((n, d) samples)."""
    arr = _as_samples(x)
    n, d = arr.shape
    if n < 2:
        raise InvalidArgumentError("PCA needs at least 2 samples")
    if not 1 <= k <= min(n, d):
        raise InvalidArgumentError(f"k={k} must satisfy 1 <= k <= min(n, d) = {min(n, d)}")
    mean = arr.mean(axis=0)
    centered = arr - mean
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    components = evecs[:, order].T.copy()
    variances = np.maximum(evals[order], 0.0)
    # Fix per-component sign so the largest-magnitude entry is positive.
    for row in components:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=components, explained_variance=variances)


def pca_transform(model: PcaModel, x) -> np.ndarray:
    arr = _as_samples(x)
    return (arr - model.mean) @ model.components.T


def pca_inverse_transform(model: PcaModel, y) -> np.ndarray:
    arr = np.asarray(y, dtype=np.float64)
    return arr @ model.components + model.mean


def _pairwise_sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _seed_centers(x: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted seeding: each next center is drawn with probability ~ D^2."""
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = ((x - x[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, n_clusters):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return x[chosen].copy()


def _repair_empty(assign: np.ndarray, counts: np.ndarray, x: np.ndarray, centers: np.ndarray):
    """Give each empty cluster the farthest point of the currently largest cluster."""
    for empty in np.flatnonzero(counts == 0):
        largest = int(np.argmax(counts))
        members = np.flatnonzero(assign == largest)
        dists = ((x[members] - centers[largest]) ** 2).sum(axis=1)
        mover = members[int(np.argmax(dists))]
        assign[mover] = empty
        counts[largest] -= 1
        counts[empty] += 1


def kmeans(x, n_clusters: int, seed: int) -> ClusterResult:
    """Seeded Euclidean K-means; bit-identical results for identical inputs and seed."""
    arr = _as_samples(x)
    n = arr.shape[0]
    if not 1 <= n_clusters <= n:
        raise InvalidArgumentError(f"n_clusters={n_clusters} must satisfy 1 <= K <= n = {n}")
    rng = np.random.default_rng(seed)
    centers = _seed_centers(arr, n_clusters, rng)
    prev_assign = None
    history: list[float] = []
    assign = np.zeros(n, dtype=np.int64)
    for _ in range(KMEANS_MAX_ITER):
        assign = np.argmin(_pairwise_sq_dists(arr, centers), axis=1)
        counts = np.bincount(assign, minlength=n_clusters)
        _repair_empty(assign, counts, arr, centers)
        new_centers = np.empty_like(centers)
        for j in range(n_clusters):
            new_centers[j] = arr[assign == j].mean(axis=0)
        history.append(float(((arr - new_centers[assign]) ** 2).sum()))
        moved = float(np.abs(new_centers - centers).max())
        centers = new_centers
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        if moved < KMEANS_TOL:
            break
        prev_assign = assign
    return ClusterResult(
        centers=centers,
        assignments=assign.astype(np.int64),
        inertia=history[-1],
        inertia_history=tuple(history),
    )


def bilinear_axis_weights(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Corner-aligned 1-D sampling: output i reads (1-w)*v[lo] + w*v[hi]."""
    if n_out < 1:
        raise InvalidArgumentError("output size must be >= 1")
    if n_out == 1:
        pos = np.array([(n_in - 1) / 2.0])
    else:
        pos = np.arange(n_out, dtype=np.float64) * ((n_in - 1) / (n_out - 1))
    lo = np.clip(np.floor(pos).astype(np.int64), 0, max(n_in - 2, 0))
    hi = np.minimum(lo + 1, n_in - 1)
    w = pos - lo
    return lo, hi, w


def resize_array(arr: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Corner-aligned bilinear resample of an (H, W, C) array."""
    y0, y1, wy = bilinear_axis_weights(arr.shape[0], out_h)
    x0, x1, wx = bilinear_axis_weights(arr.shape[1], out_w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    rows0 = arr[y0]
    rows1 = arr[y1]
    top = (1.0 - wx) * rows0[:, x0] + wx * rows0[:, x1]
    bot = (1.0 - wx) * rows1[:, x0] + wx * rows1[:, x1]
    return (1.0 - wy) * top + wy * bot


def resize_array_adjoint(grad_out: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of `resize_array` as a linear map; scatters output grads back."""
    y0, y1, wy = bilinear_axis_weights(in_h, grad_out.shape[0])
    x0, x1, wx = bilinear_axis_weights(in_w, grad_out.shape[1])
    grad_in = np.zeros((in_h, in_w, grad_out.shape[2]), dtype=np.float64)
    wy = wy[:, None, None]
    wx = wx[None, :, None]
    for ys, wys in ((y0, 1.0 - wy), (y1, wy)):
        for xs, wxs in ((x0, 1.0 - wx), (x1, wx)):
            np.add.at(grad_in, (ys[:, None], xs[None, :]), wys * wxs * grad_out)
    return grad_in


def bilinear_resize(m: DenseMap, out_h: int, out_w: int) -> DenseMap:
    """Resample a dense map to (out_h, out_w); channel count preserved."""
    if out_h < 1 or out_w < 1:
        raise InvalidArgumentError("target shape must be at least 1x1")
    return DenseMap(resize_array(m.data, out_h, out_w))


def finite_diff_gradient(f, x, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar `f` at `x`, one coordinate at a time."""
    if eps <= 0:
        raise InvalidArgumentError("eps must be positive")
    point = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(point)
    for idx in np.ndindex(point.shape):
        shifted = point.copy()
        shifted[idx] = point[idx] + eps
        hi = float(f(shifted))
        shifted[idx] = point[idx] - eps
        lo = float(f(shifted))
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"function returned a non-finite value near coordinate {idx}")
        grad[idx] = (hi - lo) / (2.0 * eps)
    return grad
