"""Synthetic fixture datasets with planted contact structure.

Each image carries four rectangular regions on a 32x32 feature grid. Regions
0-2 hide a contact patch at their top-left corner whose feature direction
matches the class prototype planted in the paired exo map; region 3 hides a
decoy patch that matches the prototype direction even better. Every region
also carries two off-prototype noise blobs and near-zero background.

The layout makes the first three regions with four clusters per region the
uniquely best configuration, which the hyperparameter sweep is expected to
discover:

* J=4 isolates each region's natural groups (background, two noise blobs,
  contact patch) exactly, putting a candidate on every contact pixel.
* J<4 absorbs the small contact cluster into the background, so its candidate
  lands off-contact.
* Region 2's mask holds only four pixels (contact + three far anchors): still
  four-way clusterable, but at J=5 it falls back to its centroid pixel, which
  sits by construction on the far anchors, away from the contact.
* A fourth region (only used when S=4) carries the decoy, which outranks one
  true contact in the top-3 selection.

All randomness is drawn from (seed, image-index) streams, so a fixture is
bit-reproducible. `anchor_region=False` restores a full rectangular mask for
region 2 (for counting-law fixtures that must stay clusterable at every J).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .lmsc import grid_to_image
from .manifest import Manifest, SampleRecord, save_manifest
from .metrics import CameraIntrinsics, ContactRegion3D
from . import formats

DEFAULT_CLASSES = ("press", "click", "hold", "twist", "pull", "squeeze")


@dataclass(frozen=True)
class FixtureSpec:
    classes: tuple[str, ...] = DEFAULT_CLASSES
    images_per_class: int = 1
    grid: int = 32
    channels: int = 8
    regions: int = 4
    image_size: int = 448
    contact_scale: float = 0.6
    contact_offset: float = 0.15
    # per-region contact gains: strictly decreasing, so the learned weight
    # order (and the slot order functional/little/wrist) is pinned to regions
    # 0, 1, 2 with margins that dominate disc-geometry variation
    contact_gain_steps: tuple[float, float, float] = (2.4, 1.2, 0.45)
    contact_split: float = 0.5
    noise_scale: float = 0.8
    noise_anti: float = 1.4
    strip_scale: float = 0.5
    blob_jitter: float = 0.01
    background_jitter: float = 0.001
    layer_jitter: float = 0.003
    decoy_scale: float = 3.6
    exo_scale: float = 4.0
    exo_jitter: float = 0.05
    exo_background: float = 0.02
    anchor_region: bool = True
    tiny_region: int | None = None
    with_depth: bool = True
    depth_value: float = 0.5
    contact_radius_m: float = 0.03

    def __post_init__(self):
        if self.regions != 4:
            raise InvalidArgumentError("the planted layout is defined for exactly 4 regions")
        if self.grid < 32:
            raise InvalidArgumentError("grid must be at least 32 to fit the planted layout")
        if self.channels < 4:
            raise InvalidArgumentError("need at least 4 channels for the planted subspace")


@dataclass(frozen=True)
class FixtureSample:
    sample_id: str
    label: int
    affordance: str
    ego_layers: tuple[np.ndarray, np.ndarray, np.ndarray]
    exo_layers: tuple[np.ndarray, np.ndarray, np.ndarray]
    masks: tuple[np.ndarray, ...]
    gt_grid: tuple[tuple[int, int], ...]
    gt_keypoints: tuple[tuple[int, int], ...]
    depth: np.ndarray | None
    contact_regions: tuple[ContactRegion3D, ...] | None


@dataclass(frozen=True)
class FixtureDataset:
    spec: FixtureSpec
    seed: int
    classes: tuple[str, ...]
    samples: tuple[FixtureSample, ...]
    intrinsics: CameraIntrinsics


def region_rects(grid: int) -> list[tuple[slice, slice]]:
    """Four 12x12 quadrant rectangles, separated so keypoint discs and the
    resampling halo of one region cannot reach another region's features."""
    lo = slice(1, 13)
    hi = slice(grid - 13, grid - 1)
    return [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]


def _planted_basis(spec: FixtureSpec, seed: int) -> np.ndarray:
    """Orthonormal (channels, 3) basis for the planted feature subspace."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA515]))
    basis, _ = np.linalg.qr(rng.standard_normal((spec.channels, 3)))
    return basis


def _class_directions(spec: FixtureSpec, basis: np.ndarray, label: int):
    q1, q2, q3 = basis.T
    theta = np.pi * label / max(len(spec.classes), 1)
    v = spec.contact_scale * (np.cos(theta) * q1 + np.sin(theta) * q2)
    perp = -np.sin(theta) * q1 + np.cos(theta) * q2
    delta = spec.contact_offset * q3
    gamma = spec.contact_split * perp
    # the two blob directions cancel pairwise except for a shared component
    # opposing the prototype, so the initial soft mixture starts anti-aligned;
    # the strip holds a class-independent orthogonal direction that keeps the
    # mixture norm bounded away from zero while it swings toward the prototype
    spread = spec.noise_scale * (0.9 * q3 + 0.436 * perp)
    anti = 0.5 * spec.noise_anti * (v / np.linalg.norm(v))
    noise_a = spread - anti
    noise_b = -spread - anti
    strip = -spec.strip_scale * q3
    return v, delta, gamma, noise_a, noise_b, strip


def _paint_region(data, rect, contact_feature, gamma, noise_a, noise_b, strip, rng, spec):
    """Contact triple at the rect corner, two 3x3 noise blobs, a strip row.

    The blobs sit at least a disc radius away from the contact so only the
    (off-prototype) blob directions can bleed into contact discs.
    """
    r0, c0 = rect[0].start, rect[1].start
    data[rect] = spec.background_jitter * rng.standard_normal(data[rect].shape)
    data[r0 + 4 : r0 + 7, c0 + 6 : c0 + 9] = noise_a + spec.blob_jitter * rng.standard_normal(
        (3, 3, spec.channels)
    )
    data[r0 + 7 : r0 + 10, c0 + 2 : c0 + 5] = noise_b + spec.blob_jitter * rng.standard_normal(
        (3, 3, spec.channels)
    )
    data[rect[0].stop - 1, rect[1]] = strip + spec.blob_jitter * rng.standard_normal(
        (rect[1].stop - rect[1].start, spec.channels)
    )
    data[r0, c0] = contact_feature
    data[r0, c0 + 1] = contact_feature + gamma
    data[r0, c0 + 2] = contact_feature - gamma
    return (r0, c0)


def _structured_mask(grid: int, rect) -> np.ndarray:
    """Contact triple, both blobs, and a calm strip along the rect's last row."""
    bitmap = np.zeros((grid, grid), dtype=bool)
    r0, c0 = rect[0].start, rect[1].start
    bitmap[r0, c0 : c0 + 3] = True
    bitmap[r0 + 4 : r0 + 7, c0 + 6 : c0 + 9] = True
    bitmap[r0 + 7 : r0 + 10, c0 + 2 : c0 + 5] = True
    bitmap[rect[0].stop - 1, rect[1]] = True
    return bitmap


def _build_sample(spec: FixtureSpec, basis: np.ndarray, seed: int, index: int, label: int, intr) -> FixtureSample:
    rng = np.random.default_rng(np.random.SeedSequence([seed, index + 1]))
    g = spec.grid
    v, delta, gamma, noise_a, noise_b, strip = _class_directions(spec, basis, label)
    rects = region_rects(g)

    base = spec.background_jitter * rng.standard_normal((g, g, spec.channels))
    contact_pixels = []
    for rid, rect in enumerate(rects):
        if rid < 3:
            feature = spec.contact_gain_steps[rid] * (v + delta)
        else:
            feature = spec.decoy_scale * v
        contact_pixels.append(_paint_region(base, rect, feature, gamma, noise_a, noise_b, strip, rng, spec))

    ego_layers = tuple(base + spec.layer_jitter * rng.standard_normal(base.shape) for _ in range(3))

    exo_layers = []
    for layer_idx in range(3):
        if layer_idx == 2:
            unit = v / np.linalg.norm(v)
            layer = spec.exo_scale * unit + spec.exo_jitter * rng.standard_normal((g, g, spec.channels))
        else:
            layer = spec.exo_background * rng.standard_normal((g, g, spec.channels))
        exo_layers.append(layer)

    masks = []
    for rid, rect in enumerate(rects):
        bitmap = _structured_mask(g, rect)
        if rid == 2 and spec.anchor_region:
            # four-pixel mask: the contact plus three far anchors near the
            # opposite corner, so a centroid fallback lands off-contact
            bitmap = np.zeros((g, g), dtype=bool)
            bitmap[rect[0].start, rect[1].start] = True
            last_r, last_c = rect[0].stop - 1, rect[1].stop - 1
            bitmap[last_r - 1, last_c - 1] = True
            bitmap[last_r - 1, last_c] = True
            bitmap[last_r, last_c - 1] = True
        if spec.tiny_region == rid:
            bitmap = np.zeros((g, g), dtype=bool)
            bitmap[rect[0].start, rect[1].start] = True
        masks.append(bitmap)

    gt_grid = tuple(contact_pixels[:3])
    gt_keypoints = tuple(
        (grid_to_image(r, g, spec.image_size), grid_to_image(c, g, spec.image_size)) for r, c in gt_grid
    )

    depth = None
    regions3d = None
    if spec.with_depth:
        depth = np.full((spec.image_size, spec.image_size), spec.depth_value, dtype=np.float64)
        regions3d = tuple(
            ContactRegion3D(
                center=np.array(
                    [
                        (col - intr.cx) * spec.depth_value / intr.fx,
                        (row - intr.cy) * spec.depth_value / intr.fy,
                        spec.depth_value,
                    ]
                ),
                radius=spec.contact_radius_m,
            )
            for row, col in gt_keypoints
        )

    affordance = spec.classes[label]
    return FixtureSample(
        sample_id=f"img_{index:03d}",
        label=label,
        affordance=affordance,
        ego_layers=ego_layers,
        exo_layers=tuple(exo_layers),
        masks=tuple(masks),
        gt_grid=gt_grid,
        gt_keypoints=gt_keypoints,
        depth=depth,
        contact_regions=regions3d,
    )


def build_fixture(spec: FixtureSpec, seed: int) -> FixtureDataset:
    """Generate the in-memory fixture dataset (one image per (class, repeat))."""
    intr = CameraIntrinsics(fx=600.0, fy=600.0, cx=(spec.image_size - 1) / 2.0, cy=(spec.image_size - 1) / 2.0)
    basis = _planted_basis(spec, seed)
    samples = []
    index = 0
    for _ in range(spec.images_per_class):
        for label in range(len(spec.classes)):
            samples.append(_build_sample(spec, basis, seed, index, label, intr))
            index += 1
    return FixtureDataset(spec=spec, seed=seed, classes=spec.classes, samples=tuple(samples), intrinsics=intr)


def write_fixture_dataset(dataset: FixtureDataset, out_dir) -> Path:
    """Write bundles, masks, depth, and the manifest; returns the manifest path."""
    out = Path(out_dir)
    for sub in ("bundles", "masks", "depth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    records = []
    for sample in dataset.samples:
        ego_rel = f"bundles/{sample.sample_id}_ego.fbnd"
        exo_rel = f"bundles/{sample.sample_id}_exo.fbnd"
        formats.write_bundle(out / ego_rel, list(sample.ego_layers))
        formats.write_bundle(out / exo_rel, list(sample.exo_layers))
        mask_rels = []
        for rid, bitmap in enumerate(sample.masks):
            rel = f"masks/{sample.sample_id}_r{rid}.fmsk"
            formats.write_mask(out / rel, bitmap)
            mask_rels.append(rel)
        depth_rel = None
        if sample.depth is not None:
            depth_rel = f"depth/{sample.sample_id}.fdpt"
            formats.write_depth(out / depth_rel, sample.depth)
        records.append(
            SampleRecord(
                sample_id=sample.sample_id,
                ego_bundle=ego_rel,
                exo_bundle=exo_rel,
                masks=tuple(mask_rels),
                affordance=sample.affordance,
                gt_keypoints=sample.gt_keypoints,
                depth=depth_rel,
                contact_regions=sample.contact_regions,
            )
        )
    manifest = Manifest(
        tool="synthetic-drill",
        classes=dataset.classes,
        samples=tuple(records),
        image_size=dataset.spec.image_size,
        source_resolution=(dataset.spec.image_size, dataset.spec.image_size),
        backbone_layers=(-3, -2, -1),
        intrinsics=dataset.intrinsics,
    )
    manifest_path = out / "manifest.json"
    save_manifest(manifest, manifest_path)
    return manifest_path
