"""Dataset manifests: JSON descriptions of ego/exo bundles, masks, and ground truth.

Manifests are written canonically (sorted keys, two-space indent, trailing
newline) so write -> read -> write is byte-identical. All referenced paths are
stored relative to the manifest file and checked for existence at load.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import DataIOError, InvalidArgumentError, VocabularyError
from .metrics import CameraIntrinsics, ContactRegion3D

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    ego_bundle: str
    exo_bundle: str
    masks: tuple[str, ...]
    affordance: str
    gt_keypoints: tuple[tuple[int, int], ...] | None = None
    depth: str | None = None
    contact_regions: tuple[ContactRegion3D, ...] | None = None


@dataclass(frozen=True)
class Manifest:
    tool: str
    classes: tuple[str, ...]
    samples: tuple[SampleRecord, ...]
    image_size: int = 448
    source_resolution: tuple[int, int] | None = None
    backbone_layers: tuple[int, int, int] | None = None
    intrinsics: CameraIntrinsics | None = None

    def class_index(self, name: str) -> int:
        try:
            return self.classes.index(name)
        except ValueError:
            raise VocabularyError(f"affordance {name!r} not in vocabulary {list(self.classes)}") from None


def _sample_to_json(s: SampleRecord) -> dict:
    out = {
        "id": s.sample_id,
        "ego_bundle": s.ego_bundle,
        "exo_bundle": s.exo_bundle,
        "masks": list(s.masks),
        "affordance": s.affordance,
    }
    if s.gt_keypoints is not None:
        out["gt_keypoints"] = [list(kp) for kp in s.gt_keypoints]
    if s.depth is not None:
        out["depth"] = s.depth
    if s.contact_regions is not None:
        out["contact_regions"] = [
            {"center": [float(v) for v in r.center], "radius": float(r.radius)} for r in s.contact_regions
        ]
    return out


def _sample_from_json(obj: dict) -> SampleRecord:
    regions = None
    if "contact_regions" in obj:
        regions = tuple(
            ContactRegion3D(center=[float(v) for v in r["center"]], radius=float(r["radius"]))
            for r in obj["contact_regions"]
        )
    gt = None
    if "gt_keypoints" in obj:
        gt = tuple((int(kp[0]), int(kp[1])) for kp in obj["gt_keypoints"])
    return SampleRecord(
        sample_id=obj["id"],
        ego_bundle=obj["ego_bundle"],
        exo_bundle=obj["exo_bundle"],
        masks=tuple(obj["masks"]),
        affordance=obj["affordance"],
        gt_keypoints=gt,
        depth=obj.get("depth"),
        contact_regions=regions,
    )


def manifest_to_json(m: Manifest) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "tool": m.tool,
        "classes": list(m.classes),
        "image_size": m.image_size,
        "samples": [_sample_to_json(s) for s in m.samples],
    }
    if m.source_resolution is not None:
        out["source_resolution"] = list(m.source_resolution)
    if m.backbone_layers is not None:
        out["backbone_layers"] = list(m.backbone_layers)
    if m.intrinsics is not None:
        intr = m.intrinsics
        out["intrinsics"] = {"fx": intr.fx, "fy": intr.fy, "cx": intr.cx, "cy": intr.cy}
    return out


def dumps_canonical(obj: dict) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def save_manifest(m: Manifest, path) -> None:
    try:
        Path(path).write_text(dumps_canonical(manifest_to_json(m)), encoding="utf-8")
    except OSError as exc:
        raise DataIOError(f"cannot write manifest {path}: {exc}") from exc


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"manifest {path} is not valid JSON: {exc}") from exc
    if obj.get("schema_version") != SCHEMA_VERSION:
        raise InvalidArgumentError(f"manifest {path}: unsupported schema version {obj.get('schema_version')}")
    classes = tuple(obj["classes"])
    if not classes:
        raise InvalidArgumentError(f"manifest {path}: empty class vocabulary")
    intr = None
    if "intrinsics" in obj:
        i = obj["intrinsics"]
        intr = CameraIntrinsics(fx=float(i["fx"]), fy=float(i["fy"]), cx=float(i["cx"]), cy=float(i["cy"]))
    samples = tuple(_sample_from_json(s) for s in obj["samples"])
    m = Manifest(
        tool=obj["tool"],
        classes=classes,
        samples=samples,
        image_size=int(obj.get("image_size", 448)),
        source_resolution=tuple(obj["source_resolution"]) if "source_resolution" in obj else None,
        backbone_layers=tuple(obj["backbone_layers"]) if "backbone_layers" in obj else None,
        intrinsics=intr,
    )
    base = path.parent
    for sample in m.samples:
        if sample.affordance not in classes:
            raise VocabularyError(
                f"sample {sample.sample_id}: affordance {sample.affordance!r} not in vocabulary"
            )
        referenced = [sample.ego_bundle, sample.exo_bundle, *sample.masks]
        if sample.depth is not None:
            referenced.append(sample.depth)
        for rel in referenced:
            if not (base / rel).exists():
                raise DataIOError(f"sample {sample.sample_id}: missing file {base / rel}")
    return m


def resolve(manifest_path, relative: str) -> Path:
    return Path(manifest_path).parent / relative
