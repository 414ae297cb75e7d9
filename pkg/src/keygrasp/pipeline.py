"""Operational shell: run configs, dataset loading, and the batch commands.

Commands mirror the CLI surface: train, infer, eval, sweep, simulate-kgt, and
synth-fixtures. Batch inference isolates per-image failures as error records
and keeps going; results are always emitted in manifest order.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import cmka, fixtures, formats, kgt, lmsc, metrics
from .errors import (
    AlignmentError,
    DataIOError,
    InvalidArgumentError,
    KeygraspError,
)
from .manifest import Manifest, dumps_canonical, load_manifest, resolve
from .numerics import DenseMap


@dataclass(frozen=True)
class RunConfig:
    regions: int = 3
    clusters: int = 4
    pca_dim: int = 3
    radius: int = 4
    sigma: float = 10.0
    learning_rate: float = 0.01
    epochs: int = 15
    temperature: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.regions < 1 or self.clusters < 1:
            raise InvalidArgumentError("regions and clusters must be >= 1")
        if self.epochs < 1:
            raise InvalidArgumentError("epochs must be >= 1")
        if self.sigma <= 0:
            raise InvalidArgumentError("sigma must be positive")

    def train_config(self) -> cmka.TrainConfig:
        return cmka.TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            seed=self.seed,
            radius=self.radius,
            temperature=self.temperature,
        )


def load_run_config(path) -> RunConfig:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"config {path} is not valid JSON: {exc}") from exc
    known = {f: obj[f] for f in RunConfig.__dataclass_fields__ if f in obj}
    unknown = set(obj) - set(RunConfig.__dataclass_fields__)
    if unknown:
        raise InvalidArgumentError(f"config {path}: unknown keys {sorted(unknown)}")
    return RunConfig(**known)


def save_run_config(config: RunConfig, path) -> None:
    Path(path).write_text(dumps_canonical(asdict(config)), encoding="utf-8")


def load_hand_model(path) -> kgt.HandModel:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read hand model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"hand model {path} is not valid JSON: {exc}") from exc
    try:
        return kgt.HandModel(
            wrist_to_functional=float(obj["wrist_to_functional_m"]),
            wrist_to_little=float(obj["wrist_to_little_m"]),
            functional_to_little=float(obj["functional_to_little_m"]),
            functional_finger=obj.get("functional_finger", "index"),
        )
    except KeyError as exc:
        raise InvalidArgumentError(f"hand model {path}: missing key {exc}") from exc


DEFAULT_HAND_MODEL = kgt.HandModel(
    wrist_to_functional=0.17, wrist_to_little=0.12, functional_to_little=0.11
)


@dataclass(frozen=True)
class LoadedSample:
    record_id: str
    label: int
    ego_layers: tuple[DenseMap, DenseMap, DenseMap]
    exo_layers: tuple[DenseMap, DenseMap, DenseMap]
    masks: tuple[lmsc.RegionMask, ...]


def _align_mask(bitmap: np.ndarray, grid_shape: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor resample of a mask onto the feature grid."""
    if bitmap.shape == grid_shape:
        return bitmap
    gh, gw = grid_shape
    rows = np.clip(np.rint((np.arange(gh) + 0.5) * bitmap.shape[0] / gh - 0.5), 0, bitmap.shape[0] - 1)
    cols = np.clip(np.rint((np.arange(gw) + 0.5) * bitmap.shape[1] / gw - 0.5), 0, bitmap.shape[1] - 1)
    return bitmap[rows.astype(int)[:, None], cols.astype(int)[None, :]]


def load_sample(manifest_path, manifest: Manifest, record, max_regions: int) -> LoadedSample:
    ego = formats.read_bundle(resolve(manifest_path, record.ego_bundle))
    exo = formats.read_bundle(resolve(manifest_path, record.exo_bundle))
    for name, layers in (("ego", ego), ("exo", exo)):
        if len(layers) != 3:
            raise InvalidArgumentError(f"{record.sample_id}: {name} bundle must hold 3 layers, has {len(layers)}")
    grid_shape = ego[0].shape[:2]
    masks = []
    for rid, rel in enumerate(record.masks[:max_regions]):
        bitmap = _align_mask(formats.read_mask(resolve(manifest_path, rel)), grid_shape)
        if not bitmap.any():
            raise InvalidArgumentError(f"{record.sample_id}: mask {rel} is empty after alignment")
        masks.append(lmsc.RegionMask(bitmap=bitmap, region_id=rid))
    if len(masks) < max_regions:
        raise InvalidArgumentError(
            f"{record.sample_id}: needs {max_regions} masks, manifest lists {len(record.masks)}"
        )
    return LoadedSample(
        record_id=record.sample_id,
        label=manifest.class_index(record.affordance),
        ego_layers=tuple(DenseMap(l.astype(np.float64)) for l in ego),
        exo_layers=tuple(DenseMap(l.astype(np.float64)) for l in exo),
        masks=tuple(masks),
    )


def build_model_spec(manifest: Manifest, config: RunConfig, sample: LoadedSample) -> cmka.ModelSpec:
    layer_channels = tuple(l.channels for l in sample.ego_layers)
    width = layer_channels[0]
    exo_channels = sample.exo_layers[2].channels
    return cmka.ModelSpec(
        n_classes=len(manifest.classes),
        layer_channels=layer_channels,
        proj_dim=width,
        hidden_dim=width,
        fused_dim=width,
        exo_channels=exo_channels,
        cam_hidden=exo_channels,
        regions=config.regions,
        clusters_per_region=config.clusters,
        pca_dim=config.pca_dim,
        radius=config.radius,
        temperature=config.temperature,
    )


def _candidates_for(sample: LoadedSample, params: cmka.TrainedParams, config: RunConfig, image_size: int):
    fused = lmsc.fuse_layers(list(sample.ego_layers), params.fusion)
    f_ms = lmsc.multiscale(fused)
    reduced = lmsc.reduce_features(f_ms, config.pca_dim)
    return lmsc.extract_candidates(
        reduced.features, list(sample.masks), config.clusters, seed=config.seed, image_size=image_size
    )


def prepare_training(manifest_path, manifest: Manifest, config: RunConfig):
    """Load every sample and attach candidate sets built with the initial parameters."""
    loaded = [load_sample(manifest_path, manifest, rec, config.regions) for rec in manifest.samples]
    spec = build_model_spec(manifest, config, loaded[0])
    init = cmka.initialize_params(spec, config.seed)
    dataset = []
    for sample in loaded:
        cands = _candidates_for(sample, init, config, manifest.image_size)
        dataset.append(
            cmka.TrainSample(
                ego_layers=sample.ego_layers,
                exo_features=sample.exo_layers[2],
                label=sample.label,
                candidates=cands,
            )
        )
    return spec, dataset, loaded


@dataclass(frozen=True)
class TrainOutput:
    checkpoint_path: Path
    result: cmka.TrainResult


def _loss_history_json(result: cmka.TrainResult) -> dict:
    return {
        "initial": asdict(result.initial_loss),
        "epochs": [
            {"epoch": i + 1, **asdict(loss)} for i, loss in enumerate(result.history)
        ],
    }


def _loss_history_text(result: cmka.TrainResult) -> str:
    lines = [f"{'epoch':>6} {'total':>12} {'classification':>15} {'cosine':>12}"]
    lines.append(f"{'init':>6} {result.initial_loss.total:12.6f} {result.initial_loss.classification:15.6f} {result.initial_loss.cosine:12.6f}")
    for i, loss in enumerate(result.history):
        lines.append(f"{i + 1:>6} {loss.total:12.6f} {loss.classification:15.6f} {loss.cosine:12.6f}")
    return "\n".join(lines) + "\n"


def train_command(manifest_path, config: RunConfig, out_dir) -> TrainOutput:
    manifest = load_manifest(manifest_path)
    spec, dataset, _ = prepare_training(manifest_path, manifest, config)
    result = cmka.train(dataset, config.train_config(), spec)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "checkpoint.cmka"
    formats.save_checkpoint(checkpoint_path, result.params, train_seed=config.seed)
    (out / "loss_history.json").write_text(dumps_canonical(_loss_history_json(result)), encoding="utf-8")
    (out / "loss_history.txt").write_text(_loss_history_text(result), encoding="utf-8")
    return TrainOutput(checkpoint_path=checkpoint_path, result=result)


def _predict_one(sample: LoadedSample, params: cmka.TrainedParams, label: int, seed: int, image_size: int) -> dict:
    inference = cmka.infer(
        list(sample.ego_layers), list(sample.masks), label, params, seed=seed, image_size=image_size
    )
    sel = inference.selection
    return {
        "id": sample.record_id,
        "status": "ok",
        "keypoints": {
            name: [cand.row, cand.col] for name, cand in zip(cmka.SLOT_NAMES, sel.as_tuple())
        },
        "slots": list(sel.slots),
        "weights": list(sel.weights),
        "candidates": [
            {
                "region": c.region_id,
                "cluster": c.cluster_index,
                "pixel": [c.row, c.col],
                "fallback": c.from_fallback,
            }
            for c in inference.candidates.candidates
        ],
        "zero_variance_features": inference.zero_variance_features,
    }


def _error_record(sample_id: str, exc: Exception) -> dict:
    return {
        "id": sample_id,
        "status": "error",
        "category": type(exc).__name__,
        "message": str(exc),
    }


def infer_command(manifest_path, checkpoint_path, affordance: str, out_path, seed: int | None = None, config: RunConfig | None = None) -> dict:
    manifest = load_manifest(manifest_path)
    label = manifest.class_index(affordance)
    params, train_seed = formats.load_checkpoint(checkpoint_path)
    run = _infer_run_config(params, config, seed if seed is not None else train_seed)
    results = []
    for record in manifest.samples:
        try:
            sample = load_sample(manifest_path, manifest, record, run.regions)
            results.append(_predict_one(sample, params, label, run.seed, manifest.image_size))
        except KeygraspError as exc:
            results.append(_error_record(record.sample_id, exc))
    payload = {
        "affordance": affordance,
        "checkpoint": str(checkpoint_path),
        "image_size": manifest.image_size,
        "results": results,
    }
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(dumps_canonical(payload), encoding="utf-8")
    return payload


def _infer_run_config(params: cmka.TrainedParams, config: RunConfig | None, seed: int) -> RunConfig:
    spec = params.spec
    base = config if config is not None else RunConfig(
        regions=spec.regions,
        clusters=spec.clusters_per_region,
        pca_dim=spec.pca_dim,
        radius=spec.radius,
        temperature=spec.temperature,
    )
    return replace(base, regions=spec.regions, clusters=spec.clusters_per_region, pca_dim=spec.pca_dim, seed=seed)


def _metrics_for_prediction(record, result: dict, manifest: Manifest, sigma: float) -> dict:
    shape = (manifest.image_size, manifest.image_size)
    pred_kps = [tuple(result["keypoints"][name]) for name in cmka.SLOT_NAMES]
    gt_kps = list(record.gt_keypoints)
    pred_map = metrics.gaussian_gt_heatmap(pred_kps, sigma, shape)
    gt_map = metrics.gaussian_gt_heatmap(gt_kps, sigma, shape)
    fixations = np.zeros(shape, dtype=bool)
    for r, c in gt_kps:
        fixations[r, c] = True
    row = {
        "id": record.sample_id,
        "kld": metrics.kld(pred_map, gt_map),
        "sim": metrics.sim(pred_map, gt_map),
        "nss": metrics.nss(pred_map, fixations),
    }
    return row


def _tpc_for_prediction(record, result: dict, manifest: Manifest, manifest_path) -> float | None:
    if record.depth is None or record.contact_regions is None or manifest.intrinsics is None:
        return None
    depth = formats.read_depth(resolve(manifest_path, record.depth)).astype(np.float64)
    projected = []
    for name in cmka.SLOT_NAMES:
        row, col = result["keypoints"][name]
        projected.append(
            metrics.project_to_3d(int(col), int(row), depth, manifest.intrinsics, median_fallback=True)
        )
    return metrics.tpc(projected, list(record.contact_regions))


def eval_command(predictions_path, manifest_path, out_dir=None, sigma: float = 10.0) -> dict:
    manifest = load_manifest(manifest_path)
    try:
        payload = json.loads(Path(predictions_path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataIOError(f"cannot read predictions {predictions_path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise InvalidArgumentError(f"predictions {predictions_path} not valid JSON: {exc}") from exc
    results = payload.get("results", [])
    pred_ids = [r["id"] for r in results]
    manifest_ids = [s.sample_id for s in manifest.samples]
    if pred_ids != manifest_ids:
        raise AlignmentError(
            f"prediction ids do not match manifest ids: {pred_ids[:3]}... vs {manifest_ids[:3]}..."
        )
    by_id = {s.sample_id: s for s in manifest.samples}
    rows = []
    for result in results:
        record = by_id[result["id"]]
        if result["status"] != "ok":
            rows.append({"id": result["id"], "status": result["status"], "category": result.get("category")})
            continue
        if record.gt_keypoints is None:
            rows.append({"id": result["id"], "status": "no_ground_truth"})
            continue
        row = _metrics_for_prediction(record, result, manifest, sigma)
        tpc_value = _tpc_for_prediction(record, result, manifest, manifest_path)
        if tpc_value is not None:
            row["tpc"] = tpc_value
        row["status"] = "ok"
        rows.append(row)
    scored = [r for r in rows if r["status"] == "ok"]
    aggregate = {}
    if scored:
        aggregate = {
            "kld": float(np.mean([r["kld"] for r in scored])),
            "sim": float(np.mean([r["sim"] for r in scored])),
            "nss": float(np.mean([r["nss"] for r in scored])),
            "images": len(scored),
        }
        tpcs = [r["tpc"] for r in scored if "tpc" in r]
        if tpcs:
            aggregate["tpc"] = float(np.mean(tpcs))
            aggregate["tpc_percent"] = metrics.format_tpc_percent(aggregate["tpc"])
    report = {"per_image": rows, "aggregate": aggregate, "sigma": sigma}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval_report.json").write_text(dumps_canonical(report), encoding="utf-8")
        (out / "eval_report.txt").write_text(_eval_report_text(report), encoding="utf-8")
    return report


def _eval_report_text(report: dict) -> str:
    lines = [f"{'id':<16} {'status':<16} {'KLD':>10} {'SIM':>8} {'NSS':>8} {'TPC':>6}"]
    for row in report["per_image"]:
        if row["status"] != "ok":
            lines.append(f"{row['id']:<16} {row['status']:<16}")
            continue
        tpc_text = metrics.format_tpc_percent(row["tpc"]) if "tpc" in row else "-"
        lines.append(
            f"{row['id']:<16} {'ok':<16} {row['kld']:>10.4f} {row['sim']:>8.4f} {row['nss']:>8.4f} {tpc_text:>6}"
        )
    agg = report["aggregate"]
    if agg:
        tpc_text = agg.get("tpc_percent", "-")
        lines.append(
            f"{'MEAN':<16} {'(' + str(agg['images']) + ' images)':<16} "
            f"{agg['kld']:>10.4f} {agg['sim']:>8.4f} {agg['nss']:>8.4f} {tpc_text:>6}"
        )
    return "\n".join(lines) + "\n"


def evaluate_checkpoint(manifest_path, manifest: Manifest, params: cmka.TrainedParams, config: RunConfig, sigma: float) -> dict:
    """Own-label batch inference plus metrics; the sweep's per-cell evaluator."""
    rows = []
    for record in manifest.samples:
        try:
            sample = load_sample(manifest_path, manifest, record, config.regions)
            result = _predict_one(sample, params, sample.label, config.seed, manifest.image_size)
        except KeygraspError as exc:
            rows.append(_error_record(record.sample_id, exc))
            continue
        if record.gt_keypoints is None:
            rows.append({"id": record.sample_id, "status": "no_ground_truth"})
            continue
        row = _metrics_for_prediction(record, result, manifest, sigma)
        tpc_value = _tpc_for_prediction(record, result, manifest, manifest_path)
        if tpc_value is not None:
            row["tpc"] = tpc_value
        row["status"] = "ok"
        rows.append(row)
    scored = [r for r in rows if r["status"] == "ok"]
    if not scored:
        raise InvalidArgumentError("no scorable images (missing ground truth?)")
    aggregate = {
        "kld": float(np.mean([r["kld"] for r in scored])),
        "sim": float(np.mean([r["sim"] for r in scored])),
        "nss": float(np.mean([r["nss"] for r in scored])),
        "images": len(scored),
    }
    tpcs = [r["tpc"] for r in scored if "tpc" in r]
    if tpcs:
        aggregate["tpc"] = float(np.mean(tpcs))
    return {"per_image": rows, "aggregate": aggregate}


def sweep_command(manifest_path, s_values, j_values, config: RunConfig, out_dir=None) -> dict:
    """Train and evaluate every (S, J) cell; lowest mean KLD marks the best cell."""
    if not s_values or not j_values:
        raise InvalidArgumentError("sweep needs non-empty S and J value lists")
    manifest = load_manifest(manifest_path)
    cells = []
    for s in s_values:
        for j in j_values:
            cell_config = replace(config, regions=int(s), clusters=int(j))
            cell = {"s": int(s), "j": int(j)}
            try:
                spec, dataset, _ = prepare_training(manifest_path, manifest, cell_config)
                result = cmka.train(dataset, cell_config.train_config(), spec)
                evaluation = evaluate_checkpoint(manifest_path, manifest, result.params, cell_config, config.sigma)
                cell.update(status="ok", **{k: v for k, v in evaluation["aggregate"].items()})
            except KeygraspError as exc:
                cell.update(status="error", category=type(exc).__name__, message=str(exc))
            cells.append(cell)
    scored = [c for c in cells if c["status"] == "ok"]
    best = None
    if scored:
        best_cell = min(scored, key=lambda c: c["kld"])
        best = {"s": best_cell["s"], "j": best_cell["j"], "by": "kld"}
    report = {"cells": cells, "best": best}
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep_report.json").write_text(dumps_canonical(report), encoding="utf-8")
        (out / "sweep_report.txt").write_text(_sweep_report_text(report), encoding="utf-8")
    return report


def _sweep_report_text(report: dict) -> str:
    lines = [f"{'S':>3} {'J':>3} {'KLD':>10} {'SIM':>8} {'NSS':>8}  best"]
    best = report["best"]
    for cell in report["cells"]:
        if cell["status"] != "ok":
            lines.append(f"{cell['s']:>3} {cell['j']:>3}  error: {cell.get('category')}")
            continue
        star = "*" if best and (cell["s"], cell["j"]) == (best["s"], best["j"]) else ""
        lines.append(
            f"{cell['s']:>3} {cell['j']:>3} {cell['kld']:>10.4f} {cell['sim']:>8.4f} {cell['nss']:>8.4f}  {star}"
        )
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class SimulationReport:
    trials: int
    retries: int
    max_contact_error_m: float
    max_rotation_orthonormality_error: float
    max_det_deviation: float
    elapsed_s: float

    def to_json(self) -> dict:
        return asdict(self)


def _default_keypoint_sampler(rng: np.random.Generator) -> np.ndarray:
    return rng.uniform(-0.3, 0.3, (3, 3))


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def simulate_kgt(
    trials: int,
    seed: int,
    hand: kgt.HandModel,
    max_retries_per_trial: int = 100,
    keypoint_sampler=None,
) -> SimulationReport:
    """Randomized desk-scale round-trip check of the grasp pose solver.

    Each trial draws an object keypoint triple and a random initial hand pose,
    solves for the relative pose, applies the implied corrective motion, and
    measures how far each hand keypoint lands from its contact target.
    Degenerate (collinear) draws are re-sampled and counted.
    """
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    sampler = keypoint_sampler or _default_keypoint_sampler
    w0, f0, l0 = kgt.canonical_hand_points(hand)
    retries = 0
    max_contact = 0.0
    max_orth = 0.0
    max_det = 0.0
    started = time.perf_counter()
    for _ in range(trials):
        rotation = _random_rotation(rng)
        shift = rng.uniform(-0.5, 0.5, 3)
        hand_pts = (rotation @ w0 + shift, rotation @ f0 + shift, rotation @ l0 + shift)
        for attempt in range(max_retries_per_trial + 1):
            kps = sampler(rng)
            try:
                pose = kgt.grasp_pose_for_execution(kps, hand, hand_pts)
                contacts = kgt.adjust_keypoints(kps[0], kps[1], kps[2], hand)
                break
            except kgt.DegenerateGeometryError:
                retries += 1
                if attempt == max_retries_per_trial:
                    raise
        r = pose.rotation
        max_orth = max(max_orth, float(np.linalg.norm(r.T @ r - np.eye(3))))
        max_det = max(max_det, abs(float(np.linalg.det(r)) - 1.0))
        obj_frame = kgt.build_frame(contacts.wrist, contacts.functional, contacts.little)
        mover = kgt.alignment_map(pose, obj_frame)
        for point, target in (
            (hand_pts[0], contacts.wrist),
            (hand_pts[1], contacts.functional),
            (hand_pts[2], contacts.little),
        ):
            max_contact = max(max_contact, float(np.linalg.norm(mover(point) - target)))
    return SimulationReport(
        trials=trials,
        retries=retries,
        max_contact_error_m=max_contact,
        max_rotation_orthonormality_error=max_orth,
        max_det_deviation=max_det,
        elapsed_s=time.perf_counter() - started,
    )


def simulate_command(trials: int, seed: int, hand: kgt.HandModel, out_dir=None) -> SimulationReport:
    report = simulate_kgt(trials, seed, hand)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "kgt_simulation.json").write_text(dumps_canonical(report.to_json()), encoding="utf-8")
        text = (
            f"trials:                {report.trials}\n"
            f"degenerate redraws:    {report.retries}\n"
            f"max contact error [m]: {report.max_contact_error_m:.3e}\n"
            f"max |R^T R - I|_F:     {report.max_rotation_orthonormality_error:.3e}\n"
            f"max |det R - 1|:       {report.max_det_deviation:.3e}\n"
            f"elapsed [s]:           {report.elapsed_s:.2f}\n"
        )
        (out / "kgt_simulation.txt").write_text(text, encoding="utf-8")
    return report


def synth_command(out_dir, seed: int, spec: fixtures.FixtureSpec | None = None) -> Path:
    dataset = fixtures.build_fixture(spec or fixtures.FixtureSpec(), seed)
    return fixtures.write_fixture_dataset(dataset, out_dir)
