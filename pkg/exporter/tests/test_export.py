import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from bundle_exporter import (
    ExportJob,
    PatchStatsBackbone,
    PromptFloodSegmenter,
    TorchScriptBackbone,
    export_features,
    export_masks,
    load_image,
    run_job,
)
from bundle_exporter.errors import InvalidJobError, ModelLoadError

# the consumer side: the pipeline package reads what this exporter writes
from keygrasp import formats as pipeline_formats
from keygrasp import lmsc
from keygrasp.numerics import DenseMap


@pytest.fixture(scope="module")
def real_image(tmp_path_factory):
    """A real PNG on disk: colored panels on a textured background."""
    rng = np.random.default_rng(99)
    img = np.full((448, 448, 3), 40, dtype=np.uint8)
    img += rng.integers(0, 12, size=img.shape, dtype=np.uint8)
    img[40:180, 40:180] = (200, 60, 60)
    img[40:180, 260:420] = (60, 200, 80)
    img[260:420, 40:200] = (70, 90, 210)
    img[300:380, 300:380] = (230, 220, 90)
    path = tmp_path_factory.mktemp("images") / "scene.png"
    Image.fromarray(img).save(path)
    return path


PROMPTS = ((100, 100), (100, 340), (340, 120), (340, 340))


class TestFeatureExport:
    def test_bundle_has_three_equal_shape_layers(self, real_image, tmp_path):
        job = ExportJob(images=(str(real_image),), out_dir=str(tmp_path), prompts=PROMPTS)
        results = export_features(job)
        assert results[0].status == "ok"
        layers = pipeline_formats.read_bundle(tmp_path / results[0].bundle)
        assert len(layers) == 3
        assert len({layer.shape[:2] for layer in layers}) == 1
        assert layers[0].shape[:2] == (32, 32)

    def test_reexport_byte_identical(self, real_image, tmp_path):
        job_a = ExportJob(images=(str(real_image),), out_dir=str(tmp_path / "a"), prompts=PROMPTS)
        job_b = ExportJob(images=(str(real_image),), out_dir=str(tmp_path / "b"), prompts=PROMPTS)
        ra = export_features(job_a)[0]
        rb = export_features(job_b)[0]
        assert (tmp_path / "a" / ra.bundle).read_bytes() == (tmp_path / "b" / rb.bundle).read_bytes()

    def test_values_round_trip_bit_exact_through_pipeline_loader(self, real_image, tmp_path):
        job = ExportJob(images=(str(real_image),), out_dir=str(tmp_path), prompts=PROMPTS)
        backbone = PatchStatsBackbone()
        result = export_features(job, backbone)[0]
        expected = backbone.extract(load_image(real_image, 448), job.layer_indices)
        loaded = pipeline_formats.read_bundle(tmp_path / result.bundle)
        for want, got in zip(expected, loaded):
            assert np.array_equal(want.astype(np.float32), got)

    def test_unreadable_image_isolated(self, real_image, tmp_path):
        bogus = tmp_path / "not_an_image.png"
        bogus.write_bytes(b"junk")
        job = ExportJob(images=(str(bogus), str(real_image)), out_dir=str(tmp_path), prompts=PROMPTS)
        results = export_features(job)
        assert [r.status for r in results] == ["error", "ok"]
        assert results[0].category == "UnreadableImageError"

    def test_duplicate_layer_indices_rejected(self, real_image, tmp_path):
        with pytest.raises(InvalidJobError):
            ExportJob(images=(str(real_image),), out_dir=str(tmp_path), layer_indices=(-1, -1, -2))


class TestMaskExport:
    def test_masks_cover_prompts_and_validate(self, real_image, tmp_path):
        job = ExportJob(images=(str(real_image),), out_dir=str(tmp_path), prompts=PROMPTS)
        result = export_masks(job)[0]
        assert result.status == "ok"
        assert len(result.masks) == 4
        for rel, (row, col) in zip(result.masks, PROMPTS):
            bitmap = pipeline_formats.read_mask(tmp_path / rel)
            assert bitmap.shape == (448, 448)
            assert bitmap[row, col]

    def test_truncation_keeps_largest_by_area(self, real_image, tmp_path):
        job = ExportJob(
            images=(str(real_image),), out_dir=str(tmp_path), prompts=PROMPTS, max_regions=2
        )
        result = export_masks(job)[0]
        assert len(result.masks) == 2
        assert result.truncated_masks == 2
        job_full = ExportJob(
            images=(str(real_image),), out_dir=str(tmp_path / "full"), prompts=PROMPTS
        )
        full = export_masks(job_full)[0]
        areas = [
            int(pipeline_formats.read_mask(tmp_path / "full" / rel).sum()) for rel in full.masks
        ]
        kept = [int(pipeline_formats.read_mask(tmp_path / rel).sum()) for rel in result.masks]
        assert sorted(kept, reverse=True) == sorted(areas, reverse=True)[:2]

    def test_empty_prompt_list_records_warning(self, real_image, tmp_path):
        job = ExportJob(images=(str(real_image),), out_dir=str(tmp_path), prompts=())
        result = export_masks(job)[0]
        assert result.status == "ok"
        assert result.masks == []
        assert any("empty segmentation" in w for w in result.warnings)


class TestJobManifest:
    def test_fragment_references_resolve_and_pin_weights(self, real_image, tmp_path):
        job = ExportJob(
            images=(str(real_image),), out_dir=str(tmp_path), prompts=PROMPTS, max_regions=3
        )
        fragment = run_job(job)
        assert fragment["backbone"]["weights_sha256"] == PatchStatsBackbone().weights_sha256()
        entry = fragment["images"][0]
        assert entry["status"] == "ok"
        assert (tmp_path / entry["bundle"]).exists()
        for rel in entry["masks"]:
            assert (tmp_path / rel).exists()
        assert entry["scale_factor"] == 14.0
        on_disk = json.loads((tmp_path / "export_manifest.json").read_text())
        assert on_disk == fragment

    def test_exported_files_feed_the_pipeline_candidate_stage(self, real_image, tmp_path):
        job = ExportJob(
            images=(str(real_image),), out_dir=str(tmp_path), prompts=PROMPTS, max_regions=3
        )
        fragment = run_job(job)
        entry = fragment["images"][0]
        layers = [
            DenseMap(layer.astype(np.float64))
            for layer in pipeline_formats.read_bundle(tmp_path / entry["bundle"])
        ]
        grid = layers[0].data.shape[:2]
        masks = []
        for rid, rel in enumerate(entry["masks"]):
            big = pipeline_formats.read_mask(tmp_path / rel)
            rows = np.clip(np.rint((np.arange(grid[0]) + 0.5) * big.shape[0] / grid[0] - 0.5), 0, big.shape[0] - 1)
            cols = np.clip(np.rint((np.arange(grid[1]) + 0.5) * big.shape[1] / grid[1] - 0.5), 0, big.shape[1] - 1)
            small = big[rows.astype(int)[:, None], cols.astype(int)[None, :]]
            masks.append(lmsc.RegionMask(bitmap=small, region_id=rid))
        stacked = np.concatenate([layer.data for layer in layers], axis=2).mean(axis=2, keepdims=True)
        fused = DenseMap(np.repeat(stacked, 3, axis=2))
        reduced = lmsc.reduce_features(lmsc.multiscale(fused), 3)
        candidates = lmsc.extract_candidates(reduced.features, masks, clusters_per_region=2, seed=0)
        assert len(candidates.candidates) == 6  # 3 regions x 2 clusters


class TestTorchScriptSeam:
    def test_missing_weights_raise_model_load_error(self, tmp_path):
        with pytest.raises(ModelLoadError):
            TorchScriptBackbone(tmp_path / "absent.pt")

    def test_scripted_module_round_trips(self, real_image, tmp_path):
        torch = pytest.importorskip("torch")

        class ToyBackbone(torch.nn.Module):
            def forward(self, x):
                pooled = torch.nn.functional.avg_pool2d(x, 14)
                return pooled, pooled * 2.0, pooled * 3.0

        weights = tmp_path / "toy.pt"
        torch.jit.script(ToyBackbone()).save(str(weights))
        backbone = TorchScriptBackbone(weights)
        job = ExportJob(images=(str(real_image),), out_dir=str(tmp_path), prompts=PROMPTS)
        result = export_features(job, backbone)[0]
        assert result.status == "ok"
        layers = pipeline_formats.read_bundle(tmp_path / result.bundle)
        assert len(layers) == 3
        assert np.allclose(layers[1], 2.0 * layers[0], atol=1e-6)
