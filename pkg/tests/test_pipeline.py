import json
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from keygrasp import cli, fixtures, formats, kgt, metrics, pipeline
from keygrasp.errors import (
    AlignmentError,
    InvalidArgumentError,
    VocabularyError,
)
from keygrasp.manifest import load_manifest


class TestTrainCommand:
    def test_checkpoint_written_and_loss_drops(self, trained_run):
        assert trained_run["checkpoint"].exists()
        result = trained_run["result"]
        assert result.history[-1].total < result.initial_loss.total
        assert (trained_run["out"] / "loss_history.json").exists()
        assert (trained_run["out"] / "loss_history.txt").exists()

    def test_zero_epochs_rejected(self):
        with pytest.raises(InvalidArgumentError):
            pipeline.RunConfig(epochs=0)

    def test_seeded_runs_byte_identical(self, fixture_dir, tmp_path):
        config = pipeline.RunConfig(epochs=2)
        a = pipeline.train_command(fixture_dir, config, tmp_path / "a")
        b = pipeline.train_command(fixture_dir, config, tmp_path / "b")
        assert a.checkpoint_path.read_bytes() == b.checkpoint_path.read_bytes()
        assert (tmp_path / "a/loss_history.json").read_text() == (tmp_path / "b/loss_history.json").read_text()

    def test_loss_history_shape(self, trained_run):
        payload = json.loads((trained_run["out"] / "loss_history.json").read_text())
        assert len(payload["epochs"]) == 15
        assert {"total", "classification", "cosine"} <= set(payload["initial"])


class TestInferCommand:
    def test_planted_keypoints_recovered(self, trained_run, fixture_dataset, tmp_path):
        out = tmp_path / "pred.json"
        payload = pipeline.infer_command(
            trained_run["manifest"], trained_run["checkpoint"], "press", out
        )
        assert out.exists()
        assert [r["id"] for r in payload["results"]] == [s.sample_id for s in fixture_dataset.samples]
        for record, sample in zip(payload["results"], fixture_dataset.samples):
            assert record["status"] == "ok"
            got = sorted(tuple(v) for v in record["keypoints"].values())
            assert got == sorted(sample.gt_keypoints)

    def test_repeated_inference_byte_identical(self, trained_run, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        pipeline.infer_command(trained_run["manifest"], trained_run["checkpoint"], "hold", a)
        pipeline.infer_command(trained_run["manifest"], trained_run["checkpoint"], "hold", b)
        assert a.read_bytes() == b.read_bytes()

    def test_unknown_affordance_rejected(self, trained_run, tmp_path):
        with pytest.raises(VocabularyError):
            pipeline.infer_command(
                trained_run["manifest"], trained_run["checkpoint"], "juggle", tmp_path / "p.json"
            )

    def test_bad_sample_isolated_without_aborting(self, trained_run, tmp_path):
        manifest_path = trained_run["manifest"]
        obj = json.loads(Path(manifest_path).read_text())
        obj["samples"][2]["masks"] = obj["samples"][2]["masks"][:2]  # fewer masks than regions
        broken = tmp_path / "manifest.json"
        broken.write_text(json.dumps(obj))
        # file references are relative to the manifest location
        import shutil

        for sub in ("bundles", "masks", "depth"):
            shutil.copytree(Path(manifest_path).parent / sub, tmp_path / sub)
        payload = pipeline.infer_command(broken, trained_run["checkpoint"], "press", tmp_path / "p.json")
        statuses = [r["status"] for r in payload["results"]]
        assert statuses.count("error") == 1
        assert statuses.count("ok") == len(statuses) - 1
        assert payload["results"][2]["status"] == "error"


class TestEvalCommand:
    def test_exact_predictions_score_perfectly(self, trained_run, tmp_path):
        pred_path = tmp_path / "pred.json"
        pipeline.infer_command(trained_run["manifest"], trained_run["checkpoint"], "press", pred_path)
        report = pipeline.eval_command(pred_path, trained_run["manifest"], tmp_path, sigma=10.0)
        agg = report["aggregate"]
        assert agg["kld"] < 1e-9
        assert agg["sim"] > 1 - 1e-9
        assert agg["tpc_percent"] == "100"
        assert (tmp_path / "eval_report.txt").exists()

    def test_aggregate_is_hand_computed_mean(self, trained_run, fixture_dataset, tmp_path):
        pred_path = tmp_path / "pred.json"
        pipeline.infer_command(trained_run["manifest"], trained_run["checkpoint"], "press", pred_path)
        payload = json.loads(pred_path.read_text())
        payload["results"] = payload["results"][:2]
        obj = json.loads(Path(trained_run["manifest"]).read_text())
        obj["samples"] = obj["samples"][:2]
        import shutil

        for sub in ("bundles", "masks", "depth"):
            shutil.copytree(Path(trained_run["manifest"]).parent / sub, tmp_path / sub)
        two_manifest = tmp_path / "manifest.json"
        two_manifest.write_text(json.dumps(obj))
        two_pred = tmp_path / "two_pred.json"
        two_pred.write_text(json.dumps(payload))
        report = pipeline.eval_command(two_pred, two_manifest, None, sigma=10.0)
        # independent hand computation, image by image
        manifest = load_manifest(two_manifest)
        expected = []
        for rec, res in zip(manifest.samples, payload["results"]):
            pred_kps = [tuple(res["keypoints"][n]) for n in ("functional", "little", "wrist")]
            pm = metrics.gaussian_gt_heatmap(pred_kps, 10.0, (448, 448))
            gm = metrics.gaussian_gt_heatmap(list(rec.gt_keypoints), 10.0, (448, 448))
            expected.append(metrics.kld(pm, gm))
        assert report["aggregate"]["kld"] == pytest.approx(np.mean(expected), abs=1e-12)
        assert report["aggregate"]["images"] == 2

    def test_id_mismatch_rejected(self, trained_run, tmp_path):
        pred_path = tmp_path / "pred.json"
        pipeline.infer_command(trained_run["manifest"], trained_run["checkpoint"], "press", pred_path)
        payload = json.loads(pred_path.read_text())
        payload["results"][0]["id"] = "img_999"
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps(payload))
        with pytest.raises(AlignmentError):
            pipeline.eval_command(bad, trained_run["manifest"], None)


class TestSweep:
    def test_grid_of_one_matches_direct_run(self, fixture_dir):
        config = pipeline.RunConfig(epochs=3)
        report = pipeline.sweep_command(fixture_dir, [3], [4], config, None)
        cell = report["cells"][0]
        assert cell["status"] == "ok"
        manifest = load_manifest(fixture_dir)
        spec, dataset, _ = pipeline.prepare_training(fixture_dir, manifest, config)
        from keygrasp import cmka

        result = cmka.train(dataset, config.train_config(), spec)
        direct = pipeline.evaluate_checkpoint(fixture_dir, manifest, result.params, config, config.sigma)
        assert cell["kld"] == pytest.approx(direct["aggregate"]["kld"], abs=1e-12)
        assert cell["sim"] == pytest.approx(direct["aggregate"]["sim"], abs=1e-12)
        assert report["best"] == {"s": 3, "j": 4, "by": "kld"}

    def test_empty_value_lists_rejected(self, fixture_dir):
        with pytest.raises(InvalidArgumentError):
            pipeline.sweep_command(fixture_dir, [], [4], pipeline.RunConfig(), None)

    def test_failing_cell_recorded_without_aborting_grid(self, fixture_dir):
        # S=9 exceeds the fixture's four masks per image; that cell errors, the rest run
        config = pipeline.RunConfig(epochs=1)
        report = pipeline.sweep_command(fixture_dir, [9, 3], [4], config, None)
        statuses = {(c["s"], c["j"]): c["status"] for c in report["cells"]}
        assert statuses[(9, 4)] == "error"
        assert statuses[(3, 4)] == "ok"
        assert report["best"] == {"s": 3, "j": 4, "by": "kld"}


class TestSimulate:
    def test_single_trial_identity_pose_zero_error(self):
        hand = pipeline.DEFAULT_HAND_MODEL

        def sampler(rng):
            w, f, l = kgt.canonical_hand_points(hand)
            return np.stack([w, f, l])

        report = pipeline.simulate_kgt(1, seed=0, hand=hand, keypoint_sampler=sampler)
        assert report.max_contact_error_m < 1e-9
        assert report.retries == 0

    def test_forced_collinear_sample_counts_retry(self):
        hand = pipeline.DEFAULT_HAND_MODEL
        state = {"calls": 0}

        def sampler(rng):
            state["calls"] += 1
            if state["calls"] == 1:
                return np.array([[0.0, 0, 0], [0.1, 0, 0], [0.2, 0, 0]])
            return np.array([[0.0, 0, 0], [0.2, 0, 0], [0.0, 0.2, 0]])

        report = pipeline.simulate_kgt(1, seed=0, hand=hand, keypoint_sampler=sampler)
        assert report.retries == 1
        assert report.max_contact_error_m < 1e-9

    def test_report_files_written(self, tmp_path):
        pipeline.simulate_command(5, 3, pipeline.DEFAULT_HAND_MODEL, tmp_path)
        assert (tmp_path / "kgt_simulation.json").exists()
        payload = json.loads((tmp_path / "kgt_simulation.json").read_text())
        assert payload["trials"] == 5


class TestSynth:
    def test_default_fixture_loads_and_validates(self, fixture_dir):
        manifest = load_manifest(fixture_dir)
        assert len(manifest.classes) == 6
        assert len(manifest.samples) == 6
        for sample in manifest.samples:
            assert len(sample.masks) == 4
            assert sample.gt_keypoints is not None and len(sample.gt_keypoints) == 3

    def test_two_seeds_differ_same_schema(self, tmp_path):
        p1 = pipeline.synth_command(tmp_path / "a", seed=1)
        p2 = pipeline.synth_command(tmp_path / "b", seed=2)
        m1 = json.loads(p1.read_text())
        m2 = json.loads(p2.read_text())
        assert set(m1) == set(m2)
        b1 = (tmp_path / "a" / m1["samples"][0]["ego_bundle"]).read_bytes()
        b2 = (tmp_path / "b" / m2["samples"][0]["ego_bundle"]).read_bytes()
        assert b1 != b2

    def test_resynthesis_deterministic(self, tmp_path, fixture_dir):
        again = pipeline.synth_command(tmp_path / "again", seed=0)
        assert again.read_bytes() == Path(fixture_dir).read_bytes()
        sample = json.loads(again.read_text())["samples"][0]
        a = (Path(fixture_dir).parent / sample["ego_bundle"]).read_bytes()
        b = (tmp_path / "again" / sample["ego_bundle"]).read_bytes()
        assert a == b


class TestCli:
    def test_cli_round_trip(self, tmp_path):
        assert cli.main(["synth-fixtures", "--out", str(tmp_path / "fix"), "--seed", "0"]) == 0
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"epochs": 2}))
        assert (
            cli.main(
                [
                    "train",
                    "--manifest",
                    str(tmp_path / "fix/manifest.json"),
                    "--config",
                    str(config),
                    "--out",
                    str(tmp_path / "run"),
                ]
            )
            == 0
        )
        assert (
            cli.main(
                [
                    "infer",
                    "--manifest",
                    str(tmp_path / "fix/manifest.json"),
                    "--checkpoint",
                    str(tmp_path / "run/checkpoint.cmka"),
                    "--affordance",
                    "press",
                    "--out",
                    str(tmp_path / "run/pred.json"),
                ]
            )
            == 0
        )
        assert (
            cli.main(
                [
                    "eval",
                    "--manifest",
                    str(tmp_path / "fix/manifest.json"),
                    "--predictions",
                    str(tmp_path / "run/pred.json"),
                    "--out",
                    str(tmp_path / "run"),
                ]
            )
            == 0
        )

    def test_vocabulary_error_exit_code(self, tmp_path):
        cli.main(["synth-fixtures", "--out", str(tmp_path / "fix"), "--seed", "0"])
        config = tmp_path / "config.json"
        config.write_text(json.dumps({"epochs": 1}))
        cli.main(
            [
                "train",
                "--manifest",
                str(tmp_path / "fix/manifest.json"),
                "--config",
                str(config),
                "--out",
                str(tmp_path / "run"),
            ]
        )
        code = cli.main(
            [
                "infer",
                "--manifest",
                str(tmp_path / "fix/manifest.json"),
                "--checkpoint",
                str(tmp_path / "run/checkpoint.cmka"),
                "--affordance",
                "juggle",
                "--out",
                str(tmp_path / "run/pred.json"),
            ]
        )
        assert code == VocabularyError.code

    def test_missing_manifest_exit_code(self, tmp_path):
        code = cli.main(
            ["train", "--manifest", str(tmp_path / "nope.json"), "--out", str(tmp_path / "run")]
        )
        assert code != 0

    def test_simulate_cli(self, tmp_path):
        code = cli.main(
            ["simulate-kgt", "--trials", "3", "--seed", "1", "--out", str(tmp_path / "sim")]
        )
        assert code == 0
        assert (tmp_path / "sim/kgt_simulation.json").exists()
