import json

import pytest

from avatarprior.cli import main
from avatarprior.data import SyntheticSceneSpec

TINY_SPEC_JSON = SyntheticSceneSpec(
    resolution=16, n_blobs=3, m=2, train_n_samples=8, gt_oversampling=4, seed=41
).to_json()

FAST_TRAIN = [
    "--set", "total_iters=8", "--set", "freeze_iters=2", "--set", "eval_every=4",
    "--set", "latent_dim=16", "--set", "plane_channels=4", "--set", "plane_resolution=8",
    "--set", "base_resolution=4", "--set", "hidden_dim=16", "--set", "decoder_hidden=8",
    "--set", "n_samples=6", "--set", "raw_size=8",
]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli_ds")
    spec_path = root / "spec.json"
    spec_path.write_text(TINY_SPEC_JSON)
    out = root / "data"
    assert main(["synth-data", "--out", str(out), "--n-frames", "12",
                 "--spec", str(spec_path)]) == 0
    return out


@pytest.fixture(scope="module")
def checkpoint(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_train")
    code = main(["train", "--dataset", str(dataset), "--out", str(out),
                 "--modality", "image", "--k", "3", "--quiet", *FAST_TRAIN])
    assert code == 0
    return out / "checkpoint.pt"


class TestSynthData:
    def test_writes_frames_cameras_factors(self, dataset):
        assert len(list((dataset / "frames").glob("*.png"))) == 12
        assert (dataset / "cameras.jsonl").exists()
        assert (dataset / "factors.jsonl").exists()
        assert (dataset / "provenance.json").exists()

    def test_rerun_is_byte_identical(self, dataset, tmp_path):
        spec_path = tmp_path / "spec.json"
        spec_path.write_text(TINY_SPEC_JSON)
        again = tmp_path / "again"
        assert main(["synth-data", "--out", str(again), "--n-frames", "12",
                     "--spec", str(spec_path)]) == 0
        for path in sorted(dataset.rglob("*")):
            if path.is_file():
                twin = again / path.relative_to(dataset)
                assert twin.read_bytes() == path.read_bytes(), path.name

    def test_zero_frames_is_usage_error(self, tmp_path):
        assert main(["synth-data", "--out", str(tmp_path / "x"), "--n-frames", "0"]) != 0


class TestTrain:
    def test_outputs_present(self, checkpoint):
        out = checkpoint.parent
        for name in ("checkpoint.pt", "config.json", "loss_log.jsonl",
                     "metrics.jsonl", "eval_summary.json", "eval_frames.jsonl",
                     "provenance.json"):
            assert (out / name).exists(), name

    def test_k_recorded_verbatim_in_checkpoint(self, checkpoint):
        from avatarprior.training import load_checkpoint
        state = load_checkpoint(checkpoint)
        assert state.config.k == 3
        config = json.loads((checkpoint.parent / "config.json").read_text())
        assert config["k"] == 3

    def test_missing_modality_fails_before_training(self, dataset, tmp_path):
        import shutil
        stripped = tmp_path / "noexpr"
        shutil.copytree(dataset, stripped)
        (stripped / "expression.jsonl").unlink()
        manifest = json.loads((stripped / "manifest.json").read_text())
        manifest["modalities"] = ["image", "audio"]
        (stripped / "manifest.json").write_text(json.dumps(manifest))
        code = main(["train", "--dataset", str(stripped), "--out", str(tmp_path / "out"),
                     "--modality", "expr", "--quiet", *FAST_TRAIN])
        assert code != 0
        assert not (tmp_path / "out" / "checkpoint.pt").exists()

    def test_unknown_config_key_rejected(self, dataset, tmp_path):
        code = main(["train", "--dataset", str(dataset), "--out", str(tmp_path / "bad"),
                     "--set", "flux_capacitance=1"])
        assert code != 0


class TestRender:
    def test_orbit_count_and_determinism(self, dataset, checkpoint, tmp_path):
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        for out in (out_a, out_b):
            code = main(["render", "--checkpoint", str(checkpoint),
                         "--dataset", str(dataset), "--out", str(out),
                         "--frame-id", "2", "--orbit", "3", "--depth"])
            assert code == 0
        pngs = sorted(out_a.glob("frame000002_view*.png"))
        names = [p.name for p in pngs]
        assert len([n for n in names if "depth" not in n]) == 4
        for p in pngs:
            assert (out_b / p.name).read_bytes() == p.read_bytes()

    def test_bad_frame_id_lists_range(self, dataset, checkpoint, tmp_path, capsys):
        code = main(["render", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
                     "--out", str(tmp_path / "x"), "--frame-id", "99"])
        assert code != 0
        assert "0..11" in capsys.readouterr().err

    def test_orbit_view_zero_equals_reconstruction(self, dataset, checkpoint, tmp_path):
        render_out = tmp_path / "render"
        recon_out = tmp_path / "recon"
        assert main(["render", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
                     "--out", str(render_out), "--frame-id", "1", "--orbit", "2"]) == 0
        assert main(["reconstruct", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
                     "--out", str(recon_out), "--frame-id", "1"]) == 0
        a = (render_out / "frame000001_view000.png").read_bytes()
        b = (recon_out / "frame000001_recon.png").read_bytes()
        assert a == b


class TestReenact:
    def test_novel_pose_reenactment(self, dataset, checkpoint, tmp_path):
        out = tmp_path / "re"
        code = main(["reenact", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
                     "--out", str(out), "--frame-id", "3", "--pose-frame", "7",
                     "--modality", "image"])
        assert code == 0
        assert (out / "frame000003_recon.png").exists()

    def test_modality_mismatch_rejected(self, dataset, checkpoint, tmp_path):
        code = main(["reenact", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
                     "--out", str(tmp_path / "x"), "--frame-id", "3", "--modality", "expr"])
        assert code != 0


class TestEvaluate:
    def test_writes_reports_and_csv(self, dataset, checkpoint, tmp_path):
        out = tmp_path / "ev"
        code = main(["evaluate", "--checkpoint", str(checkpoint), "--dataset", str(dataset),
                     "--out", str(out), "--split", "holdout", "--csv"])
        assert code == 0
        summary = json.loads((out / "eval_summary.json").read_text())
        assert {"psnr", "ssim", "perceptual", "gram_offdiag_max"} <= set(summary)
        assert (out / "eval_frames.csv").exists()


class TestAblate:
    def test_grid_rows_and_failed_cell_handling(self, dataset, tmp_path):
        out = tmp_path / "ab"
        code = main(["ablate", "--dataset", str(dataset), "--out", str(out),
                     "--k", "2,0", "--ortho", "on", *FAST_TRAIN])
        assert code != 0  # the k=0 cell fails
        rows = [json.loads(l) for l in (out / "ablation.jsonl").read_text().strip().split("\n")]
        assert len(rows) == 2
        ok = {r["k"]: r["status"] for r in rows}
        assert ok[2] == "ok"
        assert ok[0].startswith("failed")

    def test_all_good_grid_exits_zero(self, dataset, tmp_path):
        out = tmp_path / "ab2"
        code = main(["ablate", "--dataset", str(dataset), "--out", str(out),
                     "--k", "2,3", "--ortho", "on", *FAST_TRAIN])
        assert code == 0
        rows = [json.loads(l) for l in (out / "ablation.jsonl").read_text().strip().split("\n")]
        assert [r["k"] for r in rows] == [2, 3]
        assert all(r["status"] == "ok" for r in rows)

    def test_bad_ortho_flag_rejected(self, dataset, tmp_path):
        assert main(["ablate", "--dataset", str(dataset), "--out", str(tmp_path / "x"),
                     "--k", "2", "--ortho", "maybe"]) != 0
