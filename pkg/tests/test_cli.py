"""End-to-end command-line checks at micro scale (tiny models, few steps)."""

import numpy as np
import pytest

from oya.checkpoint import load_checkpoint
from oya.cli import main
from oya.store import read_field, read_patch_store, write_field, write_grid_spec, write_scene, write_swath_csv
from oya.grid import GridSpec
from oya.synthetic import SynthConfig, generate_pair

from conftest import small_grid

SYNTH_ARGS = [
    "--pairs", "6", "--val-pairs", "3", "--patch", "16", "--channels", "3",
    "--swath-width", "6", "--corr-length", "2.0", "--depth", "2", "--width", "4",
]


def run(argv):
    return main([str(a) for a in argv])


def dir_bytes(root):
    return {p.relative_to(root): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def synth_store(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth") / "data"
    assert run(["synth", "--out", out, "--seed", "3", *SYNTH_ARGS]) == 0
    return out


@pytest.fixture(scope="module")
def trained_ckpt(tmp_path_factory, synth_store):
    path = tmp_path_factory.mktemp("ckpt") / "model.ckpt"
    assert run(
        ["train", "--data", synth_store / "train", "--out", path,
         "--steps", "30", "--seed", "0", "--depth", "2", "--width", "4", "--batch-size", "2"]
    ) == 0
    return path


class TestSynth:
    def test_store_readable(self, synth_store):
        store = read_patch_store(synth_store / "train")
        assert store.split == "train"
        assert len(store.records) >= 1
        assert read_patch_store(synth_store / "val").split == "val"

    def test_class_histogram_artifact(self, synth_store):
        table = (synth_store / "train" / "class_histogram.txt").read_text()
        assert table.startswith("class count fraction")
        assert "extreme" in table

    def test_idempotent_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run(["synth", "--out", out, "--seed", "5", *SYNTH_ARGS]) == 0
        assert dir_bytes(a) == dir_bytes(b)

    def test_workers_do_not_change_output(self, tmp_path, monkeypatch):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(["synth", "--out", a, "--seed", "5", *SYNTH_ARGS]) == 0
        monkeypatch.setenv("OYA_NUM_WORKERS", "4")
        assert run(["synth", "--out", b, "--seed", "5", *SYNTH_ARGS]) == 0
        assert dir_bytes(a) == dir_bytes(b)

    def test_pretrain_store(self, tmp_path):
        out = tmp_path / "p"
        assert run(
            ["synth", "--out", out, "--seed", "1", "--pretrain-pairs", "2",
             "--noise-level", "0.3", *SYNTH_ARGS]
        ) == 0
        store = read_patch_store(out / "pretrain")
        assert all(r.m.all() for r in store.records)


class TestTrain:
    def test_zero_steps_params_byte_equal_to_init(self, tmp_path, synth_store):
        pre = tmp_path / "pre.ckpt"
        assert run(
            ["train", "--data", synth_store / "train", "--out", pre, "--stage", "pretrain",
             "--steps", "0", "--seed", "0", "--depth", "2", "--width", "4"]
        ) == 0
        out = tmp_path / "ft.ckpt"
        assert run(
            ["train", "--data", synth_store / "train", "--out", out, "--stage", "finetune",
             "--init", pre, "--steps", "0", "--seed", "0"]
        ) == 0
        a, b = load_checkpoint(pre), load_checkpoint(out)
        assert b.stage == "finetuned"
        for k in a.params:
            assert np.array_equal(a.params[k], b.params[k])

    def test_rerun_byte_identical(self, tmp_path, synth_store):
        outs = []
        for name in ("a.ckpt", "b.ckpt"):
            path = tmp_path / name
            assert run(
                ["train", "--data", synth_store / "train", "--out", path,
                 "--steps", "5", "--seed", "9", "--depth", "2", "--width", "4", "--batch-size", "2"]
            ) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]

    def test_config_file_with_flag_override(self, tmp_path, synth_store):
        cfg_file = tmp_path / "train.cfg"
        cfg_file.write_text("steps: 999\nseed: 4\nlearning_rate: 0.001\n")
        out = tmp_path / "c.ckpt"
        assert run(
            ["train", "--data", synth_store / "train", "--out", out, "--config", cfg_file,
             "--steps", "2", "--depth", "2", "--width", "4", "--batch-size", "2"]
        ) == 0
        assert load_checkpoint(out).metadata["steps_run"] == 2  # flag beat the file

    def test_loss_log_written(self, tmp_path, synth_store):
        log = tmp_path / "loss.csv"
        assert run(
            ["train", "--data", synth_store / "train", "--out", tmp_path / "d.ckpt",
             "--steps", "3", "--seed", "0", "--depth", "2", "--width", "4",
             "--batch-size", "2", "--loss-log", log]
        ) == 0
        assert log.read_text().startswith("step,classifier_loss")


class TestEvaluate:
    def test_identical_stores_perfect_csi(self, tmp_path, synth_store):
        out = tmp_path / "eval"
        assert run(
            ["evaluate", "--data", synth_store / "train", "--pred", synth_store / "train",
             "--out", out]
        ) == 0
        rows = (out / "metrics.csv").read_text().strip().splitlines()[1:]
        assert len(rows) == 4
        for row in rows:
            csi = row.split(",")[1]
            assert csi == "nan" or float(csi) == 1.0
        assert any(float(r.split(",")[1]) == 1.0 for r in rows if r.split(",")[1] != "nan")

    def test_checkpoint_evaluation_and_csi_map(self, tmp_path, synth_store, trained_ckpt):
        out = tmp_path / "eval2"
        assert run(
            ["evaluate", "--data", synth_store / "val", "--checkpoint", trained_ckpt,
             "--out", out, "--csi-map-threshold", "0.2"]
        ) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "csi_map.bin").exists()
        assert (out / "csi_map.ppm").read_bytes().startswith(b"P6")

    def test_missing_store_names_path(self, tmp_path, capsys):
        code = run(["evaluate", "--data", tmp_path / "absent", "--pred", tmp_path / "absent",
                    "--out", tmp_path / "x"])
        assert code != 0
        assert "absent" in capsys.readouterr().err


class TestInfer:
    def test_prediction_store_round_trip(self, tmp_path, synth_store, trained_ckpt):
        out = tmp_path / "pred"
        assert run(["infer", "--data", synth_store / "val", "--checkpoint", trained_ckpt,
                    "--out", out]) == 0
        pred = read_patch_store(out)
        truth = read_patch_store(synth_store / "val")
        assert len(pred.records) == len(truth.records)
        assert pred.split == "prediction"
        assert all(r.m.all() for r in pred.records)
        assert all((r.y >= 0).all() for r in pred.records)


class TestMosaic:
    def test_two_satellite_product(self, tmp_path):
        g = small_grid(rows=20, cols=60, spacing=6.0, lat_max=60.0, lon_min=-180.0)
        write_grid_spec(tmp_path / "grid.txt", g)
        write_field(tmp_path / "a.bin", np.full(g.shape, 1.0, dtype=np.float32))
        write_field(tmp_path / "b.bin", np.full(g.shape, 3.0, dtype=np.float32))
        out = tmp_path / "product"
        assert run(
            ["mosaic", "--out", out, "--grid-spec", tmp_path / "grid.txt",
             "--estimate", f"sat_a=0.0={tmp_path/'a.bin'}",
             "--estimate", f"sat_b=40.0={tmp_path/'b.bin'}",
             "--radius", "60", "--timestamp", "2022-01-01T00:00:00"]
        ) == 0
        rates = read_field(out / "rates.bin")
        counts = read_field(out / "contributors.bin")
        overlap = counts == 2
        assert overlap.any()
        assert np.all(rates[overlap] == 2.0)

    def test_bad_estimate_spec_rejected(self, tmp_path, capsys):
        write_grid_spec(tmp_path / "grid.txt", small_grid(4, 4))
        code = run(["mosaic", "--out", tmp_path / "o", "--grid-spec", tmp_path / "grid.txt",
                    "--estimate", "witheq"])
        assert code != 0


class TestAblate:
    def test_patch_size_axis_has_three_rows(self, tmp_path):
        out = tmp_path / "ab"
        assert run(
            ["ablate", "--axis", "patch_size", "--out", out, "--seed", "1",
             "--steps", "2", "--pairs", "2", "--val-pairs", "1", "--channels", "3",
             "--swath-width", "6", "--corr-length", "2.0", "--depth", "2", "--width", "4",
             "--batch-size", "2"]
        ) == 0
        lines = (out / "ablation.csv").read_text().strip().splitlines()
        assert lines[0] == "axis,variant,csi_light,csi_medium,csi_heavy,csi_extreme"
        rows = [l.split(",") for l in lines[1:]]
        assert [r[1] for r in rows] == ["32", "64", "128"]

    def test_channels_axis_variants(self, tmp_path):
        out = tmp_path / "ab2"
        assert run(
            ["ablate", "--axis", "channels", "--out", out, "--seed", "1",
             "--steps", "2", "--pairs", "2", "--val-pairs", "1", "--patch", "16",
             "--channels", "3", "--swath-width", "6", "--corr-length", "2.0",
             "--depth", "2", "--width", "4", "--batch-size", "2"]
        ) == 0
        lines = (out / "ablation.csv").read_text().strip().splitlines()[1:]
        assert [l.split(",")[1] for l in lines] == ["longwave_only", "all_channels"]


class TestCaseReport:
    def test_artifacts_written(self, tmp_path, trained_ckpt):
        cfg = SynthConfig(
            seed=3, grid=GridSpec.from_origin(0.36, -0.36, 16, 16), channels=3,
            correlation_length=2.0, swath_width=6,
        )
        scene, swath, _ = generate_pair(cfg)
        write_scene(tmp_path / "event", scene)
        write_swath_csv(tmp_path / "event.csv", swath)
        write_field(tmp_path / "flat.bin", np.full((16, 16), 0.5, dtype=np.float32))
        out = tmp_path / "report"
        assert run(
            ["case-report", "--scene", tmp_path / "event", "--swath", tmp_path / "event.csv",
             "--out", out, "--checkpoint", trained_ckpt,
             "--product", f"flat={tmp_path/'flat.bin'}"]
        ) == 0
        assert (out / "fields" / "truth.bin").exists()
        assert (out / "fields" / "retrieval.bin").exists()
        assert (out / "images" / "flat.ppm").read_bytes().startswith(b"P6")
        assert (out / "metrics_retrieval.csv").exists()
        assert (out / "metrics_flat.csv").exists()


class TestArgumentErrors:
    def test_unknown_subcommand_usage(self, capsys):
        with pytest.raises(SystemExit) as e:
            run(["frobnicate"])
        assert e.value.code != 0
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as e:
            run(["synth", "--out", "x", "--bogus", "1"])
        assert e.value.code != 0
