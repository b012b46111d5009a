import numpy as np
import pytest

from flowalign import cli
from flowalign import datagen as D
from flowalign import geometry as G
from flowalign.cli import main


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """A tiny end-to-end workspace: dataset, trained checkpoint, rasters."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "train.hfmd"
    out = root / "run"
    rc = main(["gen", "--side", "32", "--rho", "4", "--pattern", "blobs",
               "--data-seed", "5", "--count", "12", "--out", str(data)])
    assert rc == 0
    rc = main(["train", "--side", "32", "--rho", "4", "--pattern", "blobs",
               "--data-seed", "5", "--iters", "4", "--batch", "2", "--pool", "8",
               "--steps", "2", "--base-channels", "4", "--hidden-channels", "8",
               "--blocks", "1", "--out", str(out)])
    assert rc == 0
    return {"root": root, "data": data, "out": out,
            "ckpt": out / "final.ckpt"}


class TestUsageErrors:
    def test_unknown_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["eval", "--frobnicate"])
        assert exc.value.code == 2

    def test_eval_without_checkpoint_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main(["eval"])
        assert exc.value.code == 2

    def test_no_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_missing_checkpoint_file_is_runtime_error(self, capsys, tmp_path):
        rc = main(["eval", str(tmp_path / "nope.ckpt"), "--side", "32",
                   "--rho", "4", "--count", "2"])
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestGen:
    def test_dataset_file_readable(self, workdir):
        samples, cfg = D.read_dataset(workdir["data"])
        assert len(samples) == 12
        assert cfg.image_side == 32


class TestTrainEval:
    def test_train_wrote_checkpoint_and_sidecar(self, workdir):
        assert workdir["ckpt"].exists()
        assert (workdir["out"] / "model.cfg").exists()
        assert (workdir["out"] / "train_log.txt").exists()

    def test_eval_prints_report_and_writes_file(self, workdir, capsys):
        report_path = workdir["root"] / "report.txt"
        rc = main(["eval", str(workdir["ckpt"]), "--data", str(workdir["data"]),
                   "--steps", "2", "--out", str(report_path)])
        assert rc == 0
        text = capsys.readouterr().out
        assert "mace_px:" in text
        assert "auc@3:" in text
        assert report_path.exists()

    def test_eval_generated_data(self, workdir, capsys):
        rc = main(["eval", str(workdir["ckpt"]), "--side", "32", "--rho", "4",
                   "--pattern", "blobs", "--data-seed", "99", "--count", "4",
                   "--steps", "2"])
        assert rc == 0
        assert "samples: 4" in capsys.readouterr().out


class TestInfer:
    def test_infer_prints_nine_numbers_and_writes_overlay(self, workdir, capsys):
        root = workdir["root"]
        samples, _ = D.read_dataset(workdir["data"])
        D.write_raster(root / "a.ppm", samples[0].i_s)
        D.write_raster(root / "b.ppm", samples[0].i_t)
        overlay = root / "overlay.ppm"
        rc = main(["infer", str(root / "a.ppm"), str(root / "b.ppm"),
                   "--checkpoint", str(workdir["ckpt"]), "--steps", "2",
                   "--overlay", str(overlay),
                   "--gt", samples[0].h_gt.to_text()])
        assert rc == 0
        out = capsys.readouterr().out
        h = G.Homography.from_text(out.splitlines()[0])
        assert h.m.shape == (3, 3)
        img = D.read_raster(overlay)
        assert img.shape[0] == 3
        # pred quad drawn in channel 0, gt quad in channel 1
        assert (img[0] == 1.0).sum() > 0
        assert (img[1] == 1.0).sum() > 0

    def test_grayscale_raster_upcast(self, workdir, tmp_path, capsys):
        gray = np.random.default_rng(0).uniform(0, 1, (1, 32, 32)).astype(np.float32)
        D.write_raster(tmp_path / "g1.pgm", gray)
        D.write_raster(tmp_path / "g2.pgm", gray)
        rc = main(["infer", str(tmp_path / "g1.pgm"), str(tmp_path / "g2.pgm"),
                   "--checkpoint", str(workdir["ckpt"]), "--steps", "2"])
        assert rc == 0


class TestProbe:
    def test_probe_reports_accuracy(self, workdir, capsys):
        rc = main(["probe", "--checkpoint", str(workdir["ckpt"]),
                   "--side", "32", "--rho", "4", "--shift", "invert",
                   "--pattern", "blobs", "--data-seed", "17", "--count", "16"])
        assert rc == 0
        assert "accuracy" in capsys.readouterr().out


class TestAblate:
    def test_tiny_sweep_writes_csv(self, workdir):
        out = workdir["root"] / "ablation.csv"
        rc = main(["ablate", "--side", "32", "--rho", "4", "--pattern", "blobs",
                   "--data-seed", "5", "--iters", "3", "--batch", "2", "--pool", "6",
                   "--base-channels", "4", "--hidden-channels", "8", "--blocks", "1",
                   "--seeds", "0", "--variants", "fm_n1,direct_regression",
                   "--val-size", "3", "--out", str(out)])
        assert rc == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("variant,seed,")
        assert len(lines) >= 5  # 2 runs + 2 means + header


class TestConfigFiles:
    def test_kv_config_round_trip(self, tmp_path):
        cfg_file = tmp_path / "gen.cfg"
        cfg_file.write_text("image_side = 32\nrho = 4.0\npattern = blobs\n# comment\n")
        kv = cli.load_kv(cfg_file)
        assert kv == {"image_side": "32", "rho": "4.0", "pattern": "blobs"}

    def test_unknown_key_rejected(self, tmp_path):
        from flowalign.datagen import GenConfig
        with pytest.raises(ValueError, match="unknown"):
            cli._coerce_dataclass(GenConfig, {"sides": "32"})

    def test_model_cfg_round_trip(self):
        from flowalign import model as M
        cfg = M.ModelConfig(encoder=M.EncoderConfig(base_channels=12),
                            head=M.VelocityHeadConfig(hidden_channels=24,
                                                      n_residual_blocks=2,
                                                      time_embed_dim=16))
        kv = dict(line.split("=") for line in cli.model_cfg_to_kv(cfg).strip().splitlines())
        back = cli.model_cfg_from_kv(kv)
        assert back == cfg
