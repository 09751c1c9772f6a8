import csv

import numpy as np
import pytest

from crwkv import cli, selftest
from crwkv import data as D
from crwkv.model import CRWKV, ModelConfig, save_checkpoint

TOY_CFG = """\
# toy run
base_channels = 4
stage_depths = 1,1,1,1
fmix_split = 0:1,0:1,0:1,1:0
iterations = 3
batch_size = 2
patch_size = 16
log_every = 1
synthetic_images = 3
synthetic_size = 32
noise_kind = awgn
noise_sigma = 25
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "toy.cfg"
    p.write_text(TOY_CFG)
    return p


@pytest.fixture
def ckpt(tmp_path):
    p = tmp_path / "toy.crwkv"
    save_checkpoint(p, CRWKV(ModelConfig(base_channels=4, stage_depths=(1, 1, 1, 1)), seed=0))
    return p


def identity_checkpoint(path):
    m = CRWKV(ModelConfig(base_channels=4, stage_depths=(1, 1, 1, 1)))
    for _, p in m.named_parameters():
        p.data[...] = 0
    save_checkpoint(path, m)
    return path


class TestTrain:
    def test_writes_run_and_is_reproducible(self, tmp_path, cfg_path):
        assert cli.main(["train", "--config", str(cfg_path), "--seed", "5", "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["train", "--config", str(cfg_path), "--seed", "5", "--out", str(tmp_path / "b")]) == 0
        rows = list(csv.DictReader(open(tmp_path / "a" / "metrics.csv")))
        assert [r["iter"] for r in rows] == ["0", "1", "2"]
        assert float(rows[0]["lr"]) == 3e-4
        for name in ("metrics.csv", "final.crwkv", "run.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_resume(self, tmp_path, cfg_path):
        out = tmp_path / "r"
        assert cli.main(["train", "--config", str(cfg_path), "--out", str(out), "--until", "2"]) == 0
        assert cli.main(["train", "--config", str(cfg_path), "--out", str(out), "--resume", str(out / "final.crwkv")]) == 0
        full = tmp_path / "f"
        assert cli.main(["train", "--config", str(cfg_path), "--out", str(full)]) == 0
        assert (out / "final.crwkv").read_bytes() == (full / "final.crwkv").read_bytes()

    def test_missing_config_is_usage_error(self, tmp_path, capsys):
        assert cli.main(["train", "--config", str(tmp_path / "nope.cfg")]) == 1
        assert "config file not found" in capsys.readouterr().err

    def test_no_dataset_is_usage_error(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("base_channels = 4\n")
        assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 1

    def test_bad_split_is_config_error(self, tmp_path, capsys):
        p = tmp_path / "c.cfg"
        p.write_text(TOY_CFG.replace("0:1,0:1,0:1,1:0", "0:2,0:1,0:1,1:0"))
        assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
        assert "stage 1" in capsys.readouterr().err

    def test_missing_data_dir(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text(f"base_channels = 4\nstage_depths = 1,1,1,1\ndata_dir = {tmp_path / 'none'}\n")
        assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


class TestDenoise:
    def test_identity_model_is_byte_exact(self, tmp_path):
        ck = identity_checkpoint(tmp_path / "id.crwkv")
        px = np.random.default_rng(0).integers(0, 256, (16, 24, 3)).astype(np.uint8)
        D.write_png_fixture(tmp_path / "in.png", px)
        assert cli.main(["denoise", "--checkpoint", str(ck), "--input", str(tmp_path / "in.png"), "--out", str(tmp_path / "o")]) == 0
        np.testing.assert_array_equal(D.to_uint8(D.load_png(tmp_path / "o" / "in.png")), px)

    def test_odd_size_is_padded_and_cropped(self, tmp_path, ckpt, capsys):
        img = D.synthetic_textures(1, 100, seed=0)[0]
        D.save_png(img, tmp_path / "in" / "x.png")
        D.save_png(img, tmp_path / "clean" / "x.png")
        rc = cli.main(["denoise", "--checkpoint", str(ckpt), "--input", str(tmp_path / "in"),
                       "--out", str(tmp_path / "o"), "--clean", str(tmp_path / "clean")])
        assert rc == 0
        assert D.load_png(tmp_path / "o" / "x.png").shape == (100, 100, 3)
        assert "psnr" in capsys.readouterr().out

    def test_config_mismatch(self, tmp_path, ckpt):
        p = tmp_path / "c.cfg"
        p.write_text("base_channels = 8\n")
        D.save_png(np.zeros((8, 8, 3)), tmp_path / "x.png")
        assert cli.main(["denoise", "--checkpoint", str(ckpt), "--input", str(tmp_path / "x.png"),
                         "--out", str(tmp_path / "o"), "--config", str(p)]) == 2

    def test_missing_input(self, tmp_path, ckpt):
        assert cli.main(["denoise", "--checkpoint", str(ckpt), "--input", str(tmp_path / "none.png"),
                         "--out", str(tmp_path / "o")]) == 2
        assert not (tmp_path / "o").exists()


class TestBench:
    def test_zero_repeats_header_only(self, tmp_path):
        out = tmp_path / "b.csv"
        assert cli.main(["bench", "--sizes", "64,128", "--repeats", "0", "--out", str(out)]) == 0
        assert out.read_text().splitlines() == ["size,wall_ms,peak_bytes,variant"]

    def test_wkv_rows(self, tmp_path, capsys):
        out = tmp_path / "b.csv"
        assert cli.main(["bench", "--sizes", "64,128", "--repeats", "1", "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [(r["size"], r["variant"]) for r in rows] == [("64", "scan"), ("128", "scan"), ("64", "reference"), ("128", "reference")]
        assert "log-log slope [scan]" in capsys.readouterr().out

    def test_oom_rows(self, tmp_path):
        out = tmp_path / "b.csv"
        assert cli.main(["bench", "--sizes", "64,4096", "--repeats", "1", "--memory-budget", "1000000", "--out", str(out)]) == 0
        rows = list(csv.DictReader(open(out)))
        assert [r["wall_ms"] for r in rows if r["size"] == "4096"] == ["OOM", "OOM"]

    def test_model_mode(self, tmp_path):
        out = tmp_path / "m.csv"
        assert cli.main(["bench", "--mode", "model", "--sizes", "16,32", "--repeats", "1", "--channels", "4", "--out", str(out)]) == 0
        assert len(list(csv.DictReader(open(out)))) == 2

    def test_descending_sizes(self, tmp_path):
        assert cli.main(["bench", "--sizes", "128,64", "--out", str(tmp_path / "b.csv")]) == 1


class TestSpectrum:
    def test_writes_profiles(self, tmp_path, ckpt):
        D.save_png(D.synthetic_textures(1, 32)[0], tmp_path / "x.png")
        rc = cli.main(["spectrum", "--checkpoint", str(ckpt), "--image", str(tmp_path / "x.png"),
                       "--layers", "input_proj,latent", "--out", str(tmp_path / "s")])
        assert rc == 0
        lines = (tmp_path / "s" / "spectrum_input_proj.csv").read_text().splitlines()
        assert lines[0] == "bin,log_amplitude,layer" and len(lines) == 17
        assert len((tmp_path / "s" / "spectrum_latent.csv").read_text().splitlines()) == 3

    def test_unknown_tag(self, tmp_path, ckpt, capsys):
        rc = cli.main(["spectrum", "--checkpoint", str(ckpt), "--image", str(tmp_path / "x.png"), "--layers", "encoder_layer.9"])
        assert rc == 2
        assert "available: input_proj" in capsys.readouterr().err


class TestSelftest:
    def test_all_pass(self, capsys):
        assert cli.main(["selftest"]) == 0
        assert "all 19 checks passed" in capsys.readouterr().out

    def test_filter(self, capsys):
        assert cli.main(["selftest", "--filter", "fft"]) == 0
        out = capsys.readouterr().out
        assert "fft.parseval" in out and "wkv." not in out

    def test_csv_is_reproducible(self, tmp_path):
        for name in ("a.csv", "b.csv"):
            assert cli.main(["selftest", "--filter", "cts", "--csv", str(tmp_path / name)]) == 0
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_broken_scan_is_caught(self):
        def broken(k, v, w, u):
            return selftest.wkv.biwkv_scan(k, v, w, u) * 1.001

        results = {r.name: r.passed for r in selftest.run_selftest("wkv", scan=broken)}
        assert not results["wkv.scan_vs_reference"] and not results["wkv.direct_formula"]
        assert results["wkv.gradients"]

    def test_invariant_failure_exit_code(self, monkeypatch):
        monkeypatch.setattr(selftest, "check_parseval", lambda: (1.0, 1e-5))
        assert cli.main(["selftest", "--filter", "fft"]) == 3


def test_unknown_subcommand():
    assert cli.main(["frobnicate"]) == 1


def test_help_exits_zero(capsys):
    assert cli.main(["--help"]) == 0
