import json
import subprocess
import sys

import numpy as np
import pytest

from lipt.cli import main
from lipt.io import ImageRGB8, encode_weights, load_ppm, load_weights, save_ppm

TOY_CONFIG = {"blocks": 1, "channels": 8, "window": 4, "expansion": 2}


@pytest.fixture
def workdir(tmp_path, rng):
    cfg = tmp_path / "toy.json"
    cfg.write_text(json.dumps(TOY_CONFIG))
    save_ppm(ImageRGB8(rng.integers(0, 256, (12, 10, 3))), tmp_path / "in.ppm")
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestMask:
    def test_gen_and_verify_sparse(self, tmp_path, capsys):
        m = tmp_path / "m.txt"
        assert run(capsys, "mask", "gen", "--kind", "sparse", "--p", 4, "--s", 2, "--out", m)[0] == 0
        code, out, _ = run(capsys, "mask", "verify", "--mask", m)
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "beta=0.0000 non-volatile"
        assert lines[1:] == ["1 1 1 1"] * 4

    def test_stride_is_volatile(self, tmp_path, capsys):
        m = tmp_path / "m.txt"
        run(capsys, "mask", "gen", "--kind", "stride", "--p", 4, "--s", 2, "--out", m)
        code, out, _ = run(capsys, "mask", "verify", "--mask", m)
        assert code == 0
        assert out.splitlines()[0] == "beta=0.7500 volatile"
        assert out.splitlines()[1] == "4 0 4 0"

    def test_malformed_mask(self, tmp_path, capsys):
        m = tmp_path / "m.txt"
        m.write_text("2 2\n11\n")
        code, _, err = run(capsys, "mask", "verify", "--mask", m)
        assert code == 1 and err.startswith("lipt: parse error")

    def test_wrong_ones_count(self, tmp_path, capsys):
        m = tmp_path / "m.txt"
        m.write_text("1 2\n11\n00\n")
        code, _, err = run(capsys, "mask", "verify", "--mask", m)
        assert code == 1 and "error" in err


class TestPipeline:
    def test_init_infer_fuse_metrics(self, workdir, capsys):
        cfg, w, wf = workdir / "toy.json", workdir / "w.bin", workdir / "wf.bin"
        assert run(capsys, "init", "--config", cfg, "--seed", 3, "--scale", 2, "--out", w)[0] == 0
        assert run(capsys, "infer", "--config", cfg, "--weights", w, "--scale", 2,
                   "--input", workdir / "in.ppm", "--output", workdir / "a.ppm")[0] == 0
        out = load_ppm(workdir / "a.ppm")
        assert (out.height, out.width) == (24, 20)
        assert run(capsys, "fuse", "--weights", w, "--out", wf)[0] == 0
        assert any(n.endswith(".rep.weight") for n in load_weights(wf))
        assert run(capsys, "infer", "--config", cfg, "--weights", wf, "--scale", 2, "--fused",
                   "--input", workdir / "in.ppm", "--output", workdir / "b.ppm")[0] == 0
        code, text, _ = run(capsys, "metrics", "--ref", workdir / "a.ppm", "--test", workdir / "b.ppm")
        assert code == 0
        assert text.startswith("psnr_y=")

    def test_identical_images(self, workdir, rng, capsys):
        save_ppm(ImageRGB8(rng.integers(0, 256, (16, 16, 3))), workdir / "big.ppm")
        code, text, _ = run(capsys, "metrics", "--ref", workdir / "big.ppm", "--test", workdir / "big.ppm")
        assert code == 0 and text.strip() == "psnr_y=inf dB ssim_y=1.000000"

    def test_fuse_twice_fails(self, workdir, capsys):
        w, wf = workdir / "w.bin", workdir / "wf.bin"
        run(capsys, "init", "--config", workdir / "toy.json", "--out", w)
        run(capsys, "fuse", "--weights", w, "--out", wf)
        code, _, err = run(capsys, "fuse", "--weights", wf, "--out", workdir / "x.bin")
        assert code == 1 and "already fused" in err

    def test_scale_mismatch(self, workdir, capsys):
        w = workdir / "w.bin"
        run(capsys, "init", "--config", workdir / "toy.json", "--scale", 4, "--out", w)
        code, _, err = run(capsys, "infer", "--config", workdir / "toy.json", "--weights", w, "--scale", 2,
                           "--input", workdir / "in.ppm", "--output", workdir / "o.ppm")
        assert code == 1 and err.startswith("lipt: config error")

    def test_missing_input(self, workdir, capsys):
        w = workdir / "w.bin"
        run(capsys, "init", "--config", workdir / "toy.json", "--out", w)
        code, _, err = run(capsys, "infer", "--config", workdir / "toy.json", "--weights", w, "--scale", 4,
                           "--input", workdir / "nope.ppm", "--output", workdir / "o.ppm")
        assert code == 1 and err.startswith("lipt: I/O error")

    def test_bad_weight_file(self, workdir, capsys):
        bad = workdir / "bad.bin"
        bad.write_bytes(b"NOTLIPT")
        code, _, err = run(capsys, "fuse", "--weights", bad, "--out", workdir / "x.bin")
        assert code == 1 and err.startswith("lipt: parse error") and "magic" in err

    def test_incomplete_weight_file(self, workdir, capsys):
        part = workdir / "part.bin"
        part.write_bytes(encode_weights({"shallow.weight": np.zeros((8, 3, 3, 3), np.float32)}))
        code, _, err = run(capsys, "fuse", "--weights", part, "--out", workdir / "x.bin")
        assert code == 1 and "missing tensor" in err

    def test_metrics_shape_mismatch(self, workdir, rng, capsys):
        save_ppm(ImageRGB8(rng.integers(0, 256, (14, 14, 3))), workdir / "other.ppm")
        code, _, err = run(capsys, "metrics", "--ref", workdir / "in.ppm", "--test", workdir / "other.ppm")
        assert code == 1 and err.startswith("lipt: shape error")

    def test_metrics_crop_border(self, workdir, capsys):
        code, _, err = run(capsys, "metrics", "--ref", workdir / "in.ppm", "--test", workdir / "in.ppm",
                           "--crop-border", 5)
        assert code == 1 and "crop border" in err  # 10 columns minus 2 * 5 leaves nothing

    def test_image_smaller_than_ssim_window(self, workdir, capsys):
        code, _, err = run(capsys, "metrics", "--ref", workdir / "in.ppm", "--test", workdir / "in.ppm")
        assert code == 1 and "SSIM window" in err


class TestBench:
    def test_reports_runs(self, workdir, capsys):
        code, text, _ = run(capsys, "bench", "--config", workdir / "toy.json", "--width", 8, "--height", 8,
                            "--runs", 3)
        assert code == 0
        samples = next(l for l in text.splitlines() if l.startswith("samples_s="))
        assert len(samples.split("=")[1].split(",")) == 3
        assert "median_s=" in text and "macs=" in text


class TestUsage:
    def test_unknown_command_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 1

    def test_missing_flag_exits_1(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["mask", "gen", "--kind", "sparse"])
        assert exc.value.code == 1

    def test_module_entry_point(self, tmp_path):
        m = tmp_path / "m.txt"
        done = subprocess.run([sys.executable, "-m", "lipt", "mask", "gen", "--kind", "dense", "--p", "2",
                               "--s", "2", "--out", str(m)], capture_output=True, text=True)
        assert done.returncode == 0, done.stderr
        assert m.read_text().splitlines()[0] == "2 2"
