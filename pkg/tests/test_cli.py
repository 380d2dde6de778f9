import json
import math

import numpy as np
import pytest

from srde import (
    Tensor,
    bilinear_upsample,
    build_dictionary,
    load_dictionary,
    load_image,
    load_weights,
    random_init,
    save_dictionary,
    save_image,
    save_weights,
)
from srde.cli import RunConfig, CliError, _resolve_seed, main
from srde.dictionary import KIND_GAUSSIAN, Dictionary, FilterInfo
from srde.predictor import ConvLayer, PredictorWeights


def write_pgm(path, plane):
    save_image(Tensor(np.asarray(plane, dtype=np.float32)[None, None]), path)


def smooth_plane(h, w):
    y = np.arange(h)[:, None]
    x = np.arange(w)[None, :]
    return np.clip(0.5 + 0.3 * np.sin(x / 3.0) + 0.2 * np.cos(y / 4.0), 0, 1)


@pytest.fixture()
def model_files(tmp_path):
    bank = build_dictionary(k=3, sigmas=[0.4, 0.8], thetas=[0.0, 0.9],
                            ratios=[2.0], dog_pairs=[(0.5, 1.0)])
    weights = random_init(3, 2, bank.L, C=4, R_b=1)
    dict_path = tmp_path / "bank.srdict"
    weights_path = tmp_path / "net.srnet"
    save_dictionary(bank, dict_path)
    save_weights(weights, weights_path)
    img_path = tmp_path / "in.pgm"
    write_pgm(img_path, smooth_plane(12, 10))
    return dict_path, weights_path, img_path


class TestGenDict:
    def test_default_build_reports_size(self, tmp_path, capsys):
        out = tmp_path / "bank.srdict"
        assert main(["gen-dict", "--out", str(out)]) == 0
        msg = capsys.readouterr().out
        assert "L=42" in msg and "k=5" in msg
        assert load_dictionary(out).L == 42

    def test_even_k_is_usage_error(self, tmp_path, capsys):
        rc = main(["gen-dict", "--k", "4", "--out", str(tmp_path / "x.srdict")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert "odd" in err["error"]

    def test_round_trip(self, tmp_path):
        out = tmp_path / "bank.srdict"
        main(["gen-dict", "--out", str(out)])
        bank = load_dictionary(out)
        ref = build_dictionary()
        assert np.array_equal(bank.rows, ref.rows)


class TestUpscale:
    def test_output_shape_and_timing(self, model_files, tmp_path, capsys):
        dict_path, weights_path, img_path = model_files
        out = tmp_path / "out.pgm"
        timing = tmp_path / "timing.csv"
        rc = main([
            "upscale", "--input", str(img_path), "--dict", str(dict_path),
            "--weights", str(weights_path), "--scale", "2",
            "--out", str(out), "--timing-csv", str(timing),
        ])
        assert rc == 0
        up = load_image(out)
        assert (up.h, up.w) == (24, 20)
        rows = dict(
            line.split(",") for line in timing.read_text().strip().splitlines()[1:]
        )
        assert set(rows) == {"Dictionary", "Conv", "Others", "Total"}
        stage_sum = sum(float(rows[k]) for k in ("Dictionary", "Conv", "Others"))
        assert abs(stage_sum - float(rows["Total"])) <= 0.05 * float(rows["Total"])

    def test_delta_bank_one_hot_predictor_is_bilinear(self, tmp_path):
        k = 3
        delta = np.zeros((1, k * k), dtype=np.float32)
        delta[0, (k * k) // 2] = 1.0
        bank = Dictionary(k=k, rows=delta,
                          provenance=(FilterInfo(KIND_GAUSSIAN, 1e-3, 1e-3, 0.0),))
        s = 2
        head = ConvLayer(
            weights=Tensor(np.zeros((s * s, 1, 3, 3), dtype=np.float32)),
            bias=np.ones(s * s, dtype=np.float32),
            relu=False,
        )
        weights = PredictorWeights(layers=(head,), scale=s, coeff_count=1,
                                   hidden=1, res_blocks=0)
        dict_path = tmp_path / "delta.srdict"
        weights_path = tmp_path / "onehot.srnet"
        save_dictionary(bank, dict_path)
        save_weights(weights, weights_path)
        img_path = tmp_path / "in.pgm"
        write_pgm(img_path, smooth_plane(9, 7))
        out = tmp_path / "out.pgm"
        rc = main([
            "upscale", "--input", str(img_path), "--dict", str(dict_path),
            "--weights", str(weights_path), "--scale", "2", "--out", str(out),
        ])
        assert rc == 0
        ref = tmp_path / "ref.pgm"
        save_image(bilinear_upsample(load_image(img_path), 2), ref)
        assert out.read_bytes() == ref.read_bytes()

    def test_auto_block_tunes_with_measured_oracle(self, model_files, tmp_path):
        dict_path, weights_path, img_path = model_files
        out = tmp_path / "out.pgm"
        log = tmp_path / "tuning.csv"
        rc = main([
            "upscale", "--input", str(img_path), "--dict", str(dict_path),
            "--weights", str(weights_path), "--scale", "2", "--block", "auto",
            "--budget", "12", "--seed", "1", "--out", str(out),
            "--tuning-log", str(log),
        ])
        assert rc == 0
        lines = log.read_text().strip().splitlines()
        assert lines[0].startswith("iteration,nx,ny,nz,latency")
        assert len(lines) == 12 + 1
        assert load_image(out).h == 24

    def test_explicit_block_and_workers(self, model_files, tmp_path):
        dict_path, weights_path, img_path = model_files
        out = tmp_path / "out.pgm"
        rc = main([
            "upscale", "--input", str(img_path), "--dict", str(dict_path),
            "--weights", str(weights_path), "--scale", "2", "--block", "2,4,9",
            "--workers", "2", "--out", str(out),
        ])
        assert rc == 0

    def test_infeasible_block_rejected(self, model_files, tmp_path, capsys):
        dict_path, weights_path, img_path = model_files
        rc = main([
            "upscale", "--input", str(img_path), "--dict", str(dict_path),
            "--weights", str(weights_path), "--scale", "2",
            "--block", "24,20,9", "--out", str(tmp_path / "x.pgm"),
        ])
        assert rc == 1
        assert "infeasible" in json.loads(capsys.readouterr().err.strip())["error"]

    def test_scale_mismatch_rejected(self, model_files, tmp_path, capsys):
        dict_path, weights_path, img_path = model_files
        rc = main([
            "upscale", "--input", str(img_path), "--dict", str(dict_path),
            "--weights", str(weights_path), "--scale", "3",
            "--out", str(tmp_path / "x.pgm"),
        ])
        assert rc == 1
        assert "scale" in json.loads(capsys.readouterr().err.strip())["error"]

    def test_missing_file_is_clean_error(self, model_files, tmp_path, capsys):
        dict_path, weights_path, _ = model_files
        rc = main([
            "upscale", "--input", str(tmp_path / "absent.pgm"),
            "--dict", str(dict_path), "--weights", str(weights_path),
            "--scale", "2", "--out", str(tmp_path / "x.pgm"),
        ])
        assert rc == 1
        json.loads(capsys.readouterr().err.strip())


class TestPrune:
    def test_small_run_outputs_consistent(self, tmp_path, capsys):
        bank = build_dictionary(k=3, sigmas=[0.4, 0.8], thetas=[0.0, 0.9],
                                ratios=[2.0], dog_pairs=[(0.5, 1.0)])
        weights = random_init(5, 2, bank.L, C=4, R_b=1)
        dict_path = tmp_path / "bank.srdict"
        weights_path = tmp_path / "net.srnet"
        save_dictionary(bank, dict_path)
        save_weights(weights, weights_path)
        data = tmp_path / "data"
        data.mkdir()
        write_pgm(data / "a.pgm", smooth_plane(16, 16))
        write_pgm(data / "b.pgm", smooth_plane(17, 15))  # gets cropped
        out_dir = tmp_path / "pruned"
        rc = main([
            "prune", "--data", str(data), "--dict", str(dict_path),
            "--weights", str(weights_path), "--alpha", "0.75",
            "--seed", "2", "--out", str(out_dir),
        ])
        assert rc == 0
        new_bank = load_dictionary(out_dir / "pruned.srdict")
        new_weights = load_weights(out_dir / "pruned.srnet")
        assert new_bank.L == new_weights.coeff_count
        assert new_bank.L < bank.L
        trace = (out_dir / "trace.csv").read_text().strip().splitlines()
        assert trace[0] == "step,alpha,lambda,support_size,sampled_mse"
        assert len(trace) >= 2

    def test_empty_dataset_rejected(self, tmp_path, capsys):
        bank = build_dictionary(k=3, sigmas=[0.5], thetas=[0.0], ratios=[1.0],
                                dog_pairs=[])
        weights = random_init(0, 2, bank.L, C=2, R_b=1)
        save_dictionary(bank, tmp_path / "b.srdict")
        save_weights(weights, tmp_path / "w.srnet")
        empty = tmp_path / "void"
        empty.mkdir()
        rc = main([
            "prune", "--data", str(empty), "--dict", str(tmp_path / "b.srdict"),
            "--weights", str(tmp_path / "w.srnet"), "--alpha", "0.5",
            "--out", str(tmp_path / "out"),
        ])
        assert rc == 1
        assert "no PGM/PPM images" in json.loads(capsys.readouterr().err.strip())["error"]


class TestTuneCommand:
    def test_synthetic_exhaustive_when_budget_covers(self, tmp_path, capsys):
        log = tmp_path / "log.csv"
        rc = main([
            "tune", "--dims", "8x8x4", "--budget", "500",
            "--out", str(log),
        ])
        assert rc == 0
        msg = capsys.readouterr().out
        assert "best block=" in msg
        lines = log.read_text().strip().splitlines()
        # degenerate exhaustive: one row per feasible config
        feasible = int(msg.rsplit("feasible=", 1)[1])
        assert len(lines) == feasible + 1

    def test_log_rows_equal_budget(self, tmp_path, capsys):
        log = tmp_path / "log.csv"
        rc = main([
            "tune", "--dims", "16x16x8", "--budget", "25", "--seed", "4",
            "--out", str(log),
        ])
        assert rc == 0
        capsys.readouterr()
        assert len(log.read_text().strip().splitlines()) == 25 + 1

    def test_measured_oracle_runs(self, tmp_path, capsys):
        rc = main([
            "tune", "--dims", "6x6x4", "--budget", "200", "--oracle", "measured",
        ])
        assert rc == 0
        assert "best block=" in capsys.readouterr().out

    def test_needs_dims_or_input(self, capsys):
        rc = main(["tune", "--budget", "10"])
        assert rc == 1
        assert "tune needs" in json.loads(capsys.readouterr().err.strip())["error"]


class TestBench:
    def test_tiny_grid_row_count(self, tmp_path, capsys):
        out = tmp_path / "bench.csv"
        rc = main([
            "bench", "--sizes", "12x12,16x12", "--scales", "2",
            "--ratios", "1.0,0.5", "--out", str(out), "--seed", "0",
        ])
        assert rc == 0
        stdout = capsys.readouterr().out
        assert "NOT reproducible" in stdout
        assert "1.02" in stdout  # reference metadata echoed
        lines = out.read_text().strip().splitlines()
        assert lines[0] == "input_size,scale,compression_ratio,median_ms,psnr_db,ssim"
        assert len(lines) == 1 + 2 * 1 * 2
        for line in lines[1:]:
            cells = line.split(",")
            assert len(cells) == 6
            float(cells[3]); float(cells[4]); float(cells[5])


class TestMetricsAndFootprint:
    def test_identical_images(self, tmp_path, capsys):
        p = tmp_path / "a.pgm"
        write_pgm(p, smooth_plane(16, 16))
        rc = main(["metrics", str(p), str(p)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "psnr_db=inf" in out
        assert "ssim=1.000000" in out

    def test_one_lsb_difference(self, tmp_path, capsys):
        a = smooth_plane(16, 16)
        quantized = np.rint(a * 255) / 255.0
        shifted = quantized + 1 / 255.0
        pa, pb = tmp_path / "a.pgm", tmp_path / "b.pgm"
        write_pgm(pa, np.clip(quantized, 0, 200 / 255.0))
        write_pgm(pb, np.clip(quantized, 0, 200 / 255.0) + 1 / 255.0)
        rc = main(["metrics", str(pa), str(pb)])
        assert rc == 0
        out = capsys.readouterr().out
        psnr_db = float(out.split("psnr_db=")[1].split()[0])
        assert abs(psnr_db - 20 * math.log10(255)) < 0.01

    def test_footprint_example(self, capsys):
        rc = main([
            "footprint", "--height", "64", "--width", "64", "--scale", "2",
            "--filters", "72", "--k", "5",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "phi_elems=1179648" in out
        assert "patch_elems=409600" in out
        assert "dict_elems=1800" in out


class TestRunConfig:
    def test_unknown_key_reports_line_number(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("scale = 2\nnot.a.key = 5\n")
        with pytest.raises(CliError, match=r"run\.cfg:2: unknown key"):
            RunConfig.load(p)

    def test_missing_equals_reports_line(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("# comment\n\nscale\n")
        with pytest.raises(CliError, match=r"run\.cfg:3"):
            RunConfig.load(p)

    def test_parses_typed_values(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "scale = 3\ndict.sigmas = 0.4, 0.8\ndict.dog_pairs = 0.5:1.0, 0.7:1.4\n"
            "hw.sms = 2  # trailing comment\n"
        )
        cfg = RunConfig.load(p)
        assert cfg.get("scale") == 3
        assert cfg.get("dict.sigmas") == [0.4, 0.8]
        assert cfg.get("dict.dog_pairs") == [(0.5, 1.0), (0.7, 1.4)]
        assert cfg.get("hw.sms") == 2

    def test_flags_win_over_config(self, tmp_path, capsys):
        p = tmp_path / "run.cfg"
        p.write_text("dict.k = 7\n")
        out = tmp_path / "bank.srdict"
        rc = main(["gen-dict", "--config", str(p), "--k", "3", "--out", str(out)])
        assert rc == 0
        assert load_dictionary(out).k == 3

    def test_config_applies_without_flag(self, tmp_path, capsys):
        p = tmp_path / "run.cfg"
        p.write_text("dict.k = 7\n")
        out = tmp_path / "bank.srdict"
        rc = main(["gen-dict", "--config", str(p), "--out", str(out)])
        assert rc == 0
        assert load_dictionary(out).k == 7

    def test_config_errors_exit_1(self, tmp_path, capsys):
        p = tmp_path / "run.cfg"
        p.write_text("bogus = 1\n")
        rc = main(["gen-dict", "--config", str(p), "--out", str(tmp_path / "x")])
        assert rc == 1
        err = json.loads(capsys.readouterr().err.strip())
        assert "unknown key" in err["error"]


class TestSeedResolution:
    class FakeArgs:
        def __init__(self, seed=None):
            self.seed = seed

    def test_flag_beats_config_and_env(self, monkeypatch):
        monkeypatch.setenv("SRDE_SEED", "99")
        cfg = RunConfig({"seed": "55"})
        assert _resolve_seed(self.FakeArgs(seed=7), cfg) == 7

    def test_config_beats_env(self, monkeypatch):
        monkeypatch.setenv("SRDE_SEED", "99")
        assert _resolve_seed(self.FakeArgs(), RunConfig({"seed": "55"})) == 55

    def test_env_fallback(self, monkeypatch):
        monkeypatch.setenv("SRDE_SEED", "99")
        assert _resolve_seed(self.FakeArgs(), RunConfig()) == 99

    def test_default_zero(self, monkeypatch):
        monkeypatch.delenv("SRDE_SEED", raising=False)
        assert _resolve_seed(self.FakeArgs(), RunConfig()) == 0

    def test_bad_env_value(self, monkeypatch):
        monkeypatch.setenv("SRDE_SEED", "not-a-number")
        with pytest.raises(CliError):
            _resolve_seed(self.FakeArgs(), RunConfig())
