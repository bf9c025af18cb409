import os

import numpy as np
import pytest

from radreg.cli import load_camera, main, save_camera
from radreg.geometry import DEFAULT_CAMERA, Pose6, load_pose, save_pose
from radreg.volume import Image2D, Volume, load_image_raw, load_volume, save_image_raw, save_volume

from conftest import SMALL_CAMERA


@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    """Phantom case generated through the CLI itself."""
    out = tmp_path_factory.mktemp("case")
    camera = out / "small_camera.txt"
    save_camera(SMALL_CAMERA, camera)
    rc = main([
        "phantom", "--dims", "64", "--spacing", "3.0", "--seed", "1",
        "--camera", str(camera), "--out-dir", str(out),
    ])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def reg_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "fast.cfg"
    path.write_text(
        "coarse.resolution = 32\n"
        "coarse.patch_radius = 3\n"
        "coarse.sigma0 = 5\n"
        "coarse.max_evaluations = 150\n"
        "fine.resolution = 128\n"
        "fine.sigma0 = 1.0\n"
        "fine.max_evaluations = 80\n"
    )
    return path


class TestPhantomCommand:
    def test_outputs_exist(self, case_dir):
        for name in ("volume.mhd", "volume.raw", "landmarks.txt", "gt_pose.txt",
                     "fixed.raw", "fixed.raw.txt", "fixed.pgm", "camera.txt"):
            assert (case_dir / name).exists(), name

    def test_camera_round_trip(self, case_dir):
        intr = load_camera(case_dir / "camera.txt")
        assert intr == SMALL_CAMERA

    def test_degenerate_pose_flagged(self, tmp_path, capsys):
        gt = tmp_path / "gt.txt"
        save_pose(Pose6(0, 0, 0, 500.0, 0, 0), gt)
        camera = tmp_path / "cam.txt"
        save_camera(SMALL_CAMERA, camera)
        rc = main([
            "phantom", "--dims", "48", "--spacing", "3.0", "--gt-pose", str(gt),
            "--camera", str(camera), "--out-dir", str(tmp_path / "out"),
        ])
        assert rc == 0
        assert "DegenerateCase" in capsys.readouterr().err


class TestPreprocessCommand:
    def test_defaults_produce_256_cube(self, tmp_path):
        rng = np.random.default_rng(0)
        vol = Volume(rng.random((40, 44, 48)), (2.0, 2.0, 2.0), (0.0, 0.0, 0.0))
        save_volume(vol, tmp_path / "in.mhd")
        rc = main([
            "preprocess", "--in-volume", str(tmp_path / "in.mhd"),
            "--out-volume", str(tmp_path / "out.mhd"),
        ])
        assert rc == 0
        out = load_volume(tmp_path / "out.mhd")
        assert out.dims == (256, 256, 256)
        assert out.spacing == (1.0, 1.0, 1.0)

    def test_idempotent_bytes(self, tmp_path):
        rng = np.random.default_rng(1)
        vol = Volume(rng.random((20, 20, 20)), (1.5, 1.5, 1.5), (0.0, 0.0, 0.0))
        save_volume(vol, tmp_path / "in.mhd")
        args = [
            "preprocess", "--in-volume", str(tmp_path / "in.mhd"),
            "--out-volume", str(tmp_path / "out.mhd"),
            "--spacing", "1.5", "--dims", "32",
        ]
        assert main(args) == 0
        first = (tmp_path / "out.raw").read_bytes()
        assert main(args) == 0
        assert (tmp_path / "out.raw").read_bytes() == first

    def test_missing_input_exits_2(self, tmp_path, capsys):
        rc = main([
            "preprocess", "--in-volume", str(tmp_path / "nope.mhd"),
            "--out-volume", str(tmp_path / "out.mhd"),
        ])
        assert rc == 2
        assert capsys.readouterr().err.strip() != ""


class TestDrrCommand:
    def test_default_camera_is_paper_geometry(self):
        assert DEFAULT_CAMERA.sdd == 1011.7
        assert DEFAULT_CAMERA.pixel_spacing == 0.19959
        assert DEFAULT_CAMERA.detector_width == 1024
        assert DEFAULT_CAMERA.detector_height == 1024

    def test_matches_case_fixed_image(self, case_dir, tmp_path):
        out = tmp_path / "drr.raw"
        rc = main([
            "drr", "--volume", str(case_dir / "volume.mhd"),
            "--camera", str(case_dir / "camera.txt"),
            "--pose", str(case_dir / "gt_pose.txt"),
            "--out", str(out), "--width", "128", "--height", "128",
        ])
        assert rc == 0
        img = load_image_raw(out)
        fixed = load_image_raw(case_dir / "fixed.raw")
        assert np.array_equal(img.data, fixed.data)

    def test_half_resolution_doubles_pixel_spacing(self, case_dir, tmp_path):
        out = tmp_path / "drr64.raw"
        rc = main([
            "drr", "--volume", str(case_dir / "volume.mhd"),
            "--camera", str(case_dir / "camera.txt"),
            "--out", str(out), "--width", "64", "--height", "64",
        ])
        assert rc == 0
        img = load_image_raw(out)
        assert img.pixel_spacing == pytest.approx(SMALL_CAMERA.pixel_spacing * 2)

    def test_pgm_output(self, case_dir, tmp_path):
        out = tmp_path / "drr.pgm"
        rc = main([
            "drr", "--volume", str(case_dir / "volume.mhd"),
            "--camera", str(case_dir / "camera.txt"),
            "--out", str(out), "--width", "64", "--height", "64",
        ])
        assert rc == 0
        assert out.read_bytes().startswith(b"P5\n64 64\n65535\n")


class TestRegisterCommand:
    def test_ground_truth_init_reports_small_error(self, case_dir, reg_config, tmp_path):
        out = tmp_path / "reg"
        rc = main([
            "register",
            "--fixed", str(case_dir / "fixed.raw"),
            "--volume", str(case_dir / "volume.mhd"),
            "--camera", str(case_dir / "camera.txt"),
            "--init-pose", str(case_dir / "gt_pose.txt"),
            "--config", str(reg_config),
            "--landmarks", str(case_dir / "landmarks.txt"),
            "--gt-pose", str(case_dir / "gt_pose.txt"),
            "--out-dir", str(out),
        ])
        assert rc == 0
        report = (out / "report.txt").read_text()
        assert "[evaluation]" in report
        final_mtre = float(
            [l for l in report.splitlines() if l.startswith("final_mtre_mm")][0].split("=")[1]
        )
        assert final_mtre < 0.1
        for name in ("final_pose.txt", "loss_curves.csv", "loss_curves.png",
                     "final_drr.raw", "final_drr.pgm", "timing.txt"):
            assert (out / name).exists(), name

    def test_missing_init_pose_defaults_to_identity(self, case_dir, reg_config, tmp_path):
        out = tmp_path / "reg"
        rc = main([
            "register",
            "--fixed", str(case_dir / "fixed.raw"),
            "--volume", str(case_dir / "volume.mhd"),
            "--camera", str(case_dir / "camera.txt"),
            "--config", str(reg_config),
            "--out-dir", str(out), "--no-figures",
        ])
        assert rc == 0
        report = (out / "report.txt").read_text()
        assert "initial_pose = 0 0 0 0 0 0" in report

    def test_config_echo_records_override(self, case_dir, tmp_path):
        cfg = tmp_path / "cfg.txt"
        cfg.write_text(
            "coarse.resolution = 32\ncoarse.patch_radius = 3\n"
            "coarse.lambda = 0\ncoarse.max_evaluations = 60\n"
            "fine.resolution = 128\nfine.max_evaluations = 40\n"
        )
        out = tmp_path / "reg"
        rc = main([
            "register",
            "--fixed", str(case_dir / "fixed.raw"),
            "--volume", str(case_dir / "volume.mhd"),
            "--camera", str(case_dir / "camera.txt"),
            "--config", str(cfg),
            "--out-dir", str(out), "--no-figures",
        ])
        assert rc == 0
        assert "coarse.lambda = 0" in (out / "report.txt").read_text()


class TestExperimentCommand:
    def run_experiment_cli(self, case_dir, reg_config, out, seed="3"):
        return main([
            "experiment", "--case-dir", str(case_dir),
            "--trials", "2", "--sigma-rot", "2", "--sigma-trans", "4",
            "--seed", seed, "--config", str(reg_config),
            "--out-dir", str(out),
        ])

    def test_outputs_and_reproducibility(self, case_dir, reg_config, tmp_path):
        out1 = tmp_path / "e1"
        out2 = tmp_path / "e2"
        assert self.run_experiment_cli(case_dir, reg_config, out1) == 0
        assert self.run_experiment_cli(case_dir, reg_config, out2) == 0
        assert (out1 / "trials.csv").read_bytes() == (out2 / "trials.csv").read_bytes()
        assert (out1 / "summary.txt").read_bytes() == (out2 / "summary.txt").read_bytes()
        for name in ("trials.csv", "summary.txt", "timing.csv", "mtre_summary.png"):
            assert (out1 / name).exists(), name

    def test_zero_sigma_trials_recover_gt(self, case_dir, reg_config, tmp_path):
        out = tmp_path / "e0"
        rc = main([
            "experiment", "--case-dir", str(case_dir),
            "--trials", "2", "--sigma-rot", "0", "--sigma-trans", "0",
            "--seed", "1", "--config", str(reg_config),
            "--out-dir", str(out), "--no-figures",
        ])
        assert rc == 0
        rows = (out / "trials.csv").read_text().strip().splitlines()[1:]
        for row in rows:
            cols = row.split(",")
            assert float(cols[15]) == 0.0  # initial mtre
            assert float(cols[16]) < 0.1   # final mtre


class TestSimilarityCommand:
    def test_prints_metrics(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        a = Image2D(rng.random((32, 32)), 1.0)
        save_image_raw(a, tmp_path / "a.raw")
        save_image_raw(a, tmp_path / "b.raw")
        rc = main([
            "similarity", "--image-a", str(tmp_path / "a.raw"),
            "--image-b", str(tmp_path / "b.raw"), "--patch-radius", "3",
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "ncc = 1" in out
        assert "gc = 1" in out
        assert "patches =" in out


class TestBenchCommand:
    def test_sphere_bench_writes_report(self, tmp_path, capsys):
        rc = main([
            "bench", "--function", "sphere", "--runs", "2", "--seed", "0",
            "--out-dir", str(tmp_path),
        ])
        assert rc == 0
        out = capsys.readouterr().out
        assert "target 1e-10 reached in 2/2 runs" in out
        assert (tmp_path / "bench.txt").exists()
        assert (tmp_path / "convergence.png").exists()
