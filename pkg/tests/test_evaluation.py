import math

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from radreg.evaluation import (
    EmptyInput,
    ExperimentReport,
    format_summary,
    format_timing_csv,
    format_trials_csv,
    mtre,
    percentiles,
    pose_errors,
    run_experiment,
)
from radreg.geometry import LandmarkSet, Pose6
from radreg.pipeline import RegistrationConfig, StageConfig

from conftest import GT_POSE, SMALL_CAMERA


def random_landmarks(rng, n=8):
    return LandmarkSet(tuple(str(i) for i in range(n)), rng.uniform(-60, 60, (n, 3)))


def random_pose(rng, rot=40.0, trans=50.0):
    return Pose6(*rng.uniform(-rot, rot, 3), *rng.uniform(-trans, trans, 3))


def brute_force_mtre(gt, est, landmarks, pivot=(0.0, 0.0, 0.0)):
    """Independent transform path: scipy rotations and explicit loops."""
    pivot = np.asarray(pivot, dtype=float)
    r_gt = Rotation.from_euler("xyz", [gt.rx, gt.ry, gt.rz], degrees=True).as_matrix()
    r_est = Rotation.from_euler("xyz", [est.rx, est.ry, est.rz], degrees=True).as_matrix()
    total = 0.0
    for p in landmarks.points:
        a = r_gt @ (p - pivot) + pivot + np.array([gt.tx, gt.ty, gt.tz])
        b = r_est @ (p - pivot) + pivot + np.array([est.tx, est.ty, est.tz])
        total += math.dist(a, b)
    return total / len(landmarks)


class TestMtre:
    def test_identical_poses(self):
        rng = np.random.default_rng(0)
        lms = random_landmarks(rng)
        pose = random_pose(rng)
        assert mtre(pose, pose, lms) == 0.0

    def test_pure_translation_is_norm(self):
        rng = np.random.default_rng(1)
        lms = random_landmarks(rng)
        gt = random_pose(rng)
        est = Pose6(gt.rx, gt.ry, gt.rz, gt.tx + 3.0, gt.ty + 4.0, gt.tz)
        assert mtre(gt, est, lms) == pytest.approx(5.0, abs=1e-12)

    def test_rz90_single_landmark(self):
        lms = LandmarkSet(("p",), np.array([[1.0, 0.0, 0.0]]))
        assert mtre(Pose6(), Pose6(0, 0, 90, 0, 0, 0), lms) == pytest.approx(
            math.sqrt(2.0), abs=1e-12
        )

    def test_symmetric(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            lms = random_landmarks(rng)
            a, b = random_pose(rng), random_pose(rng)
            assert mtre(a, b, lms) == pytest.approx(mtre(b, a, lms), abs=1e-12)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            lms = random_landmarks(rng)
            a, b, c = (random_pose(rng) for _ in range(3))
            assert mtre(a, c, lms) <= mtre(a, b, lms) + mtre(b, c, lms) + 1e-9

    def test_left_composition_invariance(self):
        rng = np.random.default_rng(4)
        for _ in range(10):
            lms = random_landmarks(rng)
            gt, est = random_pose(rng), random_pose(rng)
            extra = Rotation.from_euler("xyz", rng.uniform(-60, 60, 3), degrees=True)
            shift = rng.uniform(-30, 30, 3)

            def compose(pose):
                r = Rotation.from_euler(
                    "xyz", [pose.rx, pose.ry, pose.rz], degrees=True
                )
                rot = extra * r
                t_new = extra.apply([pose.tx, pose.ty, pose.tz])[0:3] + shift
                angles = rot.as_euler("xyz", degrees=True)
                return Pose6(*angles, *t_new)

            base = mtre(gt, est, lms)
            composed = mtre(compose(gt), compose(est), lms)
            assert composed == pytest.approx(base, abs=1e-9)

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(100):
            lms = random_landmarks(rng, n=int(rng.integers(1, 12)))
            gt, est = random_pose(rng), random_pose(rng)
            pivot = rng.uniform(-40, 40, 3)
            assert mtre(gt, est, lms, pivot=pivot) == pytest.approx(
                brute_force_mtre(gt, est, lms, pivot=pivot), abs=1e-9
            )

    def test_empty_landmarks_unconstructible(self):
        with pytest.raises(ValueError):
            LandmarkSet((), np.zeros((0, 3)))


class TestPoseErrors:
    def test_identical(self):
        pose = Pose6(1, 2, 3, 4, 5, 6)
        errs = pose_errors(pose, pose)
        assert errs.as_tuple() == (0, 0, 0, 0, 0, 0, 0, 0)

    def test_single_axis_rotation(self):
        gt = Pose6()
        est = Pose6(0, 0, 10, 0, 0, 0)
        errs = pose_errors(gt, est)
        assert errs.drz == 10.0
        assert errs.total_rot == pytest.approx(10.0, abs=1e-9)
        assert errs.drx == 0.0 and errs.dry == 0.0

    def test_translation_pythagoras(self):
        errs = pose_errors(Pose6(), Pose6(0, 0, 0, 3, 4, 0))
        assert errs.total_trans == pytest.approx(5.0, abs=1e-12)
        assert (errs.dtx, errs.dty, errs.dtz) == (3.0, 4.0, 0.0)

    def test_geodesic_against_scipy(self):
        rng = np.random.default_rng(6)
        for _ in range(30):
            gt, est = random_pose(rng), random_pose(rng)
            r_gt = Rotation.from_euler("xyz", [gt.rx, gt.ry, gt.rz], degrees=True)
            r_est = Rotation.from_euler("xyz", [est.rx, est.ry, est.rz], degrees=True)
            expected = math.degrees((r_gt * r_est.inv()).magnitude())
            assert pose_errors(gt, est).total_rot == pytest.approx(expected, abs=1e-9)


class TestPercentiles:
    def test_one_to_hundred(self):
        values = list(range(1, 101))
        assert percentiles(values, [50]) == [50]
        assert percentiles(values, [75]) == [75]
        assert percentiles(values, [95]) == [95]

    def test_single_element(self):
        assert percentiles([7.5], [0, 33, 100]) == [7.5, 7.5, 7.5]

    def test_p100_is_max(self):
        rng = np.random.default_rng(7)
        values = list(rng.random(37))
        assert percentiles(values, [100]) == [max(values)]

    def test_monotone_in_p(self):
        rng = np.random.default_rng(8)
        values = list(rng.random(64))
        ps = list(range(0, 101, 5))
        out = percentiles(values, ps)
        assert out == sorted(out)

    def test_nearest_rank_oracle(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            n = int(rng.integers(1, 1000))
            values = list(rng.normal(size=n))
            p = float(rng.uniform(0, 100))
            ordered = sorted(values)
            rank = max(1, math.ceil(p / 100.0 * n))
            assert percentiles(values, [p]) == [ordered[rank - 1]]

    def test_empty_rejected(self):
        with pytest.raises(EmptyInput):
            percentiles([], [50])

    def test_bad_level_rejected(self):
        with pytest.raises(ValueError):
            percentiles([1.0], [101])


def tiny_config(seed=0):
    return RegistrationConfig(
        coarse=StageConfig(resolution=(32, 32), metric="mncc", patch_radius=3,
                           sigma0=4.0, max_evaluations=120),
        fine=StageConfig(resolution=(128, 128), metric="gc", sigma0=1.0,
                         max_evaluations=60),
        seed=seed,
    )


class TestRunExperiment:
    def test_zero_sigma_trials_start_and_stay_at_gt(self, small_case):
        report = run_experiment(
            small_case.fixed, small_case.volume, SMALL_CAMERA, GT_POSE,
            small_case.landmarks, trials=2, config=tiny_config(), seed=3,
            sigma_rot_deg=0.0, sigma_trans_mm=0.0,
        )
        for t in report.trials:
            assert t.initial_mtre == 0.0
            assert t.final_mtre < 0.1

    def test_summary_self_consistency(self, small_case):
        report = run_experiment(
            small_case.fixed, small_case.volume, SMALL_CAMERA, GT_POSE,
            small_case.landmarks, trials=3, config=tiny_config(), seed=4,
            sigma_rot_deg=2.0, sigma_trans_mm=4.0,
        )
        p95, p75, p50 = percentiles(report.initial_mtres(), [95, 75, 50])
        summary = format_summary(report)
        assert f"{p95:.2f}" in summary
        assert f"{p50:.2f}" in summary
        # report medians equal the nearest-rank 50th percentile of the rows
        med = percentiles(report.final_mtres(), [50])[0]
        assert f"{med:.2f}" in summary

    def test_csv_shape_and_determinism(self, small_case):
        kwargs = dict(
            trials=2, config=tiny_config(), seed=5,
            sigma_rot_deg=2.0, sigma_trans_mm=4.0,
        )
        a = run_experiment(small_case.fixed, small_case.volume, SMALL_CAMERA,
                           GT_POSE, small_case.landmarks, **kwargs)
        b = run_experiment(small_case.fixed, small_case.volume, SMALL_CAMERA,
                           GT_POSE, small_case.landmarks, **kwargs)
        assert format_trials_csv(a) == format_trials_csv(b)
        lines = format_trials_csv(a).strip().splitlines()
        assert len(lines) == 3
        assert len(lines[0].split(",")) == len(lines[1].split(","))
        timing = format_timing_csv(a).strip().splitlines()
        assert timing[0] == "trial,wall_time_s"
        assert len(timing) == 3

    def test_trial_seeds_differ(self, small_case):
        report = run_experiment(
            small_case.fixed, small_case.volume, SMALL_CAMERA, GT_POSE,
            small_case.landmarks, trials=3, config=tiny_config(), seed=6,
            sigma_rot_deg=3.0, sigma_trans_mm=5.0,
        )
        seeds = {t.offset_seed for t in report.trials}
        inits = {t.initial_pose for t in report.trials}
        assert len(seeds) == 3
        assert len(inits) == 3
