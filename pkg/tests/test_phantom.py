import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from radreg.evaluation import mtre
from radreg.geometry import Pose6
from radreg.phantom import DimsTooSmall, is_degenerate, make_case, make_phantom
from radreg.pipeline import StageConfig, _fixed_for_stage, stage_loss

from conftest import SMALL_CAMERA


class TestMakePhantom:
    def test_deterministic_per_seed(self):
        a, lma = make_phantom(dims=(48, 48, 48), spacing=2.0, seed=5)
        b, lmb = make_phantom(dims=(48, 48, 48), spacing=2.0, seed=5)
        assert np.array_equal(a.data, b.data)
        assert np.array_equal(lma.points, lmb.points)

    def test_seeds_differ(self):
        a, _ = make_phantom(dims=(48, 48, 48), spacing=2.0, seed=5)
        b, _ = make_phantom(dims=(48, 48, 48), spacing=2.0, seed=6)
        assert not np.array_equal(a.data, b.data)

    def test_binary_attenuation_and_fill_fraction(self):
        vol, _ = make_phantom(dims=(128, 128, 128), spacing=1.5, seed=0)
        assert vol.data.max() == 1.0
        assert vol.data.min() == 0.0
        assert set(np.unique(vol.data)) == {0.0, 1.0}
        frac = (vol.data != 0).mean()
        assert 0.02 < frac < 0.30

    def test_landmarks_inside_bone(self):
        for seed in range(4):
            vol, lms = make_phantom(dims=(96, 96, 96), spacing=2.0, seed=seed)
            origin = np.array(vol.origin)
            spacing = np.array(vol.spacing)
            for p in lms.points:
                idx = np.floor((p - origin) / spacing).astype(int)
                assert vol.data[idx[2], idx[1], idx[0]] == 1.0

    def test_at_least_nine_landmarks(self):
        _, lms = make_phantom(dims=(64, 64, 64), spacing=3.0, seed=2)
        assert len(lms) >= 9

    @pytest.mark.filterwarnings("ignore:Gimbal lock")
    def test_no_axis_aligned_rotation_symmetry(self):
        vol, lms = make_phantom(dims=(64, 64, 64), spacing=3.0, seed=0)
        identity = Pose6()
        pivot = tuple(vol.center)
        count = 0
        for rot in Rotation.create_group("O"):  # 24 proper cube rotations
            angles = rot.as_euler("xyz", degrees=True)
            pose = Pose6(angles[0], angles[1], angles[2], 0, 0, 0)
            if abs(angles[0]) + abs(angles[1]) + abs(angles[2]) < 1e-9:
                continue
            assert mtre(identity, pose, lms, pivot=pivot) > 5.0
            count += 1
        assert count == 23

    def test_no_left_right_flip_symmetry(self):
        vol, lms = make_phantom(dims=(64, 64, 64), spacing=3.0, seed=0)
        center = vol.center
        mirrored = lms.points.copy()
        mirrored[:, 0] = 2 * center[0] - mirrored[:, 0]
        for rot in Rotation.create_group("O"):
            rotated = rot.apply(lms.points - center) + center
            mean_d = np.mean(np.linalg.norm(rotated - mirrored, axis=1))
            assert mean_d > 5.0

    def test_dims_too_small(self):
        with pytest.raises(DimsTooSmall):
            make_phantom(dims=(16, 64, 64), spacing=2.0, seed=0)


class TestMakeCase:
    def test_fixed_image_is_informative(self, small_case):
        assert not is_degenerate(small_case.fixed)
        assert small_case.fixed.data.max() > 1.0

    def test_fixed_matches_camera_dims(self, small_case):
        assert small_case.fixed.width == SMALL_CAMERA.detector_width
        assert small_case.fixed.height == SMALL_CAMERA.detector_height

    def test_far_translation_is_degenerate(self):
        case = make_case(SMALL_CAMERA, Pose6(0, 0, 0, 500.0, 0, 0),
                         dims=(48, 48, 48), spacing=3.0, seed=0)
        assert is_degenerate(case.fixed)

    def test_in_plane_loss_sweeps_have_minimum_at_gt(self, small_case):
        # identifiability oracle: sweep one axis at a time through gt
        stage = StageConfig(resolution=(32, 32), metric="mncc", patch_radius=3,
                            sigma0=1.0)
        fixed = _fixed_for_stage(small_case.fixed, stage)
        gt = small_case.gt_pose
        sweeps = {
            "rz": np.linspace(-20, 20, 41),
            "tx": np.linspace(-30, 30, 41),
            "ty": np.linspace(-30, 30, 41),
        }
        for axis, deltas in sweeps.items():
            losses = []
            for d in deltas:
                kw = dict(rx=gt.rx, ry=gt.ry, rz=gt.rz, tx=gt.tx, ty=gt.ty, tz=gt.tz)
                kw[axis] += d
                losses.append(stage_loss(fixed, small_case.volume, SMALL_CAMERA,
                                         Pose6(**kw), stage))
            center = len(deltas) // 2
            assert int(np.argmin(losses)) == center, f"{axis} sweep minimum off gt"
