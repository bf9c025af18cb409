import numpy as np
import pytest

from radreg.geometry import CameraIntrinsics, Pose6
from radreg.phantom import make_case

# desk-scale camera: same physical detector as the default C-arm, rendered
# at 128x128 so module tests stay fast
SMALL_CAMERA = CameraIntrinsics(
    sdd=1011.7, pixel_spacing=0.19959 * 8, detector_width=128, detector_height=128
)

GT_POSE = Pose6(2.0, -3.0, 5.0, 4.0, -6.0, 10.0)


@pytest.fixture(scope="session")
def small_case():
    """64^3 phantom with a 128x128 native fixed image."""
    return make_case(SMALL_CAMERA, GT_POSE, dims=(64, 64, 64), spacing=3.0, seed=1)


@pytest.fixture(scope="session")
def small_camera():
    return SMALL_CAMERA
