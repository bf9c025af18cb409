"""radreg: rigid 2D/3D registration of a volume to a fixed radiograph.

The toolkit renders digitally reconstructed radiographs from an
attenuation volume, scores them against the fixed image with normalized
cross-correlation family metrics, and recovers the 6-DoF pose with CMA-ES
in a coarse-to-fine scheme.  A synthetic phantom generator and an
experiment harness provide ground-truth evaluation without clinical data.
"""

from .cmaes import CmaesConfig, CmaesState, Termination, minimize
from .drr import beer_lambert_log, downsample, render_drr
from .evaluation import ExperimentReport, mtre, percentiles, pose_errors, run_experiment
from .geometry import (
    DEFAULT_CAMERA,
    CameraIntrinsics,
    LandmarkSet,
    Pose6,
    RigidTransform,
    apply_transform,
    pose_to_transform,
    project_point,
    sample_initial_offset,
)
from .phantom import CaseBundle, make_case, make_phantom
from .pipeline import (
    RegistrationConfig,
    RegistrationResult,
    StageConfig,
    register,
    register_stage,
    stage_loss,
)
from .similarity import PatchGrid, gc, lncc, make_patch_grid, mncc, ncc, sobel_gradients
from .volume import (
    Image2D,
    Volume,
    crop_or_pad_centered,
    load_image_raw,
    load_volume,
    resample_isotropic,
    save_image_pgm,
    save_image_raw,
    save_volume,
    trilinear_sample,
)

__version__ = "0.1.0"
