"""Registration error metrics and the batch experiment runner.

mTRE is the mean 3D distance between landmark positions under the
ground-truth and estimated poses.  Per-axis rotation/translation errors
are absolute parameter differences; the total rotation error is the
geodesic angle of the relative rotation and the total translation error
the Euclidean norm of the translation difference.

Percentiles use the nearest-rank definition (value at 1-based index
ceil(p/100 * N) of the sorted list), which keeps every reported number an
actual observed value.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import RadregError
from .geometry import (
    CameraIntrinsics,
    LandmarkSet,
    Pose6,
    apply_transform,
    pose_to_transform,
    sample_initial_offset,
)
from .pipeline import RegistrationConfig, RegistrationResult, register
from .volume import Image2D, Volume


class EmptyLandmarks(RadregError):
    pass


class EmptyInput(RadregError):
    pass


def mtre(gt: Pose6, est: Pose6, landmarks: LandmarkSet, pivot=(0.0, 0.0, 0.0)) -> float:
    """Mean 3D landmark distance between the two poses, in mm."""
    if len(landmarks) < 1:
        raise EmptyLandmarks("mTRE needs at least one landmark")
    t_gt = pose_to_transform(gt, pivot=pivot)
    t_est = pose_to_transform(est, pivot=pivot)
    d = apply_transform(t_gt, landmarks.points) - apply_transform(t_est, landmarks.points)
    return float(np.mean(np.linalg.norm(d, axis=1)))


@dataclass(frozen=True)
class PoseErrors:
    """Table-style error components: totals plus per-axis absolutes."""

    total_rot: float
    drx: float
    dry: float
    drz: float
    total_trans: float
    dtx: float
    dty: float
    dtz: float

    def as_tuple(self) -> tuple:
        return (
            self.total_rot, self.drx, self.dry, self.drz,
            self.total_trans, self.dtx, self.dty, self.dtz,
        )


def pose_errors(gt: Pose6, est: Pose6) -> PoseErrors:
    r_gt = pose_to_transform(gt).r
    r_est = pose_to_transform(est).r
    rel = r_gt @ r_est.T
    cos_angle = (np.trace(rel) - 1.0) / 2.0
    total_rot = math.degrees(math.acos(min(1.0, max(-1.0, cos_angle))))
    dt = np.array([gt.tx - est.tx, gt.ty - est.ty, gt.tz - est.tz])
    return PoseErrors(
        total_rot=total_rot,
        drx=abs(gt.rx - est.rx),
        dry=abs(gt.ry - est.ry),
        drz=abs(gt.rz - est.rz),
        total_trans=float(np.linalg.norm(dt)),
        dtx=abs(dt[0]),
        dty=abs(dt[1]),
        dtz=abs(dt[2]),
    )


def percentiles(values: Sequence[float], ps: Sequence[float]) -> list:
    """Nearest-rank percentiles of ``values`` for each p in [0, 100]."""
    values = list(values)
    if not values:
        raise EmptyInput("cannot take percentiles of an empty list")
    if any(p < 0 or p > 100 for p in ps):
        raise ValueError("percentile levels must lie in [0, 100]")
    ordered = sorted(values)
    n = len(ordered)
    out = []
    for p in ps:
        rank = max(1, math.ceil(p / 100.0 * n))
        out.append(ordered[rank - 1])
    return out


@dataclass(frozen=True)
class TrialResult:
    trial: int
    offset_seed: int
    register_seed: int
    initial_pose: Pose6
    final_pose: Pose6
    initial_mtre: float
    final_mtre: float
    initial_errors: PoseErrors
    final_errors: PoseErrors
    coarse_termination: str
    fine_termination: str
    wall_time_s: float
    registration: Optional[RegistrationResult] = None


@dataclass(frozen=True)
class ExperimentReport:
    gt_pose: Pose6
    trials: tuple  # TrialResult
    sigma_rot_deg: float
    sigma_trans_mm: float
    seed: int

    def initial_mtres(self) -> list:
        return [t.initial_mtre for t in self.trials]

    def final_mtres(self) -> list:
        return [t.final_mtre for t in self.trials]


def _trial_seeds(seed: int, trial: int) -> tuple:
    base = seed * 1_000_003 + 7 * trial
    return base, base + 3  # offset-sampling seed, registration seed


def _run_trial(fixed, vol, intr, gt, landmarks, config, seed,
               sigma_rot_deg, sigma_trans_mm, trial, keep_registration) -> TrialResult:
    pivot = tuple(vol.center)
    offset_seed, reg_seed = _trial_seeds(seed, trial)
    offset = sample_initial_offset(offset_seed, sigma_rot_deg, sigma_trans_mm)
    init = Pose6.from_vector(gt.as_vector() + offset.as_vector())
    t0 = time.perf_counter()
    result = register(fixed, vol, intr, init,
                      RegistrationConfig(coarse=config.coarse, fine=config.fine,
                                         seed=reg_seed, workers=config.workers))
    wall = time.perf_counter() - t0
    return TrialResult(
        trial=trial,
        offset_seed=offset_seed,
        register_seed=reg_seed,
        initial_pose=init,
        final_pose=result.final_pose,
        initial_mtre=mtre(gt, init, landmarks, pivot=pivot),
        final_mtre=mtre(gt, result.final_pose, landmarks, pivot=pivot),
        initial_errors=pose_errors(gt, init),
        final_errors=pose_errors(gt, result.final_pose),
        coarse_termination=result.coarse.termination.value,
        fine_termination=result.fine.termination.value,
        wall_time_s=wall,
        registration=result if keep_registration else None,
    )


_WORKER_CTX: dict = {}


def _trial_worker_init(fixed, vol, intr, gt, landmarks, config,
                       seed, sigma_rot_deg, sigma_trans_mm):
    # trials already saturate the machine at the process level; a worker's
    # render kernels must not spin up their own thread pools
    import numba

    try:
        numba.set_num_threads(1)
    except ValueError:
        pass
    _WORKER_CTX.update(
        fixed=fixed, vol=vol, intr=intr, gt=gt, landmarks=landmarks,
        config=config, seed=seed, sigma_rot_deg=sigma_rot_deg,
        sigma_trans_mm=sigma_trans_mm,
    )


def _trial_worker(trial: int) -> TrialResult:
    c = _WORKER_CTX
    return _run_trial(
        c["fixed"], c["vol"], c["intr"], c["gt"], c["landmarks"], c["config"],
        c["seed"], c["sigma_rot_deg"], c["sigma_trans_mm"], trial,
        keep_registration=False,
    )


def run_experiment(fixed: Image2D, vol: Volume, intr: CameraIntrinsics,
                   gt: Pose6, landmarks: LandmarkSet, trials: int,
                   config: RegistrationConfig, seed: int = 0,
                   sigma_rot_deg: float = 20.0, sigma_trans_mm: float = 30.0,
                   keep_registrations: bool = False,
                   parallel_trials: Optional[int] = None,
                   progress=None) -> ExperimentReport:
    """Repeat registration from randomly offset initial poses.

    Each trial composes a sampled offset with the ground-truth pose
    (componentwise), registers, and records initial/final errors.  Trial
    seeds derive deterministically from the experiment seed and trial
    index, so results do not depend on execution order;
    ``parallel_trials`` > 1 runs trials in worker processes.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    if parallel_trials and parallel_trials > 1:
        import multiprocessing as mp
        import os
        from concurrent.futures import ProcessPoolExecutor

        ctx = mp.get_context("spawn")
        # children read this at numba import, before the initializer runs
        saved = os.environ.get("NUMBA_NUM_THREADS")
        os.environ["NUMBA_NUM_THREADS"] = "1"
        try:
            with ProcessPoolExecutor(
                max_workers=parallel_trials,
                mp_context=ctx,
                initializer=_trial_worker_init,
                initargs=(fixed, vol, intr, gt, landmarks, config,
                          seed, sigma_rot_deg, sigma_trans_mm),
            ) as pool:
                rows = []
                for row in pool.map(_trial_worker, range(trials)):
                    rows.append(row)
                    if progress is not None:
                        progress(row)
        finally:
            if saved is None:
                os.environ.pop("NUMBA_NUM_THREADS", None)
            else:
                os.environ["NUMBA_NUM_THREADS"] = saved
    else:
        rows = []
        for i in range(trials):
            row = _run_trial(fixed, vol, intr, gt, landmarks, config, seed,
                             sigma_rot_deg, sigma_trans_mm, i, keep_registrations)
            rows.append(row)
            if progress is not None:
                progress(row)
    return ExperimentReport(
        gt_pose=gt,
        trials=tuple(rows),
        sigma_rot_deg=sigma_rot_deg,
        sigma_trans_mm=sigma_trans_mm,
        seed=seed,
    )


# --- report serialization ----------------------------------------------------

def _pose_fields(pose: Pose6) -> list:
    return [pose.rx, pose.ry, pose.rz, pose.tx, pose.ty, pose.tz]


CSV_HEADER = (
    "trial,offset_seed,register_seed,"
    "init_rx,init_ry,init_rz,init_tx,init_ty,init_tz,"
    "final_rx,final_ry,final_rz,final_tx,final_ty,final_tz,"
    "initial_mtre,final_mtre,"
    "rot_total,rot_x,rot_y,rot_z,trans_total,trans_x,trans_y,trans_z,"
    "coarse_termination,fine_termination"
)


def format_trials_csv(report: ExperimentReport) -> str:
    """Deterministic per-trial CSV (timing lives in a separate file)."""
    lines = [CSV_HEADER]
    for t in report.trials:
        vals = (
            _pose_fields(t.initial_pose)
            + _pose_fields(t.final_pose)
            + [t.initial_mtre, t.final_mtre]
            + list(t.final_errors.as_tuple())
        )
        nums = ",".join(f"{v:.9g}" for v in vals)
        lines.append(
            f"{t.trial},{t.offset_seed},{t.register_seed},{nums},"
            f"{t.coarse_termination},{t.fine_termination}"
        )
    return "\n".join(lines) + "\n"


def format_timing_csv(report: ExperimentReport) -> str:
    lines = ["trial,wall_time_s"]
    for t in report.trials:
        lines.append(f"{t.trial},{t.wall_time_s:.3f}")
    return "\n".join(lines) + "\n"


def _mean_std(values) -> str:
    arr = np.asarray(values, dtype=float)
    return f"{arr.mean():.2f}+-{arr.std():.2f}"


def _median(values) -> float:
    return percentiles(values, [50])[0]


def format_summary(report: ExperimentReport) -> str:
    """Text table mirroring the percentile/error-column layout:
    mTRE at the 95/75/50th percentiles, then total and per-axis rotation
    and translation errors, for the initial and registered poses."""
    cols = ["mTRE95", "mTRE75", "mTRE50", "rotate.", "rx", "ry", "rz",
            "trans.", "tx", "ty", "tz"]

    def error_matrix(selector):
        return np.array([selector(t).as_tuple() for t in report.trials])

    def block(label, mtres, errors):
        p95, p75, p50 = percentiles(mtres, [95, 75, 50])
        mean_row = [f"{p95:.2f}", f"{p75:.2f}", f"{p50:.2f}"]
        median_row = ["-", "-", f"{_median(mtres):.2f}"]
        for j in range(8):
            mean_row.append(_mean_std(errors[:, j]))
            median_row.append(f"{_median(list(errors[:, j])):.2f}")
        return [(f"{label} mean", mean_row), (f"{label} median", median_row)]

    rows = []
    rows += block("Initial", report.initial_mtres(),
                  error_matrix(lambda t: t.initial_errors))
    rows += block("Result", report.final_mtres(),
                  error_matrix(lambda t: t.final_errors))

    widths = [max(len(c), max(len(r[1][i]) for r in rows)) for i, c in enumerate(cols)]
    label_w = max(len(r[0]) for r in rows)
    lines = [
        f"trials = {len(report.trials)}",
        f"offsets = N(0, {report.sigma_rot_deg:g} deg) rotations, "
        f"N(0, {report.sigma_trans_mm:g} mm) translations",
        f"seed = {report.seed}",
        "",
        " " * label_w + "  " + "  ".join(c.rjust(w) for c, w in zip(cols, widths)),
    ]
    for label, row in rows:
        lines.append(label.ljust(label_w) + "  "
                     + "  ".join(v.rjust(w) for v, w in zip(row, widths)))
    lines.append("")
    lines.append("mTRE percentiles are nearest-rank order statistics (mm); rotation")
    lines.append("errors in degrees, translation errors in mm.  Medians are reported")
    lines.append("alongside means because large-offset failures skew the means.")
    return "\n".join(lines) + "\n"
