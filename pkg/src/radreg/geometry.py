"""Rigid pose representation and C-arm projection geometry.

Conventions used throughout the package:

* A pose is parameterized by three fixed-axis Euler rotations in degrees
  (applied X, then Y, then Z, i.e. R = Rz @ Ry @ Rx) and three translations
  in millimeters.
* Rotations act about a pivot point (normally the volume center), so that
  rotation and translation parameters stay decoupled.  The pivot is folded
  into the translation part of the matrix form, so applying a transform is
  always plain ``r @ p + t``.
* The camera frame has the X-ray source at the origin, the central ray
  along +z and the detector plane at z = sdd.  Detector axes are aligned
  with image axes and the principal point is the detector center, i.e.
  pixel ((w-1)/2, (h-1)/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import RadregError


class NonpositiveDepth(RadregError):
    """A point to be projected lies at or behind the X-ray source."""


@dataclass(frozen=True)
class Pose6:
    """Rigid pose: rotations in degrees, translations in mm."""

    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0

    def __post_init__(self):
        for name in ("rx", "ry", "rz", "tx", "ty", "tz"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Pose6.{name} must be finite")

    def as_vector(self) -> np.ndarray:
        return np.array([self.rx, self.ry, self.rz, self.tx, self.ty, self.tz], dtype=float)

    @staticmethod
    def from_vector(v) -> "Pose6":
        v = np.asarray(v, dtype=float)
        if v.shape != (6,):
            raise ValueError("pose vector must have 6 components")
        return Pose6(*(float(x) for x in v))


@dataclass(frozen=True)
class RigidTransform:
    """Rotation matrix plus translation; apply as r @ p + t."""

    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        t = np.asarray(self.t, dtype=float)
        if r.shape != (3, 3) or t.shape != (3,):
            raise ValueError("RigidTransform needs a 3x3 rotation and a 3-vector")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-9:
            raise ValueError("rotation matrix is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("rotation matrix determinant is not 1")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)

    def inverse(self) -> "RigidTransform":
        rinv = self.r.T
        return RigidTransform(rinv, -rinv @ self.t)


@dataclass(frozen=True)
class CameraIntrinsics:
    """C-arm pinhole geometry with an isotropic detector pixel pitch."""

    sdd: float
    pixel_spacing: float
    detector_width: int
    detector_height: int

    def __post_init__(self):
        if not (self.sdd > 0 and self.pixel_spacing > 0):
            raise ValueError("sdd and pixel_spacing must be positive")
        if self.detector_width < 2 or self.detector_height < 2:
            raise ValueError("detector dimensions must be at least 2 pixels")


# Perlove PLX118F mobile C-arm constants used as CLI defaults.
DEFAULT_CAMERA = CameraIntrinsics(
    sdd=1011.7, pixel_spacing=0.19959, detector_width=1024, detector_height=1024
)


@dataclass(frozen=True)
class LandmarkSet:
    """Labelled anatomical 3D points in mm."""

    ids: tuple
    points: np.ndarray  # (L, 3)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
            raise ValueError("LandmarkSet needs at least one 3D point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        if len(self.ids) != pts.shape[0]:
            raise ValueError("one id per point required")
        object.__setattr__(self, "ids", tuple(str(i) for i in self.ids))
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]


def _rotation_matrix(rx_deg: float, ry_deg: float, rz_deg: float) -> np.ndarray:
    ax, ay, az = (math.radians(a) for a in (rx_deg, ry_deg, rz_deg))
    cx, sx = math.cos(ax), math.sin(ax)
    cy, sy = math.cos(ay), math.sin(ay)
    cz, sz = math.cos(az), math.sin(az)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return rz @ ry @ rx


def pose_to_transform(pose: Pose6, pivot=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Matrix form of a pose, rotating about ``pivot``.

    The pivot is folded into the translation: the returned transform maps
    p to r @ (p - pivot) + pivot + (tx, ty, tz).
    """
    r = _rotation_matrix(pose.rx, pose.ry, pose.rz)
    pivot = np.asarray(pivot, dtype=float)
    t = np.array([pose.tx, pose.ty, pose.tz]) + pivot - r @ pivot
    return RigidTransform(r, t)


def apply_transform(transform: RigidTransform, p) -> np.ndarray:
    """Apply a rigid transform to one 3-point or an (N, 3) array of points."""
    p = np.asarray(p, dtype=float)
    return p @ transform.r.T + transform.t


def sample_initial_offset(rng_seed: int, sigma_rot_deg: float, sigma_trans_mm: float) -> Pose6:
    """Draw a random pose offset, N(0, sigma_rot) per rotation axis and
    N(0, sigma_trans) per translation axis.  Deterministic per seed."""
    if sigma_rot_deg < 0 or sigma_trans_mm < 0:
        raise ValueError("sigmas must be nonnegative")
    rng = np.random.default_rng(rng_seed)
    rot = rng.normal(0.0, sigma_rot_deg, size=3) if sigma_rot_deg > 0 else np.zeros(3)
    trans = rng.normal(0.0, sigma_trans_mm, size=3) if sigma_trans_mm > 0 else np.zeros(3)
    return Pose6(rot[0], rot[1], rot[2], trans[0], trans[1], trans[2])


def project_point(intr: CameraIntrinsics, transform: RigidTransform, p) -> tuple[float, float]:
    """Perspective-project a transformed 3D point onto the detector.

    Returns fractional pixel coordinates (u, v); the detector center maps to
    ((w-1)/2, (h-1)/2).  Raises NonpositiveDepth when the transformed point
    is at or behind the source plane.
    """
    q = apply_transform(transform, np.asarray(p, dtype=float))
    depth = q[2]
    if depth <= 0:
        raise NonpositiveDepth(f"point depth {depth:.6g} mm is at or behind the source")
    scale = intr.sdd / depth
    u = q[0] * scale / intr.pixel_spacing + (intr.detector_width - 1) / 2.0
    v = q[1] * scale / intr.pixel_spacing + (intr.detector_height - 1) / 2.0
    return float(u), float(v)


def load_pose(path) -> Pose6:
    """Read a pose file: one line ``rx ry rz tx ty tz`` (degrees, mm)."""
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise RadregError(f"pose file {path}: expected 6 values, got {len(parts)}")
            return Pose6(*(float(x) for x in parts))
    raise RadregError(f"pose file {path}: no pose line found")


def save_pose(pose: Pose6, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(
            f"{pose.rx:.17g} {pose.ry:.17g} {pose.rz:.17g} "
            f"{pose.tx:.17g} {pose.ty:.17g} {pose.tz:.17g}\n"
        )


def load_landmarks(path) -> LandmarkSet:
    """Read a landmark file: ``id,x,y,z`` per line, ``#`` starts a comment."""
    ids = []
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 4:
                raise RadregError(f"landmark file {path}:{lineno}: expected id,x,y,z")
            ids.append(parts[0])
            pts.append([float(parts[1]), float(parts[2]), float(parts[3])])
    if not ids:
        raise RadregError(f"landmark file {path}: no landmarks found")
    return LandmarkSet(tuple(ids), np.array(pts))


def save_landmarks(landmarks: LandmarkSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for lid, (x, y, z) in zip(landmarks.ids, landmarks.points):
            fh.write(f"{lid},{x:.17g},{y:.17g},{z:.17g}\n")
