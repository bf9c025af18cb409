"""Synthetic vertebra-like test volume with ground-truth landmarks.

The phantom stacks three box-shaped "vertebral bodies" along the image
vertical axis, drills a cylindrical canal through them, and attaches
lateral process fins plus one posterior knob.  The fin pattern differs per
body, which makes the object asymmetric under every axis-aligned 90-degree
rotation and under left-right flip, so a pose is identifiable from a
single projection (up to the usual depth ambiguity).

Attenuation is binary (bone = 1, background = 0); geometry scales with the
volume extent, with mild per-seed size jitter; everything is deterministic
for a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .drr import render_drr
from .errors import RadregError
from .geometry import CameraIntrinsics, LandmarkSet, Pose6
from .volume import Image2D, Volume

DEFAULT_CENTER_MM = (0.0, 0.0, 505.85)  # half the default source-detector distance


class DimsTooSmall(RadregError):
    pass


def make_phantom(dims=(128, 128, 128), spacing=1.5, seed: int = 0,
                 center_mm=DEFAULT_CENTER_MM):
    """Build the phantom volume and its landmark set.

    ``dims`` are voxels per axis (each >= 32), ``spacing`` is isotropic in
    mm, and ``center_mm`` places the volume center in world coordinates
    (the default sits on the central ray of the default camera, halfway to
    the detector).
    """
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 32:
        raise DimsTooSmall(f"phantom needs >= 32 voxels per axis, got {dims}")
    spacing = float(spacing)
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    rng = np.random.default_rng(seed)

    nx, ny, nz = dims
    ext = np.array([nx, ny, nz], dtype=float) * spacing
    scale = float(ext.min())

    def jit(lo=0.95, hi=1.05):
        return rng.uniform(lo, hi)

    # sizes as fractions of the smallest extent, lightly jittered per seed
    body_half = np.array(
        [
            [0.145 * jit(), 0.078 * jit(), 0.115 * jit()],
            [0.150 * jit(), 0.080 * jit(), 0.110 * jit()],
            [0.140 * jit(), 0.076 * jit(), 0.118 * jit()],
        ]
    ) * scale
    body_cy = np.array([-0.20 * jit(), 0.0, 0.20 * jit()]) * scale
    canal_r = 0.036 * jit() * scale
    canal_cz = 0.062 * scale
    fin_half = 0.021 * scale
    fin_len = np.array([0.090, 0.100, 0.0625, 0.083]) * scale  # b0+x, b1+x, b1-x, b2-x
    knob_len = 0.0625 * scale
    knob_half = 0.026 * scale
    shift = rng.uniform(-0.015, 0.015, size=3) * scale  # off-center asymmetry

    # voxel centers in volume-centered coordinates
    cx = (np.arange(nx) + 0.5) * spacing - ext[0] / 2 - shift[0]
    cy = (np.arange(ny) + 0.5) * spacing - ext[1] / 2 - shift[1]
    cz = (np.arange(nz) + 0.5) * spacing - ext[2] / 2 - shift[2]
    X = cx[None, None, :]
    Y = cy[None, :, None]
    Z = cz[:, None, None]

    mask = np.zeros((nz, ny, nx), dtype=bool)

    def add_box(cx0, cy0, cz0, hx, hy, hz):
        mask_box = (
            (np.abs(X - cx0) <= hx)
            & (np.abs(Y - cy0) <= hy)
            & (np.abs(Z - cz0) <= hz)
        )
        mask[mask_box] = True

    for b in range(3):
        add_box(0.0, body_cy[b], 0.0, *body_half[b])

    # lateral process fins; the per-body pattern breaks all mirror symmetries
    add_box(body_half[0][0] + fin_len[0] / 2, body_cy[0], 0.0, fin_len[0] / 2, fin_half, fin_half)
    add_box(body_half[1][0] + fin_len[1] / 2, body_cy[1], 0.012 * scale, fin_len[1] / 2, fin_half, fin_half)
    add_box(-body_half[1][0] - fin_len[2] / 2, body_cy[1], 0.012 * scale, fin_len[2] / 2, fin_half, fin_half)
    add_box(-body_half[2][0] - fin_len[3] / 2, body_cy[2], 0.0, fin_len[3] / 2, fin_half, fin_half)
    # posterior knob on the top body
    add_box(0.0, body_cy[2], body_half[2][2] + knob_len / 2, knob_half, knob_half, knob_len / 2)

    # spinal canal: cylinder along y drilled through everything
    canal = (X**2 + (Z - canal_cz) ** 2) <= canal_r**2
    mask &= ~np.broadcast_to(canal, mask.shape)

    data = mask.astype(np.float64)
    origin = tuple(np.asarray(center_mm, dtype=float) - ext / 2)
    vol = Volume(data, (spacing, spacing, spacing), origin)

    inset = 2.0 * spacing  # keep landmark points safely inside the bone
    pts_local = [
        ("body0", (0.0, body_cy[0], -canal_cz)),
        ("body1", (0.0, body_cy[1], -canal_cz)),
        ("body2", (0.0, body_cy[2], -canal_cz)),
        ("fin0_xp", (body_half[0][0] + fin_len[0] - inset, body_cy[0], 0.0)),
        ("fin1_xp", (body_half[1][0] + fin_len[1] - inset, body_cy[1], 0.012 * scale)),
        ("fin1_xm", (-body_half[1][0] - fin_len[2] + inset, body_cy[1], 0.012 * scale)),
        ("fin2_xm", (-body_half[2][0] - fin_len[3] + inset, body_cy[2], 0.0)),
        ("knob2_zp", (0.0, body_cy[2], body_half[2][2] + knob_len - inset)),
        ("corner0", (body_half[0][0] - inset, body_cy[0] - body_half[0][1] + inset,
                     -body_half[0][2] + inset)),
        ("corner2", (-body_half[2][0] + inset, body_cy[2] + body_half[2][1] - inset,
                     body_half[2][2] - inset)),
    ]
    center = np.asarray(center_mm, dtype=float) + shift
    ids = tuple(name for name, _ in pts_local)
    pts = np.array([p for _, p in pts_local]) + center
    landmarks = LandmarkSet(ids, pts)
    return vol, landmarks


@dataclass(frozen=True)
class CaseBundle:
    """Ground-truth bundle for a synthetic registration problem."""

    fixed: Image2D
    volume: Volume
    landmarks: LandmarkSet
    gt_pose: Pose6


def make_case(intr: CameraIntrinsics, gt: Pose6, dims=(128, 128, 128),
              spacing=1.5, seed: int = 0) -> CaseBundle:
    """Phantom plus its fixed radiograph rendered at the native detector
    resolution under the ground-truth pose."""
    vol, landmarks = make_phantom(
        dims=dims, spacing=spacing, seed=seed, center_mm=(0.0, 0.0, intr.sdd / 2.0)
    )
    fixed = render_drr(vol, intr, gt, intr.detector_width, intr.detector_height)
    return CaseBundle(fixed=fixed, volume=vol, landmarks=landmarks, gt_pose=gt)


def is_degenerate(fixed: Image2D, threshold: float = 1e-9) -> bool:
    """True when the rendered image carries no anatomy signal."""
    return bool(fixed.data.max() - fixed.data.min() <= threshold)
