"""Image similarity measures: global, patch-local and multi-scale
normalized cross-correlation, and gradient correlation.

All statistics use the population standard deviation.  NCC is computed as

    mean(a_c * b_c) / sqrt(mean(a_c^2) * mean(b_c^2))

with a_c, b_c the mean-subtracted images; dividing by the square root of
the product (rather than the product of square roots) makes the
self-similarity of an image with itself exactly 1.0 in floating point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import RadregError
from .volume import Image2D

VARIANCE_EPS = 1e-12  # std at or below this counts as constant


class DimMismatch(RadregError):
    pass


class ZeroVariance(RadregError):
    pass


class PatchOutOfBounds(RadregError):
    pass


class ImageTooSmall(RadregError):
    pass


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping square patches of radius r tiling an image."""

    radius: int
    centers: tuple  # ((px, py), ...) pixel coordinates

    def __len__(self) -> int:
        return len(self.centers)


def _as_array(img) -> np.ndarray:
    if isinstance(img, Image2D):
        return img.data
    return np.asarray(img, dtype=float)


def _ncc_arrays(a: np.ndarray, b: np.ndarray, reject_constant: bool) -> float:
    ac = a - a.mean()
    bc = b - b.mean()
    va = np.mean(ac * ac)
    vb = np.mean(bc * bc)
    if va <= VARIANCE_EPS**2 or vb <= VARIANCE_EPS**2:
        if reject_constant:
            raise ZeroVariance("constant image has no normalized correlation")
        return 0.0
    return float(np.mean(ac * bc) / np.sqrt(va * vb))


def ncc(a, b) -> float:
    """Global normalized cross-correlation, in [-1, 1].

    Raises ZeroVariance when either image is constant and DimMismatch when
    shapes differ.
    """
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise DimMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    return _ncc_arrays(a, b, reject_constant=True)


def lncc(a, b, px: int, py: int, r: int) -> float:
    """Patch NCC for the square window [px-r, px+r] x [py-r, py+r].

    Returns 0 when either patch is constant.  px indexes columns, py rows.
    """
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise DimMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    if px - r < 0 or py - r < 0 or px + r >= w or py + r >= h:
        raise PatchOutOfBounds(f"patch at ({px},{py}) radius {r} exceeds {w}x{h}")
    sl = np.s_[py - r:py + r + 1, px - r:px + r + 1]
    return _ncc_arrays(a[sl], b[sl], reject_constant=False)


def make_patch_grid(width: int, height: int, r: int) -> PatchGrid:
    """Tile the image with non-overlapping (2r+1)-sided patches.

    The grid is centered; partial edge tiles are dropped, so
    K = floor(w/(2r+1)) * floor(h/(2r+1)).
    """
    side = 2 * r + 1
    if width < side or height < side:
        raise ImageTooSmall(f"{width}x{height} cannot hold a {side}x{side} patch")
    nx = width // side
    ny = height // side
    mx = (width - nx * side) // 2
    my = (height - ny * side) // 2
    centers = tuple(
        (mx + ix * side + r, my + iy * side + r)
        for iy in range(ny)
        for ix in range(nx)
    )
    return PatchGrid(radius=r, centers=centers)


def mncc(a, b, lam: float = 1.0, r: int = 6) -> float:
    """Multi-scale NCC: global NCC plus lam times the sum of patch NCCs
    over the centered non-overlapping grid."""
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise DimMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    h, w = a.shape
    total = _ncc_arrays(a, b, reject_constant=True)
    if lam == 0.0:
        return total
    grid = make_patch_grid(w, h, r)
    patch_sum = 0.0
    for px, py in grid.centers:
        patch_sum += lncc(a, b, px, py, r)
    return total + lam * patch_sum


def sobel_gradients(img):
    """3x3 Sobel derivatives along columns (gi) and rows (gj).

    Borders are replicate-padded so outputs keep the input size.
    """
    a = _as_array(img)
    if a.shape[0] < 3 or a.shape[1] < 3:
        raise ImageTooSmall("Sobel gradients need at least a 3x3 image")
    gi = ndimage.sobel(a, axis=1, mode="nearest")
    gj = ndimage.sobel(a, axis=0, mode="nearest")
    return gi, gj


def gc(a, b) -> float:
    """Gradient correlation: mean of the NCCs between Sobel gradient
    images along each axis.  A gradient pair with a constant operand
    contributes 0."""
    a = _as_array(a)
    b = _as_array(b)
    if a.shape != b.shape:
        raise DimMismatch(f"image shapes differ: {a.shape} vs {b.shape}")
    gia, gja = sobel_gradients(a)
    gib, gjb = sobel_gradients(b)
    term_i = _ncc_arrays(gia, gib, reject_constant=False)
    term_j = _ncc_arrays(gja, gjb, reject_constant=False)
    return (term_i + term_j) / 2.0
