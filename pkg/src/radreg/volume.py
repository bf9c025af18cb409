"""Volume and image containers with file I/O and resampling.

Voxel/world convention: the center of voxel (i, j, k) sits at
``origin + (index + 0.5) * spacing`` per axis, so a volume physically
occupies the box [origin, origin + dims * spacing].  Volume data is kept
as a C-contiguous float array indexed ``data[z, y, x]`` (x fastest in
memory, matching the on-disk raw layout).

On-disk formats:

* Volumes: MetaImage-style text header (``.mhd``) plus a little-endian raw
  file, element types MET_SHORT and MET_FLOAT.
* Images: 32-bit float raw with a one-line text sidecar
  (``width height pixel_spacing``) for lossless exchange, and 16-bit
  binary PGM (P5, maxval 65535) for visualization.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import RadregError


class MalformedHeader(RadregError):
    pass


class DimensionMismatch(RadregError):
    pass


class UnsupportedElementType(RadregError):
    pass


@dataclass(frozen=True)
class Volume:
    """3D scalar attenuation grid with spacing and origin metadata."""

    data: np.ndarray  # (nz, ny, nx) float
    spacing: tuple    # (sx, sy, sz) mm/voxel
    origin: tuple     # world position of the low corner, mm

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError("volume data must be a 3D array")
        if not np.all(np.isfinite(data)):
            raise ValueError("volume values must be finite")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError("spacing must be three positive values")
        if len(origin) != 3:
            raise ValueError("origin must be a 3-vector")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> tuple:
        """(nx, ny, nz) voxel counts."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def extent(self) -> np.ndarray:
        """Physical size per axis in mm."""
        return np.array(self.dims, dtype=float) * np.array(self.spacing)

    @property
    def center(self) -> np.ndarray:
        """World position of the volume center in mm."""
        return np.array(self.origin) + self.extent / 2.0


@dataclass(frozen=True)
class Image2D:
    """2D scalar image with an isotropic pixel spacing in mm."""

    data: np.ndarray  # (height, width) float
    pixel_spacing: float

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValueError("image data must be a 2D array")
        if not np.all(np.isfinite(data)):
            raise ValueError("image values must be finite")
        if not self.pixel_spacing > 0:
            raise ValueError("pixel_spacing must be positive")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "pixel_spacing", float(self.pixel_spacing))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


_ELEMENT_DTYPES = {
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}


def save_volume(vol: Volume, path, element_type: str = "MET_FLOAT") -> None:
    """Write an .mhd header plus raw little-endian data file."""
    if element_type not in _ELEMENT_DTYPES:
        raise UnsupportedElementType(f"unsupported element type {element_type!r}")
    path = str(path)
    base, ext = os.path.splitext(path)
    if ext.lower() != ".mhd":
        base = path
        path = path + ".mhd"
    raw_name = os.path.basename(base) + ".raw"
    raw_path = os.path.join(os.path.dirname(path), raw_name)
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    ox, oy, oz = vol.origin
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("NDims = 3\n")
        fh.write(f"DimSize = {nx} {ny} {nz}\n")
        fh.write(f"ElementSpacing = {sx:.17g} {sy:.17g} {sz:.17g}\n")
        fh.write(f"Offset = {ox:.17g} {oy:.17g} {oz:.17g}\n")
        fh.write(f"ElementType = {element_type}\n")
        fh.write("ElementByteOrderMSB = False\n")
        fh.write(f"ElementDataFile = {raw_name}\n")
    vol.data.astype(_ELEMENT_DTYPES[element_type]).tofile(raw_path)


def load_volume(path) -> Volume:
    """Read an .mhd header and its raw data file."""
    path = str(path)
    header = {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if "=" not in line:
                    raise MalformedHeader(f"{path}: line without '=': {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                header[key] = value
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"{path}: not a text header") from exc

    for key in ("NDims", "DimSize", "ElementSpacing", "ElementType", "ElementDataFile"):
        if key not in header:
            raise MalformedHeader(f"{path}: missing header key {key}")
    if header["NDims"] != "3":
        raise MalformedHeader(f"{path}: NDims must be 3")
    if header.get("ElementByteOrderMSB", "False") != "False":
        raise MalformedHeader(f"{path}: only little-endian data supported")
    try:
        dims = tuple(int(v) for v in header["DimSize"].split())
        spacing = tuple(float(v) for v in header["ElementSpacing"].split())
        origin = tuple(float(v) for v in header.get("Offset", "0 0 0").split())
    except ValueError as exc:
        raise MalformedHeader(f"{path}: bad numeric field") from exc
    if len(dims) != 3 or len(spacing) != 3 or len(origin) != 3:
        raise MalformedHeader(f"{path}: DimSize/ElementSpacing/Offset must have 3 entries")

    etype = header["ElementType"]
    if etype not in _ELEMENT_DTYPES:
        raise UnsupportedElementType(f"{path}: element type {etype!r} not supported")
    dtype = _ELEMENT_DTYPES[etype]

    raw_path = os.path.join(os.path.dirname(path), header["ElementDataFile"])
    raw = np.fromfile(raw_path, dtype=dtype)
    nx, ny, nz = dims
    if raw.size != nx * ny * nz:
        raise DimensionMismatch(
            f"{raw_path}: {raw.size} elements but DimSize implies {nx * ny * nz}"
        )
    data = raw.astype(np.float64).reshape(nz, ny, nx)
    return Volume(data, spacing, origin)


def trilinear_sample(vol: Volume, p_world) -> float:
    """Trilinearly interpolate the volume at one world point (mm).

    Points outside the voxel-center bounding box return 0.
    """
    return float(trilinear_sample_many(vol, np.asarray(p_world, dtype=float)[None, :])[0])


def trilinear_sample_many(vol: Volume, points: np.ndarray) -> np.ndarray:
    """Vectorized trilinear interpolation at (N, 3) world points."""
    points = np.asarray(points, dtype=float)
    spacing = np.array(vol.spacing)
    origin = np.array(vol.origin)
    u = (points - origin) / spacing - 0.5  # continuous voxel-center index
    nx, ny, nz = vol.dims
    hi = np.array([nx - 1, ny - 1, nz - 1], dtype=float)
    inside = np.all((u >= 0.0) & (u <= hi), axis=1)

    uc = np.clip(u, 0.0, hi)
    i0 = np.minimum(uc.astype(np.int64), np.maximum(np.array([nx, ny, nz]) - 2, 0))
    f = uc - i0
    ix, iy, iz = i0[:, 0], i0[:, 1], i0[:, 2]
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    ix1 = np.minimum(ix + 1, nx - 1)
    iy1 = np.minimum(iy + 1, ny - 1)
    iz1 = np.minimum(iz + 1, nz - 1)

    d = vol.data
    c00 = d[iz, iy, ix] * (1 - fx) + d[iz, iy, ix1] * fx
    c10 = d[iz, iy1, ix] * (1 - fx) + d[iz, iy1, ix1] * fx
    c01 = d[iz1, iy, ix] * (1 - fx) + d[iz1, iy, ix1] * fx
    c11 = d[iz1, iy1, ix] * (1 - fx) + d[iz1, iy1, ix1] * fx
    c0 = c00 * (1 - fy) + c10 * fy
    c1 = c01 * (1 - fy) + c11 * fy
    values = c0 * (1 - fz) + c1 * fz
    return np.where(inside, values, 0.0)


def resample_isotropic(vol: Volume, target_mm: float) -> Volume:
    """Resample to an isotropic grid of ``target_mm`` spacing.

    Output dims are the rounded physical extent divided by the target
    spacing (at least 1 per axis); values are trilinear samples at output
    voxel centers, 0 outside the input support.
    """
    if not target_mm > 0:
        raise ValueError("target spacing must be positive")
    extent = vol.extent
    out_dims = np.maximum(np.rint(extent / target_mm).astype(int), 1)  # (nx, ny, nz)
    nx, ny, nz = (int(n) for n in out_dims)
    origin = np.array(vol.origin)

    zi, yi, xi = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    idx = np.stack([xi.ravel(), yi.ravel(), zi.ravel()], axis=1).astype(float)
    pts = origin + (idx + 0.5) * target_mm
    values = trilinear_sample_many(vol, pts).reshape(nz, ny, nx)
    return Volume(values, (target_mm, target_mm, target_mm), vol.origin)


def crop_or_pad_centered(vol: Volume, target_dims) -> Volume:
    """Center-crop or zero-pad to ``target_dims`` (nx, ny, nz).

    The origin is shifted so retained voxels keep their world positions.
    """
    target = tuple(int(n) for n in target_dims)
    if len(target) != 3 or any(n < 1 for n in target):
        raise ValueError("target dims must be three positive integers")
    src = vol.dims
    offset = [(t - s) // 2 for t, s in zip(target, src)]  # per axis x,y,z

    tx, ty, tz = target
    out = np.zeros((tz, ty, tx), dtype=vol.data.dtype)

    # overlapping index ranges, axis order x,y,z
    src_lo, src_hi, dst_lo, dst_hi = [], [], [], []
    for s, t, off in zip(src, target, offset):
        sl = max(0, -off)
        dl = max(0, off)
        n = min(s - sl, t - dl)
        src_lo.append(sl)
        src_hi.append(sl + n)
        dst_lo.append(dl)
        dst_hi.append(dl + n)
    if all(hi > lo for lo, hi in zip(src_lo, src_hi)):
        out[dst_lo[2]:dst_hi[2], dst_lo[1]:dst_hi[1], dst_lo[0]:dst_hi[0]] = vol.data[
            src_lo[2]:src_hi[2], src_lo[1]:src_hi[1], src_lo[0]:src_hi[0]
        ]
    new_origin = tuple(
        o - off * s for o, off, s in zip(vol.origin, offset, vol.spacing)
    )
    return Volume(out, vol.spacing, new_origin)


def save_image_raw(img: Image2D, path) -> None:
    """Write 32-bit float raw data plus a ``width height pixel_spacing`` sidecar."""
    path = str(path)
    img.data.astype("<f4").tofile(path)
    with open(path + ".txt", "w", encoding="utf-8") as fh:
        fh.write(f"{img.width} {img.height} {img.pixel_spacing:.17g}\n")


def load_image_raw(path) -> Image2D:
    path = str(path)
    try:
        with open(path + ".txt", "r", encoding="utf-8") as fh:
            parts = fh.readline().split()
    except FileNotFoundError:
        raise MalformedHeader(f"{path}.txt: image sidecar not found")
    if len(parts) != 3:
        raise MalformedHeader(f"{path}.txt: expected 'width height pixel_spacing'")
    w, h = int(parts[0]), int(parts[1])
    spacing = float(parts[2])
    data = np.fromfile(path, dtype="<f4")
    if data.size != w * h:
        raise DimensionMismatch(f"{path}: {data.size} pixels but sidecar implies {w * h}")
    return Image2D(data.astype(np.float64).reshape(h, w), spacing)


def save_image_pgm(img: Image2D, path) -> None:
    """Write a 16-bit P5 PGM, intensity range scaled to 0..65535."""
    data = img.data
    lo = data.min()
    hi = data.max()
    if hi > lo:
        scaled = (data - lo) / (hi - lo) * 65535.0
    else:
        scaled = np.zeros_like(data)
    pixels = np.rint(scaled).astype(">u2")  # PGM samples are big-endian
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.width} {img.height}\n65535\n".encode("ascii"))
        fh.write(pixels.tobytes())


def load_image(path) -> Image2D:
    """Load an image written by save_image_raw (by data-file path)."""
    return load_image_raw(path)
