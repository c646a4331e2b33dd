"""Volume and ROI data model, RVF file I/O, isotropic resampling and ROI cropping.

Arrays are held with shape ``(nx, ny, nz)`` and indexed ``[x, y, z]``; on disk
the payload is written x-fastest (Fortran order).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateRoiError,
    NonFiniteError,
    SizeMismatchError,
    ValidationError,
    VolumeFormatError,
)

MODALITIES = ("PET", "CT")

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _as_triple(values, name, cast=float):
    values = tuple(cast(v) for v in values)
    if len(values) != 3:
        raise ValidationError(f"{name} must have 3 components, got {len(values)}")
    return values


@dataclass(frozen=True, eq=False)
class ImageVolume:
    """Scalar 3D image (SUV for PET, HU for CT) with physical voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple
    modality: str | None = None

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if data.dtype.kind not in "fiu":
            raise ValidationError(f"volume data must be numeric, got {data.dtype}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("volume contains non-finite values")
        spacing = _as_triple(self.spacing, "spacing")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValidationError(f"spacing must be positive, got {spacing}")
        if self.modality is not None and self.modality not in MODALITIES:
            raise ValidationError(f"unknown modality {self.modality!r}")
        data = data.view()
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @property
    def voxel_volume(self):
        return float(np.prod(self.spacing))


@dataclass(frozen=True, eq=False)
class RoiMask:
    """Binary mask aligned with an :class:`ImageVolume`."""

    data: np.ndarray
    spacing: tuple

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"mask data must be a non-empty 3D array, got shape {data.shape}")
        if data.dtype != bool:
            if not np.all(np.isin(data, (0, 1))):
                raise ValidationError("mask values must be 0 or 1")
            data = data.astype(bool)
        else:
            data = data.view()
        spacing = _as_triple(self.spacing, "spacing")
        if not all(s > 0 and math.isfinite(s) for s in spacing):
            raise ValidationError(f"spacing must be positive, got {spacing}")
        if not data.any():
            raise DegenerateRoiError("mask has no set voxels")
        data.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return tuple(int(n) for n in self.data.shape)

    @property
    def count(self):
        return int(self.data.sum())


def check_aligned(vol: ImageVolume, mask: RoiMask):
    if vol.dims != mask.dims:
        raise ValidationError(f"volume dims {vol.dims} do not match mask dims {mask.dims}")
    if not np.allclose(vol.spacing, mask.spacing, rtol=1e-9, atol=0):
        raise ValidationError(f"volume spacing {vol.spacing} does not match mask spacing {mask.spacing}")


@dataclass(frozen=True)
class ResampleSpec:
    target_spacing: float

    def __post_init__(self):
        s = float(self.target_spacing)
        if not (s > 0 and math.isfinite(s)):
            raise ValidationError(f"target spacing must be positive, got {self.target_spacing}")
        object.__setattr__(self, "target_spacing", s)


# --------------------------------------------------------------------------- I/O

def _encode_header(dims, spacing, dtype, modality=None):
    lines = [
        "dims = " + " ".join(str(int(n)) for n in dims),
        "spacing = " + " ".join(repr(float(s)) for s in spacing),
        f"dtype = {dtype}",
        "order = little",
    ]
    if modality is not None:
        lines.append(f"modality = {modality}")
    return ("\n".join(lines) + "\n\n").encode("utf-8")


def _parse_header(raw: bytes):
    end = raw.find(b"\n\n")
    if end < 0:
        raise VolumeFormatError("header is not terminated by a blank line")
    try:
        text = raw[:end].decode("utf-8")
    except UnicodeDecodeError as exc:
        raise VolumeFormatError("header is not valid UTF-8") from exc
    fields = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise VolumeFormatError(f"malformed header line {line!r}")
        fields[key.strip()] = value.strip()
    for key in ("dims", "spacing", "dtype", "order"):
        if key not in fields:
            raise VolumeFormatError(f"header is missing {key!r}")
    try:
        dims = _as_triple(fields["dims"].split(), "dims", int)
        spacing = _as_triple(fields["spacing"].split(), "spacing", float)
    except ValueError as exc:
        raise VolumeFormatError(f"cannot parse header: {exc}") from exc
    if min(dims) < 1:
        raise VolumeFormatError(f"dims must be positive, got {dims}")
    if fields["dtype"] not in _DTYPES:
        raise VolumeFormatError(f"unsupported dtype {fields['dtype']!r}")
    if fields["order"] != "little":
        raise VolumeFormatError(f"unsupported byte order {fields['order']!r}")
    return fields, dims, spacing, end + 2


def read_rvf(path):
    """Decode an RVF file into ``(array, spacing, header_fields)``."""
    raw = Path(path).read_bytes()
    fields, dims, spacing, offset = _parse_header(raw)
    dtype = _DTYPES[fields["dtype"]]
    payload = raw[offset:]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise SizeMismatchError(
            f"payload has {len(payload)} bytes, dims {dims} with dtype {fields['dtype']} need {expected}"
        )
    flat = np.frombuffer(payload, dtype=dtype)
    return flat.reshape(dims, order="F"), spacing, fields


def load_volume(path) -> ImageVolume:
    data, spacing, fields = read_rvf(path)
    if data.dtype.kind == "f" and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{path}: volume contains non-finite values")
    return ImageVolume(np.array(data), spacing, fields.get("modality"))


def load_mask(path) -> RoiMask:
    data, spacing, fields = read_rvf(path)
    if fields["dtype"] != "u8":
        raise VolumeFormatError(f"{path}: masks must use dtype u8")
    return RoiMask(np.array(data), spacing)


def save_volume(vol: ImageVolume, path):
    data = np.asarray(vol.data, dtype=_DTYPES["f32"])
    header = _encode_header(vol.dims, vol.spacing, "f32", vol.modality)
    Path(path).write_bytes(header + data.tobytes(order="F"))


def save_mask(mask: RoiMask, path):
    data = np.asarray(mask.data, dtype=_DTYPES["u8"])
    header = _encode_header(mask.dims, mask.spacing, "u8")
    Path(path).write_bytes(header + data.tobytes(order="F"))


# -------------------------------------------------------------------- resampling

def _sample_coordinates(n_in, spacing_in, target):
    n_out = max(1, math.ceil(round(n_in * spacing_in / target, 9)))
    # voxel centers of the target grid, expressed in input index space
    coords = (np.arange(n_out) + 0.5) * (target / spacing_in) - 0.5
    return np.clip(coords, 0.0, n_in - 1.0)


def _linear_along(a, coords, axis):
    n = a.shape[axis]
    lo = np.floor(coords).astype(np.intp)
    lo = np.minimum(lo, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = coords - lo
    shape = [1, 1, 1]
    shape[axis] = len(coords)
    frac = frac.reshape(shape)
    a_lo = np.take(a, lo, axis=axis)
    a_hi = np.take(a, hi, axis=axis)
    return a_lo + frac * (a_hi - a_lo)


def _nearest_along(a, coords, axis):
    idx = np.minimum(np.floor(coords + 0.5).astype(np.intp), a.shape[axis] - 1)
    return np.take(a, idx, axis=axis)


def resample_isotropic(vol: ImageVolume, mask: RoiMask, spec: ResampleSpec):
    """Resample an image/mask pair onto an isotropic grid.

    Intensities are interpolated trilinearly (separable linear passes), the mask
    by nearest neighbour followed by a 0.5 threshold. The target grid shares the
    input origin; out-of-range sample positions clamp to the edge voxels.
    """
    check_aligned(vol, mask)
    s = spec.target_spacing
    data = np.asarray(vol.data, dtype=np.float64)
    m = mask.data.astype(np.float64)
    for axis in range(3):
        coords = _sample_coordinates(vol.dims[axis], vol.spacing[axis], s)
        data = _linear_along(data, coords, axis)
        m = _nearest_along(m, coords, axis)
    m = m >= 0.5
    if not m.any():
        raise DegenerateRoiError(f"resampling to {s} mm leaves an empty ROI")
    return ImageVolume(data, (s, s, s), vol.modality), RoiMask(m, (s, s, s))


def roi_bounding_box(mask: RoiMask, margin=0):
    """Return slices of the set-voxel bounding box dilated by ``margin`` and clamped."""
    if margin < 0:
        raise ValidationError("margin must be non-negative")
    slices = []
    for axis in range(3):
        other = tuple(a for a in range(3) if a != axis)
        hit = np.flatnonzero(mask.data.any(axis=other))
        lo = max(0, int(hit[0]) - margin)
        hi = min(mask.dims[axis], int(hit[-1]) + 1 + margin)
        slices.append(slice(lo, hi))
    return tuple(slices)


def crop_to_roi(vol: ImageVolume, mask: RoiMask, margin: int = 0):
    check_aligned(vol, mask)
    box = roi_bounding_box(mask, margin)
    return (
        ImageVolume(np.array(vol.data[box]), vol.spacing, vol.modality),
        RoiMask(np.array(mask.data[box]), mask.spacing),
    )
