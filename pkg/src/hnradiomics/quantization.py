"""Gray-level discretization of ROI intensities (Uniform and Equal-probability)."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError
from .volume import ImageVolume, RoiMask, check_aligned


class Algorithm(str, Enum):
    UNIFORM = "Uniform"
    EQUAL_PROBABILITY = "EqualProbability"

    @property
    def tag(self):
        return "unif" if self is Algorithm.UNIFORM else "equal"


@dataclass(frozen=True)
class QuantizerSpec:
    algorithm: Algorithm
    levels: int

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if int(self.levels) != self.levels or self.levels < 2:
            raise ValidationError(f"number of gray levels must be an integer >= 2, got {self.levels}")
        object.__setattr__(self, "levels", int(self.levels))


@dataclass(frozen=True, eq=False)
class QuantizedRoi:
    """Gray-level labels in ``[1, levels]`` inside the ROI and 0 outside."""

    labels: np.ndarray
    levels: int
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValidationError("quantized labels must be a 3D array")
        if labels.dtype.kind not in "iu":
            raise ValidationError("quantized labels must be integers")
        roi = labels > 0
        if not roi.any():
            raise ValidationError("quantized ROI is empty")
        if labels.min() < 0 or labels.max() > self.levels:
            raise ValidationError(f"labels must lie in [0, {self.levels}]")
        labels = labels.astype(np.int32, copy=True)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @property
    def roi(self):
        return self.labels > 0

    @property
    def voxel_count(self):
        return int(np.count_nonzero(self.labels))


def uniform_levels(values, levels):
    vmin = values.min()
    vmax = values.max()
    if vmax <= vmin:
        return np.ones(values.shape, dtype=np.int32)
    q = np.floor(levels * (values - vmin) / (vmax - vmin)).astype(np.int64) + 1
    return np.minimum(q, levels).astype(np.int32)


def equal_probability_levels(values, levels):
    """Rank-based equalization; a block of tied values takes the level of its lowest rank."""
    n = values.size
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    # lowest 0-based rank of each tied block
    new_block = np.empty(n, dtype=bool)
    new_block[0] = True
    new_block[1:] = sorted_vals[1:] != sorted_vals[:-1]
    block_start = np.maximum.accumulate(np.where(new_block, np.arange(n), 0))
    q_sorted = (block_start * levels) // n + 1
    q = np.empty(n, dtype=np.int32)
    q[order] = q_sorted
    return q


def quantize(vol: ImageVolume, mask: RoiMask, spec: QuantizerSpec) -> QuantizedRoi:
    check_aligned(vol, mask)
    values = np.asarray(vol.data, dtype=np.float64)[mask.data]
    if spec.algorithm is Algorithm.UNIFORM:
        q = uniform_levels(values, spec.levels)
    else:
        q = equal_probability_levels(values, spec.levels)
    labels = np.zeros(mask.dims, dtype=np.int32)
    labels[mask.data] = q
    return QuantizedRoi(labels, spec.levels, vol.spacing)
