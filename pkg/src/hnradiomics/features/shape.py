"""Morphological features of a binary ROI."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from ..volume import RoiMask

SHAPE_FEATURES = ("Volume", "Size", "Solidity", "Eccentricity", "Compactness")


@dataclass(frozen=True)
class ShapeFeatures:
    volume_mm3: float
    size_max_diameter_mm: float
    solidity: float
    eccentricity: float
    compactness: float
    degenerate: frozenset = field(default_factory=frozenset)

    def as_dict(self):
        return dict(zip(SHAPE_FEATURES, (
            self.volume_mm3, self.size_max_diameter_mm, self.solidity,
            self.eccentricity, self.compactness,
        )))


def voxel_centres(mask: RoiMask):
    return np.argwhere(mask.data) * np.asarray(mask.spacing)


def surface_area(mask: RoiMask):
    """Area of voxel faces separating ROI from non-ROI voxels (mm^2)."""
    padded = np.pad(mask.data, 1)
    sx, sy, sz = mask.spacing
    face = (sy * sz, sx * sz, sx * sy)
    area = 0.0
    for axis in range(3):
        area += face[axis] * np.count_nonzero(np.diff(padded, axis=axis))
    return float(area)


def _corner_points(mask: RoiMask):
    # corners of surface voxels suffice for the hull of the voxel union
    data = mask.data
    padded = np.pad(data, 1)
    interior = data.copy()
    for axis in range(3):
        for step in (-1, 1):
            interior &= np.roll(padded, step, axis=axis)[1:-1, 1:-1, 1:-1]
    idx = np.argwhere(data & ~interior)
    offsets = np.array([(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)])
    corners = (idx[:, None, :] + offsets[None, :, :]).reshape(-1, 3)
    return np.unique(corners, axis=0) * np.asarray(mask.spacing)


def max_diameter(points):
    if len(points) < 2:
        return 0.0
    if len(points) > 64:
        try:
            points = points[ConvexHull(points).vertices]
        except QhullError:
            pass
    return float(pdist(points).max())


def shape_features(mask: RoiMask) -> ShapeFeatures:
    """Volume, maximum diameter, solidity, eccentricity and compactness.

    Solidity compares the voxel volume with the convex hull of the voxel
    corners, so it lies in (0, 1] and equals 1 for boxes. The ``degenerate``
    set names features whose definition collapses (fewer than four
    non-coplanar voxel centres, or zero spatial covariance).
    """
    degenerate = set()
    centres = voxel_centres(mask)
    volume = centres.shape[0] * float(np.prod(mask.spacing))

    if centres.shape[0] < 4 or np.linalg.matrix_rank(centres - centres.mean(axis=0)) < 3:
        degenerate.add("Solidity")
    hull_volume = ConvexHull(_corner_points(mask)).volume
    solidity = min(1.0, volume / hull_volume)

    cov = np.cov(centres.T, bias=True) if centres.shape[0] > 1 else np.zeros((3, 3))
    eig = np.sort(np.linalg.eigvalsh(cov))[::-1]
    if eig[0] > 0:
        eccentricity = math.sqrt(max(0.0, 1.0 - max(eig[2], 0.0) / eig[0]))
    else:
        eccentricity = 0.0
        degenerate.add("Eccentricity")

    area = surface_area(mask)
    compactness = volume / (math.sqrt(math.pi) * area ** 1.5)
    return ShapeFeatures(
        volume_mm3=volume,
        size_max_diameter_mm=max_diameter(centres),
        solidity=solidity,
        eccentricity=eccentricity,
        compactness=compactness,
        degenerate=frozenset(degenerate),
    )
