import numpy as np
import pytest

from hnradiomics.volume import ImageVolume, RoiMask


def make_pair(data, mask, spacing=(1.0, 1.0, 1.0), modality="PET"):
    return ImageVolume(np.asarray(data, dtype=np.float64), spacing, modality), RoiMask(np.asarray(mask), spacing)


def ball_mask(shape, centre, radius):
    idx = np.indices(shape).astype(float)
    d2 = sum((idx[a] - centre[a]) ** 2 for a in range(3))
    return d2 <= radius ** 2


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
