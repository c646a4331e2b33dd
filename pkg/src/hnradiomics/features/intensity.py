"""First-order intensity features of an ROI (SUV-oriented names; computed for CT too)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..volume import ImageVolume, RoiMask, check_aligned

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

INTENSITY_FEATURES = (
    "Variance", "Skewness", "Kurtosis", "SUVmax", "SUVpeak", "SUVmean",
    "AUC_CSH", "TLG", "PercentInactive", "gETU",
)

# radius of a 1 cm^3 sphere, in mm
PEAK_RADIUS_MM = 10.0 * (3.0 / (4.0 * math.pi)) ** (1.0 / 3.0)


@dataclass(frozen=True)
class IntensityConfig:
    inactive_fraction: float = 0.4
    getu_exponent: float = 0.25
    csh_thresholds: int = 1000
    histogram_bins: int = 100


@dataclass(frozen=True)
class IntensityFeatures:
    variance: float
    skewness: float
    kurtosis: float
    suv_max: float
    suv_peak: float
    suv_mean: float
    auc_csh: float
    tlg: float
    pct_inactive: float
    getu: float
    degenerate: frozenset = field(default_factory=frozenset)

    def as_dict(self):
        return dict(zip(INTENSITY_FEATURES, (
            self.variance, self.skewness, self.kurtosis, self.suv_max, self.suv_peak,
            self.suv_mean, self.auc_csh, self.tlg, self.pct_inactive, self.getu,
        )))


def central_moments(values):
    """Population variance, skewness and (non-excess) kurtosis; ``None`` for the shape terms when undefined."""
    mean = values.mean()
    dev = values - mean
    m2 = float(np.mean(dev ** 2))
    if values.size < 2 or m2 == 0.0:
        return m2, None, None
    m3 = float(np.mean(dev ** 3))
    m4 = float(np.mean(dev ** 4))
    return m2, m3 / m2 ** 1.5, m4 / m2 ** 2


def intensity_histogram(values, bins=100):
    """Fixed-count histogram of ROI intensities (counts, edges)."""
    return np.histogram(values, bins=bins)


def suv_peak(vol: ImageVolume, mask: RoiMask, radius_mm=PEAK_RADIUS_MM):
    data = np.asarray(vol.data, dtype=np.float64)
    roi_vals = np.where(mask.data, data, -np.inf)
    centre = np.unravel_index(int(np.argmax(roi_vals)), data.shape)
    reach = [int(math.floor(radius_mm / s)) for s in vol.spacing]
    lo = [max(0, c - r) for c, r in zip(centre, reach)]
    hi = [min(n, c + r + 1) for c, r, n in zip(centre, reach, data.shape)]
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    grids = np.meshgrid(*[(np.arange(a, b) - c) * s for a, b, c, s in zip(lo, hi, centre, vol.spacing)],
                        indexing="ij")
    inside = (grids[0] ** 2 + grids[1] ** 2 + grids[2] ** 2 <= radius_mm ** 2) & mask.data[box]
    return float(data[box][inside].mean())


def cumulative_histogram_auc(values, n_thresholds=1000):
    """Area under the fraction-of-volume-above-threshold curve, thresholds in units of the max."""
    vmax = values.max()
    t = np.linspace(0.0, 1.0, n_thresholds)
    sorted_vals = np.sort(values)
    above = values.size - np.searchsorted(sorted_vals, t * vmax, side="left")
    frac = above / values.size
    return float(_trapezoid(frac, t))


def intensity_features(vol: ImageVolume, mask: RoiMask, config: IntensityConfig = IntensityConfig()):
    check_aligned(vol, mask)
    values = np.asarray(vol.data, dtype=np.float64)[mask.data]
    degenerate = set()
    variance, skew, kurt = central_moments(values)
    if skew is None:
        skew = kurt = 0.0
        degenerate.update(("Skewness", "Kurtosis"))
    volume_cm3 = values.size * vol.voxel_volume / 1000.0
    vmax = float(values.max())
    vmean = float(values.mean())
    a = config.getu_exponent
    clipped = np.clip(values, 0.0, None)
    getu = float(np.mean(clipped ** a) ** (1.0 / a)) * volume_cm3
    return IntensityFeatures(
        variance=variance,
        skewness=skew,
        kurtosis=kurt,
        suv_max=vmax,
        suv_peak=suv_peak(vol, mask),
        suv_mean=vmean,
        auc_csh=cumulative_histogram_auc(values, config.csh_thresholds),
        tlg=vmean * volume_cm3,
        pct_inactive=float(np.mean(values < config.inactive_fraction * vmax)),
        getu=getu,
        degenerate=frozenset(degenerate),
    )
