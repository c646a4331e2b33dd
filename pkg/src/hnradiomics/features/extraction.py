"""Full radiomic feature extraction over the voxel-size x quantizer x gray-level grid."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..quantization import Algorithm, QuantizerSpec, quantize
from ..volume import ImageVolume, ResampleSpec, RoiMask, check_aligned, crop_to_roi, resample_isotropic
from .intensity import INTENSITY_FEATURES, IntensityConfig, intensity_features
from .shape import SHAPE_FEATURES, shape_features
from .texture import TEXTURE_FEATURES, build_matrices, texture_features

VOXEL_SIZES = (1.0, 2.0, 3.0, 4.0, 5.0)
ALGORITHMS = (Algorithm.EQUAL_PROBABILITY, Algorithm.UNIFORM)
GRAY_LEVELS = (8, 16, 32, 64)


@dataclass(frozen=True)
class ExtractionParams:
    voxel_size_mm: float
    quantizer: QuantizerSpec

    @property
    def tag(self):
        vs = self.voxel_size_mm
        vs_txt = f"{int(vs)}" if float(vs).is_integer() else f"{vs:g}".replace(".", "p")
        return f"vs{vs_txt}_{self.quantizer.algorithm.tag}_ng{self.quantizer.levels}"


def full_grid():
    """The 40 texture extraction settings (5 voxel sizes x 2 quantizers x 4 level counts)."""
    return [
        ExtractionParams(vs, QuantizerSpec(alg, ng))
        for vs in VOXEL_SIZES for alg in ALGORITHMS for ng in GRAY_LEVELS
    ]


@dataclass(frozen=True)
class ExtractionConfig:
    intensity: IntensityConfig = IntensityConfig()
    glcm_weighting: str = "inverse"
    crop_margin: int = 2

    def manifest(self):
        return {
            "glcm_distance_weighting": self.glcm_weighting,
            "glrlm_distance_weighting": "none",
            "inactive_fraction_of_max": self.intensity.inactive_fraction,
            "getu_exponent": self.intensity.getu_exponent,
            "csh_thresholds": self.intensity.csh_thresholds,
            "suv_peak_sphere_cm3": 1.0,
            "resample_crop_margin_voxels": self.crop_margin,
            "interpolation": "trilinear intensities, nearest-neighbour mask",
            "ngtdm_coarseness_sentinel": 1e6,
        }


@dataclass
class FeatureVector:
    names: list
    values: np.ndarray
    provenance: list
    degenerate: set = field(default_factory=set)

    def as_dict(self):
        return dict(zip(self.names, self.values.tolist()))


def feature_name(modality, family, name, params: ExtractionParams | None = None):
    base = f"{modality}_{family}_{name}"
    return base if params is None else f"{base}__{params.tag}"


def extract_modality(vol: ImageVolume, mask: RoiMask, grid=None, config: ExtractionConfig = ExtractionConfig(),
                     modality=None) -> FeatureVector:
    """10 intensity + 5 shape + 40 texture features per grid entry for one image."""
    check_aligned(vol, mask)
    grid = full_grid() if grid is None else list(grid)
    modality = modality or vol.modality or "IMG"
    names, values, prov = [], [], []
    degenerate = set()

    inten = intensity_features(vol, mask, config.intensity)
    for key, val in inten.as_dict().items():
        names.append(feature_name(modality, "INTENSITY", key))
        values.append(val)
        prov.append({"family": "INTENSITY", "name": key})
    degenerate.update(feature_name(modality, "INTENSITY", k) for k in inten.degenerate)

    shape = shape_features(mask)
    for key, val in shape.as_dict().items():
        names.append(feature_name(modality, "SHAPE", key))
        values.append(val)
        prov.append({"family": "SHAPE", "name": key})
    degenerate.update(feature_name(modality, "SHAPE", k) for k in shape.degenerate)

    cropped_vol, cropped_mask = crop_to_roi(vol, mask, config.crop_margin)
    resampled = {}
    for params in grid:
        vs = params.voxel_size_mm
        if vs not in resampled:
            resampled[vs] = resample_isotropic(cropped_vol, cropped_mask, ResampleSpec(vs))
        rvol, rmask = resampled[vs]
        q = quantize(rvol, rmask, params.quantizer)
        tex = texture_features(build_matrices(q, config.glcm_weighting))
        for family, key in TEXTURE_FEATURES:
            full = f"{family}_{key}"
            names.append(feature_name(modality, family, key, params))
            values.append(tex.values[full])
            prov.append({
                "family": family,
                "name": key,
                "voxel_size_mm": vs,
                "algorithm": params.quantizer.algorithm.value,
                "levels": params.quantizer.levels,
            })
            if full in tex.degenerate:
                degenerate.add(names[-1])
    return FeatureVector(names, np.asarray(values, dtype=np.float64), prov, degenerate)


def extract_all(pet: ImageVolume, ct: ImageVolume, mask: RoiMask, grid=None,
                config: ExtractionConfig = ExtractionConfig(), ct_mask: RoiMask | None = None) -> FeatureVector:
    """PET features followed by CT features; ``ct_mask`` overrides ``mask`` for CT when the grids differ."""
    grid = full_grid() if grid is None else list(grid)
    a = extract_modality(pet, mask, grid, config, "PET")
    b = extract_modality(ct, mask if ct_mask is None else ct_mask, grid, config, "CT")
    return FeatureVector(
        a.names + b.names,
        np.concatenate([a.values, b.values]),
        a.provenance + b.provenance,
        a.degenerate | b.degenerate,
    )


def feature_count(n_params):
    return len(INTENSITY_FEATURES) + len(SHAPE_FEATURES) + len(TEXTURE_FEATURES) * n_params
