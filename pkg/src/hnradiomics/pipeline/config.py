"""Run configuration read from a ``key = value`` text file (``#`` starts a comment)."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

from ..errors import ValidationError
from ..features.extraction import ALGORITHMS, GRAY_LEVELS, VOXEL_SIZES, ExtractionConfig, ExtractionParams
from ..models.forest import WEIGHT_GRID
from ..models.selection import SelectionConfig
from ..quantization import Algorithm, QuantizerSpec

FEATURE_SETS = ("PET", "CT", "PETCT")
OUTCOME_NAMES = ("LR", "DM", "OS")
STRATIFY_MODES = ("two-group", "three-group")
UNIVARIATE_SUBSETS = ("all", "train", "test")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def _algorithms(text):
    return tuple(Algorithm(v.strip()) for v in text.split(",") if v.strip())


def _order(text):
    return None if text.strip().lower() in ("auto", "none", "") else int(text)


@dataclass(frozen=True)
class RunConfig:
    seed: int | None = None
    feature_set: str = "PETCT"
    outcome: str = "DM"
    # extraction grid
    voxel_sizes: tuple = VOXEL_SIZES
    algorithms: tuple = ALGORITHMS
    gray_levels: tuple = GRAY_LEVELS
    glcm_weighting: str = "inverse"
    crop_margin: int = 2
    jobs: int = 1
    # univariate
    fdr_q: float = 0.10
    univariate_subset: str = "all"
    # radiomic model
    reduced_set_size: int = 25
    n_experiments: int = 25
    n_bootstrap: int = 100
    max_order: int = 10
    gain_tradeoff: float = 0.5
    finalize_bootstrap: int = 100
    model_order: int | None = None
    # forests
    forest_bootstrap: int = 100
    n_splits: int = 10
    weights: tuple = WEIGHT_GRID
    staging_weight: float = 1.0
    permutation_repeats: int = 100
    # evaluation
    stratify_mode: str = "three-group"

    _PARSERS = {
        "seed": int, "feature_set": str.strip, "outcome": str.strip,
        "voxel_sizes": _floats, "algorithms": _algorithms, "gray_levels": _ints,
        "glcm_weighting": str.strip, "crop_margin": int, "jobs": int,
        "fdr_q": float, "univariate_subset": str.strip,
        "reduced_set_size": int, "n_experiments": int, "n_bootstrap": int, "max_order": int,
        "gain_tradeoff": float, "finalize_bootstrap": int, "model_order": _order,
        "forest_bootstrap": int, "n_splits": int, "weights": _floats, "staging_weight": float,
        "permutation_repeats": int, "stratify_mode": str.strip,
    }

    def __post_init__(self):
        if self.feature_set not in FEATURE_SETS:
            raise ValidationError(f"feature_set must be one of {FEATURE_SETS}")
        if self.outcome not in OUTCOME_NAMES:
            raise ValidationError(f"outcome must be one of {OUTCOME_NAMES}")
        if self.stratify_mode not in STRATIFY_MODES:
            raise ValidationError(f"stratify_mode must be one of {STRATIFY_MODES}")
        if self.univariate_subset not in UNIVARIATE_SUBSETS:
            raise ValidationError(f"univariate_subset must be one of {UNIVARIATE_SUBSETS}")
        if self.glcm_weighting not in ("inverse", "none"):
            raise ValidationError("glcm_weighting must be 'inverse' or 'none'")
        if not 0.0 < self.fdr_q < 1.0:
            raise ValidationError("fdr_q must lie in (0, 1)")
        if any(w < 0.5 or w > 2.0 for w in self.weights) or not self.weights:
            raise ValidationError("weights must lie in [0.5, 2.0]")
        if any(v <= 0 for v in self.voxel_sizes) or not self.voxel_sizes:
            raise ValidationError("voxel sizes must be positive")
        if any(g < 2 for g in self.gray_levels) or not self.gray_levels:
            raise ValidationError("gray levels must be >= 2")
        if self.jobs < 1 or self.crop_margin < 0:
            raise ValidationError("jobs must be >= 1 and crop_margin >= 0")
        if self.seed is not None and not 0 <= self.seed < 2 ** 64:
            raise ValidationError("seed must be an unsigned 64-bit integer")
        self.selection  # validates the selection settings

    @classmethod
    def from_text(cls, text):
        values = {}
        for k, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"config line {k}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in cls._PARSERS:
                raise ValidationError(f"config line {k}: unknown key {key!r}")
            try:
                values[key] = cls._PARSERS[key](val)
            except ValueError as exc:
                raise ValidationError(f"config line {k}: bad value for {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path):
        if path is None:
            return cls()
        try:
            with open(path) as fh:
                return cls.from_text(fh.read())
        except OSError as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from None

    def with_seed(self, seed):
        return self if seed is None else replace(self, seed=int(seed))

    def require_seed(self):
        if self.seed is None:
            raise ValidationError("a master seed is required (--seed or 'seed =' in the config)")
        return self.seed

    @property
    def selection(self) -> SelectionConfig:
        return SelectionConfig(self.reduced_set_size, self.n_experiments, self.n_bootstrap, self.max_order,
                               self.gain_tradeoff, self.finalize_bootstrap, self.model_order)

    @property
    def extraction(self) -> ExtractionConfig:
        return ExtractionConfig(glcm_weighting=self.glcm_weighting, crop_margin=self.crop_margin)

    @property
    def grid(self):
        return [ExtractionParams(vs, QuantizerSpec(alg, ng))
                for vs in self.voxel_sizes for alg in self.algorithms for ng in self.gray_levels]

    def snapshot(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "algorithms":
                v = [a.value for a in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    def to_text(self):
        lines = []
        for key, v in self.snapshot().items():
            if v is None:
                v = "auto" if key == "model_order" else None
            if v is None:
                continue
            lines.append(f"{key} = {','.join(str(x) for x in v) if isinstance(v, list) else v}")
        return "\n".join(lines) + "\n"

