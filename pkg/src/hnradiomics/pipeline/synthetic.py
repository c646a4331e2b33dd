"""Synthetic PET/CT cohorts with planted outcome signal.

Each patient carries two latent traits: ``z`` drives intratumour texture
heterogeneity and ``u`` drives tumour size. Outcome liabilities mix the
latents with noise; the top ``event_rate`` fraction of each liability are the
events. ``effect_size`` is the correlation between the planted latent score
and the distant-metastasis liability (the strong outcome); LR and OS get
weaker fractions of it. N-stage carries ``clinical_effect`` of the same
liability so clinical models have something to find.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy import ndimage

from .. import rng as rngmod
from ..errors import ValidationError
from ..volume import ImageVolume, RoiMask, save_mask, save_volume
from .manifest import HN_TYPES, N_STAGES, T_STAGES, PatientRecord, write_manifest

OUTCOME_SHARE = {"DM": 1.0, "OS": 0.7, "LR": 0.5}
HN_TYPE_PROBS = (0.6, 0.15, 0.1, 0.15)
T_STAGE_PROBS = (0.15, 0.35, 0.3, 0.2)


@dataclass(frozen=True)
class SyntheticSpec:
    n_patients: int = 300
    n_train: int = 200
    event_rate: float = 0.15
    effect_size: float = 1.0
    clinical_effect: float = 0.5
    mode: str = "image"  # image | features
    dims: tuple = (24, 24, 16)
    spacing: tuple = (2.0, 2.0, 3.0)
    radius_mm: float = 9.0
    n_noise_features: int = 48  # per modality, feature mode only

    def __post_init__(self):
        if not 0.0 <= self.effect_size <= 1.0:
            raise ValidationError("effect_size must lie in [0, 1]")
        if not 0.0 <= self.clinical_effect <= 1.0:
            raise ValidationError("clinical_effect must lie in [0, 1]")
        if not 0.0 < self.event_rate < 1.0:
            raise ValidationError("event_rate must lie in (0, 1)")
        if self.mode not in ("image", "features"):
            raise ValidationError("mode must be 'image' or 'features'")
        if not 0 < self.n_train < self.n_patients:
            raise ValidationError("n_train must lie strictly between 0 and n_patients")
        k = self.n_events
        if k < 2 or self.n_patients - k < 2:
            raise ValidationError("event_rate leaves fewer than two patients in a class")
        if len(self.dims) != 3 or len(self.spacing) != 3 or min(self.dims) < 4 or min(self.spacing) <= 0:
            raise ValidationError("dims/spacing must be 3 positive values (dims >= 4)")
        extent = min(d * s for d, s in zip(self.dims, self.spacing))
        if self.mode == "image" and 2.0 * self.radius_mm * math.exp(0.4) >= extent:
            raise ValidationError("tumour radius does not fit the field of view")

    @property
    def n_events(self):
        return math.floor(self.n_patients * self.event_rate + 0.5)

    @classmethod
    def from_text(cls, text):
        kinds = {f.name: f.type for f in fields(cls)}
        values = {}
        for k, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValidationError(f"synthetic spec line {k}: expected key = value")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in kinds:
                raise ValidationError(f"synthetic spec line {k}: unknown key {key!r}")
            try:
                if key == "dims":
                    values[key] = tuple(int(v) for v in val.split(","))
                elif key == "spacing":
                    values[key] = tuple(float(v) for v in val.split(","))
                elif key == "mode":
                    values[key] = val
                elif kinds[key] == "int":
                    values[key] = int(val)
                else:
                    values[key] = float(val)
            except ValueError as exc:
                raise ValidationError(f"synthetic spec line {k}: {exc}") from None
        return cls(**values)


def _top_fraction(score, k):
    """Indicator of the ``k`` largest scores (ties by lower index)."""
    order = np.argsort(-score, kind="stable")
    out = np.zeros(score.size, dtype=np.int8)
    out[order[:k]] = 1
    return out


def draw_latents(spec: SyntheticSpec, seed):
    """Latent traits, liabilities, events, times, clinical covariates and split tags."""
    gen = rngmod.stream(seed, "synthetic", "cohort")
    n = spec.n_patients
    z = gen.standard_normal(n)
    u = gen.standard_normal(n)
    signal = (z + u) / math.sqrt(2.0) if spec.mode == "features" else z
    out = {"z": z, "u": u, "signal": signal, "events": {}, "months": {}, "liability": {}}
    k = spec.n_events
    for name, share in OUTCOME_SHARE.items():
        rho = spec.effect_size * share
        liab = rho * signal + math.sqrt(1.0 - rho * rho) * gen.standard_normal(n)
        ev = _top_fraction(liab, k)
        cut = np.sort(liab)[::-1][k - 1]
        t_event = np.clip(40.0 * np.exp(-(liab - cut)) * gen.uniform(0.3, 1.0, n), 1.0, 60.0)
        t_cens = gen.uniform(24.0, 110.0, n)
        out["liability"][name] = liab
        out["events"][name] = ev
        out["months"][name] = np.round(np.where(ev == 1, t_event, t_cens), 2)
    dm = out["liability"]["DM"]
    c = spec.clinical_effect
    n_score = c * (dm - dm.mean()) / dm.std() + math.sqrt(1.0 - c * c) * gen.standard_normal(n)
    n_stage = np.searchsorted(np.quantile(n_score, [0.25, 0.35, 0.9]), n_score, side="right")
    t_stage = gen.choice(4, n, p=T_STAGE_PROBS) + 1
    tnm = np.where((n_stage >= 2) | (t_stage == 4), 4, np.where((n_stage == 1) | (t_stage == 3), 3,
                                                                    np.where(t_stage == 2, 2, 1)))
    out["age"] = np.round(np.clip(gen.normal(61.0, 9.0, n), 30.0, 90.0), 1)
    out["hn_type"] = gen.choice(4, n, p=HN_TYPE_PROBS)
    out["t_stage"], out["n_stage"], out["tnm_stage"] = t_stage, n_stage, tnm
    # split stratified on the strong outcome
    ev = out["events"]["DM"]
    pos = gen.permutation(np.flatnonzero(ev == 1))
    neg = gen.permutation(np.flatnonzero(ev == 0))
    n_pos_train = math.floor(spec.n_train * pos.size / n + 0.5)
    train = np.zeros(n, dtype=bool)
    train[pos[:n_pos_train]] = True
    train[neg[:spec.n_train - n_pos_train]] = True
    out["train"] = train
    return out


def render_patient(z, u, spec: SyntheticSpec, seed, index):
    """PET (SUV) and CT (HU) volumes plus the tumour mask for one patient."""
    gen = rngmod.stream(seed, "synthetic", "image", index)
    dims = tuple(spec.dims)
    sp = np.asarray(spec.spacing)
    extent = np.asarray(dims) * sp
    radii = spec.radius_mm * math.exp(0.2 * u) * gen.uniform(0.85, 1.15, 3)
    centre = extent / 2.0 + gen.uniform(-0.1, 0.1, 3) * (extent / 2.0 - radii).clip(0)
    coords = [(np.arange(d) + 0.5) * s for d, s in zip(dims, sp)]
    gx, gy, gz = np.meshgrid(*coords, indexing="ij")
    r2 = ((gx - centre[0]) / radii[0]) ** 2 + ((gy - centre[1]) / radii[1]) ** 2 + ((gz - centre[2]) / radii[2]) ** 2
    mask = r2 <= 1.0
    if not mask.any():
        mask[tuple(int(c // s) for c, s in zip(centre, sp))] = True

    def textured(scale_mm):
        field = gen.standard_normal(dims)
        field = ndimage.gaussian_filter(field, sigma=scale_mm / sp, mode="nearest")
        return (field - field.mean()) / field.std()

    het = math.exp(0.6 * z)
    pet = 1.0 + 0.15 * gen.standard_normal(dims)
    uptake = 6.0 * (1.0 - 0.35 * np.clip(r2, 0.0, 1.0)) + 0.9 * het * textured(2.5) + 0.25 * textured(1.0)
    pet = np.where(mask, np.clip(uptake, 0.5, None), pet)
    z_ct = 0.6 * z + 0.8 * gen.standard_normal()
    ct = 30.0 + 12.0 * gen.standard_normal(dims)
    ct_tumour = 45.0 + 18.0 * math.exp(0.5 * z_ct) * textured(2.0) + 6.0 * gen.standard_normal(dims)
    ct = np.where(mask, ct_tumour, ct)
    spacing = tuple(float(s) for s in sp)
    return (ImageVolume(pet.astype(np.float32), spacing, "PET"), ImageVolume(ct.astype(np.float32), spacing, "CT"),
            RoiMask(mask, spacing))


def feature_matrix(lat, spec: SyntheticSpec, seed):
    """Feature-level cohort: one planted column per modality among independent noise columns."""
    gen = rngmod.stream(seed, "synthetic", "features")
    n = spec.n_patients
    p = spec.n_noise_features + 1
    planted_pet = int(gen.integers(0, p))
    planted_ct = int(gen.integers(0, p))
    cols, names = [], []
    for mod, latent, planted in (("PET", lat["z"], planted_pet), ("CT", lat["u"], planted_ct)):
        for j in range(p):
            names.append(f"{mod}_SYN_F{j:03d}")
            if j == planted:
                cols.append(latent + 0.25 * gen.standard_normal(n))
            else:
                cols.append(gen.standard_normal(n))
    return names, np.column_stack(cols), [f"PET_SYN_F{planted_pet:03d}", f"CT_SYN_F{planted_ct:03d}"]


def _record(i, lat, split, paths):
    return PatientRecord(
        id=f"P{i:04d}", pet_path=paths[0], ct_path=paths[1], mask_path=paths[2], ct_mask_path="",
        age=float(lat["age"][i]), hn_type=HN_TYPES[int(lat["hn_type"][i])],
        t_stage=list(T_STAGES)[int(lat["t_stage"][i]) - 1], n_stage=list(N_STAGES)[int(lat["n_stage"][i])],
        tnm_stage=("I", "II", "III", "IV")[int(lat["tnm_stage"][i]) - 1],
        lr_event=int(lat["events"]["LR"][i]), lr_months=float(lat["months"]["LR"][i]),
        dm_event=int(lat["events"]["DM"][i]), dm_months=float(lat["months"]["DM"][i]),
        os_event=int(lat["events"]["OS"][i]), os_months=float(lat["months"]["OS"][i]),
        cohort="SYN", split=split,
    )


def synthesize(spec: SyntheticSpec, seed, out_dir):
    """Write ``manifest.csv``, ``truth.json`` and either volumes (image mode) or ``features.csv``."""
    from .tables import FeatureTable, write_feature_table

    os.makedirs(out_dir, exist_ok=True)
    lat = draw_latents(spec, seed)
    records = []
    for i in range(spec.n_patients):
        split = "train" if lat["train"][i] else "test"
        if spec.mode == "image":
            pid = f"P{i:04d}"
            paths = (f"images/{pid}_pet.rvf", f"images/{pid}_ct.rvf", f"images/{pid}_mask.rvf")
            pet, ct, mask = render_patient(lat["z"][i], lat["u"][i], spec, seed, i)
            os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
            save_volume(pet, os.path.join(out_dir, paths[0]))
            save_volume(ct, os.path.join(out_dir, paths[1]))
            save_mask(mask, os.path.join(out_dir, paths[2]))
        else:
            paths = ("-", "-", "-")
        records.append(_record(i, lat, split, paths))
    write_manifest(records, os.path.join(out_dir, "manifest.csv"))
    truth = {
        "spec": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(spec).items()},
        "seed": int(seed),
        "strong_outcome": "DM",
        "latent_texture_z": [float(v) for v in lat["z"]],
        "latent_size_u": [float(v) for v in lat["u"]],
        "liability": {k: [float(x) for x in v] for k, v in lat["liability"].items()},
    }
    if spec.mode == "features":
        names, X, planted = feature_matrix(lat, spec, seed)
        truth["planted_features"] = planted
        table = FeatureTable([r.id for r in records], [r.split for r in records], names, X,
                             ok=np.ones(len(records), dtype=bool), hashes=["-"] * len(records))
        write_feature_table(table, os.path.join(out_dir, "features.csv"))
    with open(os.path.join(out_dir, "truth.json"), "w") as fh:
        json.dump(truth, fh, indent=1, sort_keys=True)
    return {"patients": spec.n_patients, "events": {k: int(v.sum()) for k, v in lat["events"].items()},
            "train": int(lat["train"].sum())}
