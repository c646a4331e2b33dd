"""Cohort manifest: per-patient image paths, clinical covariates, outcomes and split tags."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, fields

import numpy as np

from ..errors import ValidationError
from ..stats.survival import OutcomeVector

log = logging.getLogger(__name__)

HN_TYPES = ("oropharynx", "hypopharynx", "nasopharynx", "larynx")
T_STAGES = {"T1": 1, "T2": 2, "T3": 3, "T4": 4}
N_STAGES = {"N0": 0, "N1": 1, "N2": 2, "N3": 3}
TNM_STAGES = {"I": 1, "II": 2, "III": 3, "IV": 4}
OUTCOMES = ("LR", "DM", "OS")
SPLITS = ("train", "test")
MIN_FOLLOW_UP_MONTHS = 24.0

COLUMNS = (
    "id", "pet_path", "ct_path", "mask_path", "ct_mask_path",
    "age", "hn_type", "t_stage", "n_stage", "tnm_stage",
    "lr_event", "lr_months", "dm_event", "dm_months", "os_event", "os_months",
    "cohort", "split",
)
OPTIONAL = {"ct_mask_path"}


@dataclass(frozen=True)
class PatientRecord:
    id: str
    pet_path: str
    ct_path: str
    mask_path: str
    ct_mask_path: str
    age: float
    hn_type: str
    t_stage: str
    n_stage: str
    tnm_stage: str
    lr_event: int
    lr_months: float
    dm_event: int
    dm_months: float
    os_event: int
    os_months: float
    cohort: str
    split: str

    @property
    def follow_up_months(self):
        return max(self.lr_months, self.dm_months, self.os_months)

    def outcome(self, name):
        key = name.lower()
        return getattr(self, f"{key}_event"), getattr(self, f"{key}_months")

    def as_row(self):
        return {f.name: _fmt(getattr(self, f.name)) for f in fields(self)}


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def _parse_record(row, line):
    def need(key):
        v = (row.get(key) or "").strip()
        if not v and key not in OPTIONAL:
            raise ValidationError(f"line {line}: missing {key}")
        return v

    def num(key):
        try:
            v = float(need(key))
        except ValueError:
            raise ValidationError(f"line {line}: {key} is not a number") from None
        if not np.isfinite(v) or v < 0:
            raise ValidationError(f"line {line}: {key} must be finite and non-negative")
        return v

    def flag(key):
        v = need(key)
        if v not in ("0", "1"):
            raise ValidationError(f"line {line}: {key} must be 0 or 1")
        return int(v)

    def vocab(key, allowed):
        v = need(key)
        if v not in allowed:
            raise ValidationError(f"line {line}: unknown {key} {v!r} (allowed: {', '.join(allowed)})")
        return v

    age = num("age")
    if age <= 0:
        raise ValidationError(f"line {line}: age must be positive")
    return PatientRecord(
        id=need("id"), pet_path=need("pet_path"), ct_path=need("ct_path"), mask_path=need("mask_path"),
        ct_mask_path=need("ct_mask_path"), age=age,
        hn_type=vocab("hn_type", HN_TYPES), t_stage=vocab("t_stage", tuple(T_STAGES)),
        n_stage=vocab("n_stage", tuple(N_STAGES)), tnm_stage=vocab("tnm_stage", tuple(TNM_STAGES)),
        lr_event=flag("lr_event"), lr_months=num("lr_months"),
        dm_event=flag("dm_event"), dm_months=num("dm_months"),
        os_event=flag("os_event"), os_months=num("os_months"),
        cohort=need("cohort"), split=vocab("split", SPLITS),
    )


def exclusion_reason(rec: PatientRecord):
    """None when the patient is kept."""
    if not rec.lr_event and not rec.dm_event and rec.follow_up_months < MIN_FOLLOW_UP_MONTHS:
        return f"no LR/DM event and follow-up {rec.follow_up_months:g} < {MIN_FOLLOW_UP_MONTHS:g} months"
    return None


class CohortManifest:
    """Validated patients (exclusions applied) with paths resolved against ``base_dir``."""

    def __init__(self, records, base_dir=".", excluded=()):
        ids = [r.id for r in records]
        if len(set(ids)) != len(ids):
            raise ValidationError("patient ids must be unique")
        self.records = list(records)
        self.base_dir = str(base_dir)
        self.excluded = list(excluded)

    def __len__(self):
        return len(self.records)

    @property
    def ids(self):
        return [r.id for r in self.records]

    def path(self, p):
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def image_paths(self, rec: PatientRecord):
        ct_mask = rec.ct_mask_path or rec.mask_path
        return {k: self.path(v) for k, v in
                (("pet", rec.pet_path), ("ct", rec.ct_path), ("mask", rec.mask_path), ("ct_mask", ct_mask))}

    def split(self, tag):
        if tag not in SPLITS:
            raise ValidationError(f"unknown split {tag!r}")
        return CohortManifest([r for r in self.records if r.split == tag], self.base_dir)

    def by_id(self):
        return {r.id: r for r in self.records}

    def outcome(self, name) -> OutcomeVector:
        if name not in OUTCOMES:
            raise ValidationError(f"unknown outcome {name!r}")
        ev, t = zip(*(r.outcome(name) for r in self.records)) if self.records else ((), ())
        return OutcomeVector(np.array(ev, dtype=np.int8), np.array(t, dtype=np.float64))

    def clinical(self):
        """Numeric clinical columns: hn_type as a category code, stages as ordinal codes."""
        return {
            "age": np.array([r.age for r in self.records]),
            "hn_type": np.array([HN_TYPES.index(r.hn_type) for r in self.records], dtype=np.float64),
            "t_stage": np.array([T_STAGES[r.t_stage] for r in self.records], dtype=np.float64),
            "n_stage": np.array([N_STAGES[r.n_stage] for r in self.records], dtype=np.float64),
            "tnm_stage": np.array([TNM_STAGES[r.tnm_stage] for r in self.records], dtype=np.float64),
        }


def read_manifest(path, check_files=True) -> CohortManifest:
    base = os.path.dirname(os.path.abspath(path))
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read manifest {path}: {exc}") from None
    with fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in COLUMNS if c not in header and c not in OPTIONAL]
        if missing:
            raise ValidationError(f"manifest lacks columns: {', '.join(missing)}")
        records = [_parse_record(row, k + 2) for k, row in enumerate(reader)]
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValidationError("patient ids must be unique")
    kept, excluded = [], []
    for rec in records:
        reason = exclusion_reason(rec)
        if reason:
            excluded.append((rec.id, reason))
            log.info("excluded %s: %s", rec.id, reason)
        else:
            kept.append(rec)
    manifest = CohortManifest(kept, base, excluded)
    if check_files:
        for rec in manifest.records:
            for key, p in manifest.image_paths(rec).items():
                if not os.path.isfile(p):
                    raise ValidationError(f"patient {rec.id}: {key} file not found: {p}")
    return manifest


def write_manifest(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow(rec.as_row())
