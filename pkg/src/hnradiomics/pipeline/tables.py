"""Feature table CSV: one row per patient, metadata columns then feature columns."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from ..errors import LeakageError, ValidationError

META = ("id", "split", "extraction_ok", "content_hash")
CLINICAL = ("age", "hn_type", "t_stage", "n_stage", "tnm_stage")


@dataclass(eq=False)
class FeatureTable:
    ids: list
    splits: list
    names: list
    X: np.ndarray
    ok: np.ndarray
    hashes: list
    clinical: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64).reshape(len(self.ids), len(self.names))
        self.ok = np.asarray(self.ok, dtype=bool)
        if len(set(self.names)) != len(self.names):
            raise ValidationError("duplicate feature names")

    def rows(self, ids):
        index = {pid: k for k, pid in enumerate(self.ids)}
        missing = [pid for pid in ids if pid not in index]
        if missing:
            raise ValidationError(f"feature table lacks patients: {', '.join(missing[:5])}")
        return np.array([index[pid] for pid in ids], dtype=np.int64)

    def columns(self, feature_set):
        """Column indices of a feature set (PET, CT or PETCT)."""
        prefixes = {"PET": ("PET_",), "CT": ("CT_",), "PETCT": ("PET_", "CT_")}[feature_set]
        return [j for j, n in enumerate(self.names) if n.startswith(prefixes)]

    def training_rows(self, manifest):
        """Rows of train-tagged, successfully extracted patients.

        The table's split column must agree with the manifest; a test-tagged
        patient in either place aborts with LeakageError.
        """
        tags = {r.id: r.split for r in manifest.records}
        chosen = []
        for k, pid in enumerate(self.ids):
            if pid not in tags:
                continue
            if self.splits[k] != tags[pid]:
                raise LeakageError(f"patient {pid}: split tag {self.splits[k]!r} disagrees with manifest")
            if tags[pid] == "train" and self.ok[k]:
                chosen.append(k)
        return np.array(chosen, dtype=np.int64)


def _fmt(v):
    return repr(float(v))


def write_feature_table(table: FeatureTable, path):
    clin = [c for c in CLINICAL if c in table.clinical]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(META) + clin + list(table.names))
        for k, pid in enumerate(table.ids):
            w.writerow([pid, table.splits[k], int(table.ok[k]), table.hashes[k]]
                       + [table.clinical[c][k] for c in clin] + [_fmt(v) for v in table.X[k]])


def read_feature_table(path) -> FeatureTable:
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ValidationError(f"cannot read feature table {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header[:len(META)]) != META:
            raise ValidationError(f"{path}: not a feature table (expected columns {', '.join(META)})")
        clin = [c for c in header[len(META):] if c in CLINICAL]
        start = len(META) + len(clin)
        names = header[start:]
        ids, splits, ok, hashes, rows = [], [], [], [], []
        clinical = {c: [] for c in clin}
        for line, row in enumerate(reader, 2):
            if len(row) != len(header):
                raise ValidationError(f"{path} line {line}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0])
            splits.append(row[1])
            ok.append(row[2] == "1")
            hashes.append(row[3])
            for i, c in enumerate(clin):
                clinical[c].append(row[len(META) + i])
            try:
                rows.append([float(v) for v in row[start:]])
            except ValueError:
                raise ValidationError(f"{path} line {line}: non-numeric feature value") from None
    X = np.array(rows, dtype=np.float64).reshape(len(ids), len(names))
    return FeatureTable(ids, splits, names, X, np.array(ok, dtype=bool), hashes, clinical)
