"""Pipeline commands: extract, univariate, build, evaluate, stratify, synthesize.

Every command is a pure function of its input files, the run config and the
master seed; outputs are CSV/JSON written with deterministic formatting.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .. import rng as rngmod
from ..errors import (ConvergenceError, LeakageError, RadiomicsError, UndefinedStatisticError,
                      ValidationError)
from ..features.extraction import extract_all, feature_name
from ..features.intensity import INTENSITY_FEATURES
from ..features.shape import SHAPE_FEATURES
from ..features.texture import TEXTURE_FEATURES
from ..models.forest import (BASE_CLINICAL, RISK_GROUPS, STAGING_GROUPS, FeatureSchema, ForestModel,
                             SubSamplingPlan, permutation_importance, select_staging_group, stratify_risk,
                             train_forest, tune_weight)
from ..models.logistic import EnsembleLogisticModel
from ..models.selection import build_radiomic_model
from ..stats.association import bh_fdr, spearman_columns
from ..stats.roc import auc_score, classification_metrics, delong_compare
from ..stats.survival import OutcomeVector, concordance_index, cox_fit, kaplan_meier, logrank
from ..volume import load_mask, load_volume
from .config import RunConfig
from .manifest import HN_TYPES, OUTCOMES, CohortManifest, read_manifest
from .svg import km_svg
from .synthetic import SyntheticSpec, synthesize
from .tables import FeatureTable, read_feature_table, write_feature_table

log = logging.getLogger(__name__)

MODEL_FILES = {"radiomic": "radiomic_model.json", "clinical": "clinical_forest.json",
               "combined": "combined_forest.json"}
REPORT_COLUMNS = ("model", "outcome", "n", "events", "AUC", "Sensitivity", "Specificity", "Accuracy", "CI",
                  "logrank_p")


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v):
    if v is None or (isinstance(v, float) and not math.isfinite(v)):
        return "NA"
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def feature_provenance(name):
    """Parse ``MOD_FAMILY_NAME[__vsN_alg_ngK]`` into its parts."""
    base, _, tag = name.partition("__")
    modality, family, feat = (base.split("_", 2) + ["", ""])[:3]
    out = {"modality": modality, "family": family, "name": feat}
    if tag:
        vs, alg, ng = tag.split("_")
        out.update({"voxel_size_mm": float(vs[2:].replace("p", ".")),
                    "algorithm": {"unif": "Uniform", "equal": "EqualProbability"}.get(alg, alg),
                    "levels": int(ng[2:])})
    return out


# ------------------------------------------------------------------ extract

def expected_feature_names(grid):
    names = []
    for mod in ("PET", "CT"):
        names += [feature_name(mod, "INTENSITY", k) for k in INTENSITY_FEATURES]
        names += [feature_name(mod, "SHAPE", k) for k in SHAPE_FEATURES]
        names += [feature_name(mod, fam, k, p) for p in grid for fam, k in TEXTURE_FEATURES]
    return names


def _content_hash(paths, config: RunConfig):
    h = hashlib.sha256()
    for key in ("pet", "ct", "mask", "ct_mask"):
        with open(paths[key], "rb") as fh:
            h.update(hashlib.sha256(fh.read()).digest())
    h.update(json.dumps({"grid": [p.tag for p in config.grid], "extraction": config.extraction.manifest()},
                        sort_keys=True).encode())
    return h.hexdigest()


def _extract_one(args):
    paths, config = args
    pet = load_volume(paths["pet"])
    ct = load_volume(paths["ct"])
    mask = load_mask(paths["mask"])
    ct_mask = load_mask(paths["ct_mask"]) if paths["ct_mask"] != paths["mask"] else None
    fv = extract_all(pet, ct, mask, config.grid, config.extraction, ct_mask=ct_mask)
    return fv.names, fv.values


def _safe_extract(args):
    try:
        return _extract_one(args), None
    except (RadiomicsError, OSError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def cmd_extract(manifest_path, config: RunConfig, out_dir):
    """Extract features for every manifest patient into ``features.csv``.

    Patients whose image files and extraction settings hash to the value stored
    in an existing table are reused; failures are flagged per patient.
    """
    os.makedirs(out_dir, exist_ok=True)
    manifest = read_manifest(manifest_path, check_files=False)
    out_path = os.path.join(out_dir, "features.csv")
    names = expected_feature_names(config.grid)
    previous = {}
    if os.path.exists(out_path):
        old = read_feature_table(out_path)
        if old.names == names:
            previous = {pid: (old.hashes[k], old.X[k]) for k, pid in enumerate(old.ids) if old.ok[k]}
    X = np.full((len(manifest), len(names)), np.nan)
    ok = np.zeros(len(manifest), dtype=bool)
    hashes, errors, todo, reused = [], {}, [], 0
    for k, rec in enumerate(manifest.records):
        paths = manifest.image_paths(rec)
        try:
            digest = _content_hash(paths, config)
        except OSError as exc:
            hashes.append("-")
            errors[rec.id] = f"OSError: {exc}"
            continue
        hashes.append(digest)
        hit = previous.get(rec.id)
        if hit is not None and hit[0] == digest:
            X[k] = hit[1]
            ok[k] = True
            reused += 1
        else:
            todo.append((k, paths))
    jobs = [(paths, config) for _, paths in todo]
    if config.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(config.jobs) as pool:
            results = list(pool.map(_safe_extract, jobs))
    else:
        results = [_safe_extract(j) for j in jobs]
    for (k, _), (res, err) in zip(todo, results):
        pid = manifest.records[k].id
        if err is not None:
            errors[pid] = err
            log.warning("extraction failed for %s: %s", pid, err)
            continue
        got_names, values = res
        if got_names != names:
            raise RuntimeError("extractor produced an unexpected column layout")
        X[k] = values
        ok[k] = True
    clinical = {c: [getattr(r, c) if c != "age" else repr(r.age) for r in manifest.records]
                for c in ("age", "hn_type", "t_stage", "n_stage", "tnm_stage")}
    table = FeatureTable(manifest.ids, [r.split for r in manifest.records], names, X, ok, hashes, clinical)
    write_feature_table(table, out_path)
    summary = {"patients": len(manifest), "computed": len(todo),
               "reused": reused,
               "failed": sorted(errors), "errors": errors, "excluded": manifest.excluded,
               "features_per_patient": len(names)}
    _dump_json(summary, os.path.join(out_dir, "extract_log.json"))
    _dump_json({"extraction": config.extraction.manifest(),
                "grid": [p.tag for p in config.grid],
                "features_per_modality": len(names) // 2,
                "columns": names},
               os.path.join(out_dir, "features.json"))
    return summary


# ------------------------------------------------------------------ univariate

def cmd_univariate(features_path, manifest_path, config: RunConfig, out_dir):
    """Spearman r_s of every feature with every outcome; BH within each (outcome, modality)."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = read_manifest(manifest_path, check_files=False)
    if config.univariate_subset != "all":
        manifest = manifest.split(config.univariate_subset)
    table = read_feature_table(features_path)
    ids = [pid for pid in manifest.ids if pid in set(table.ids)]
    rows = table.rows(ids)
    keep = table.ok[rows]
    rows = rows[keep]
    records = [r for r, k in zip([manifest.by_id()[pid] for pid in ids], keep) if k]
    X = table.X[rows]
    modalities = np.array([n.split("_", 1)[0] for n in table.names])
    report, summary = [], {}
    for outcome in OUTCOMES:
        y = np.array([r.outcome(outcome)[0] for r in records])
        if y.min() == y.max():
            r = np.full(X.shape[1], np.nan)
            p = np.full(X.shape[1], np.nan)
        else:
            r, p = spearman_columns(X, y)
        sig = np.zeros(X.shape[1], dtype=bool)
        for mod in np.unique(modalities):
            cols = np.flatnonzero((modalities == mod) & np.isfinite(p))
            if cols.size:
                sig[cols] = bh_fdr(p[cols], config.fdr_q)
            total = int(np.count_nonzero(modalities == mod))
            summary.setdefault(outcome, {})[mod] = {
                "significant": int(sig[modalities == mod].sum()), "total": total,
                "fraction": float(sig[modalities == mod].sum() / total) if total else float("nan"),
            }
        if np.isfinite(r).any():
            j = int(np.nanargmax(np.abs(r)))
            summary[outcome]["top_feature"] = {"name": table.names[j], "r_s": float(r[j]), "p": float(p[j])}
        for j, name in enumerate(table.names):
            na = not np.isfinite(r[j])
            report.append([name, outcome, modalities[j], _num(r[j]), _num(p[j]), "NA" if na else int(sig[j])])
    _write_csv(os.path.join(out_dir, "univariate.csv"),
               ["feature", "outcome", "modality", "r_s", "p_value", "bh_significant"], report)
    summary["patients"] = len(records)
    summary["fdr_q"] = config.fdr_q
    _dump_json(summary, os.path.join(out_dir, "univariate_summary.json"))
    return summary


# ------------------------------------------------------------------ build

def _clinical_matrix(records, columns):
    clin = CohortManifest(list(records)).clinical()
    return np.column_stack([clin[c] for c in columns]) if columns else np.zeros((len(records), 0))


def _design(table: FeatureTable, rows, records, radiomic_names, clinical_cols):
    idx = [table.names.index(n) for n in radiomic_names]
    X = np.hstack([table.X[rows][:, idx], _clinical_matrix(records, clinical_cols)])
    names = tuple(radiomic_names) + tuple(clinical_cols)
    cats = {"hn_type": HN_TYPES} if "hn_type" in clinical_cols else {}
    return X, FeatureSchema(names, cats)


def _training_set(table, manifest):
    rows = table.training_rows(manifest)
    by_id = manifest.by_id()
    records = [by_id[table.ids[k]] for k in rows]
    if any(r.split != "train" for r in records):
        raise LeakageError("test-tagged patient in the training set")
    return rows, records


def cmd_build(features_path, manifest_path, config: RunConfig, out_dir):
    """Radiomic logistic model, clinical-only forest and combined forest from training patients only."""
    seed = config.require_seed()
    os.makedirs(out_dir, exist_ok=True)
    manifest = read_manifest(manifest_path, check_files=False)
    table = read_feature_table(features_path)
    rows, records = _training_set(table, manifest)
    if len(records) < 4:
        raise ValidationError("too few training patients")
    outcome = config.outcome
    y = np.array([r.outcome(outcome)[0] for r in records], dtype=np.int64)
    times = np.array([r.outcome(outcome)[1] for r in records])
    if y.min() == y.max():
        raise ValidationError(f"training outcome {outcome} has a single class")
    cols = table.columns(config.feature_set)
    X = table.X[rows][:, cols]
    finite = np.all(np.isfinite(X), axis=0)
    cols = [c for c, f in zip(cols, finite) if f]
    X = table.X[rows][:, cols]
    names = [table.names[c] for c in cols]
    log.info("building %s models on %d training patients, %d features", outcome, len(records), len(names))

    build = build_radiomic_model(X, y, names, config.selection, seed=rngmod.child_seed(seed, "radiomic"))
    model = build.model
    radiomic_doc = model.to_dict()
    radiomic_doc["feature_provenance"] = [feature_provenance(n) for n in model.feature_names]
    radiomic_doc["outcome"] = outcome
    radiomic_doc["feature_set"] = config.feature_set
    radiomic_doc["order"] = build.order
    radiomic_doc["reduced_set"] = [names[j] for j in build.reduced.indices]
    radiomic_doc["selection_curve"] = [
        {"order": k, "features": [names[j] for j in build.stepwise.combinations[k]],
         "auc_632_plus": e.auc, "apparent_auc": e.apparent, "oob_auc": e.oob, "standard_error": e.standard_error}
        for k, e in sorted(build.stepwise.estimates.items())]
    Z = (X[:, [names.index(n) for n in model.feature_names]] - model.means) / model.scales
    try:
        cox = cox_fit(Z, OutcomeVector(y, times))
        lp = cox.linear_predictor
        radiomic_doc["cox"] = {"coefficients": [float(c) for c in cox.coefficients],
                               "training_median": float(np.median(lp)), "iterations": cox.iterations}
    except (ConvergenceError, ValidationError) as exc:
        lp = model.linear_predictor(X[:, [names.index(n) for n in model.feature_names]])
        radiomic_doc["cox"] = None
        radiomic_doc["cox_failure"] = str(exc)
        radiomic_doc["risk_split_median"] = float(np.median(lp))
    radiomic_doc["config"] = config.snapshot()

    plan = SubSamplingPlan(config.n_splits)
    clinical = CohortManifest(records).clinical()
    staging = select_staging_group(clinical, y, plan, weight=config.staging_weight,
                                   n_bootstrap=config.forest_bootstrap, seed=rngmod.child_seed(seed, "staging"))
    clinical_cols = BASE_CLINICAL + STAGING_GROUPS[staging.group]
    forests = {}
    for kind, rad in (("clinical", ()), ("combined", tuple(model.feature_names))):
        Xf, schema = _design(table, rows, records, rad, clinical_cols)
        tuning = tune_weight(Xf, y, schema, plan, config.weights, config.forest_bootstrap,
                             seed=rngmod.child_seed(seed, kind, "tune"))
        forest = train_forest(Xf, y, tuning.best_weight, config.forest_bootstrap,
                              seed=rngmod.child_seed(seed, kind, "forest"), schema=schema)
        doc = forest.to_dict()
        doc["outcome"] = outcome
        doc["staging_group"] = staging.group
        doc["weight_tuning"] = {"weights": list(tuning.weights), "mean_auc": [float(v) for v in tuning.mean_auc]}
        doc["config"] = config.snapshot()
        forests[kind] = doc
    _dump_json(radiomic_doc, os.path.join(out_dir, MODEL_FILES["radiomic"]))
    _dump_json(forests["clinical"], os.path.join(out_dir, MODEL_FILES["clinical"]))
    _dump_json(forests["combined"], os.path.join(out_dir, MODEL_FILES["combined"]))
    report = {
        "outcome": outcome, "training_patients": len(records), "training_events": int(y.sum()),
        "radiomic_features": model.feature_names, "order": build.order,
        "staging_group": staging.group, "staging_mean_auc": staging.mean_auc,
        "clinical_weight": forests["clinical"]["oversampling_weight"],
        "combined_weight": forests["combined"]["oversampling_weight"],
        "trees": {k: v["n_trees"] for k, v in forests.items()},
        "stepwise_evaluations": build.stepwise.n_evaluations, "seed": int(seed),
    }
    _dump_json(report, os.path.join(out_dir, "build_report.json"))
    return report


# ------------------------------------------------------------------ evaluate

def load_models(models_dir):
    out = {}
    for kind, fname in MODEL_FILES.items():
        path = os.path.join(models_dir, fname)
        try:
            with open(path) as fh:
                doc = json.load(fh)
        except (OSError, ValueError) as exc:
            raise ValidationError(f"cannot read model {path}: {exc}") from None
        out[kind] = doc
    return out


def _test_set(table, manifest):
    test = manifest.split("test")
    ids = [pid for pid in test.ids if pid in set(table.ids)]
    rows = table.rows(ids)
    keep = table.ok[rows]
    by_id = test.by_id()
    return rows[keep], [by_id[pid] for pid, k in zip(ids, keep) if k]


def model_outputs(docs, table, rows, records):
    """Per model: (probability, risk score for CI, high-risk indicator)."""
    out = {}
    rad = docs["radiomic"]
    model = EnsembleLogisticModel.from_dict(rad)
    Xr = table.X[rows][:, [table.names.index(n) for n in model.feature_names]]
    prob = model.probability(Xr)
    if rad.get("cox"):
        Z = (Xr - model.means) / model.scales
        risk = Z @ np.asarray(rad["cox"]["coefficients"])
        high = risk >= rad["cox"]["training_median"]
    else:
        risk = model.linear_predictor(Xr)
        high = risk >= rad["risk_split_median"]
    out["radiomic"] = (prob, risk, high)
    for kind in ("clinical", "combined"):
        forest = ForestModel.from_dict(docs[kind])
        names = forest.schema.names
        rad_names = [n for n in names if n not in BASE_CLINICAL + ("t_stage", "n_stage", "tnm_stage")]
        clin = [n for n in names if n not in rad_names]
        X, _ = _design(table, rows, records, rad_names, tuple(clin))
        p = forest.predict_proba(X)
        out[kind] = (p, p, stratify_risk(p, "two-group") == 1)
    return out


def _metrics(prob, risk, high, outcome_vec):
    y = outcome_vec.labels
    if y.min() == y.max():
        return {"AUC": None, "Sensitivity": None, "Specificity": None, "Accuracy": None,
                "CI": None, "logrank_p": None}
    sens, spec, acc = classification_metrics(prob, y, 0.5)
    try:
        ci = concordance_index(risk, outcome_vec)
    except UndefinedStatisticError:
        ci = None
    if high.all() or not high.any():
        p = None
    else:
        _, p = logrank(outcome_vec.subset(high), outcome_vec.subset(~high))
    return {"AUC": auc_score(prob, y), "Sensitivity": sens, "Specificity": spec, "Accuracy": acc,
            "CI": ci, "logrank_p": p}


def cmd_evaluate(features_path, manifest_path, models_dir, config: RunConfig, out_dir):
    """Table-1-style metrics on the test split plus DeLong (radiomic vs combined) and permutation importance."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = read_manifest(manifest_path, check_files=False)
    table = read_feature_table(features_path)
    docs = load_models(models_dir)
    outcome = docs["radiomic"]["outcome"]
    rows, records = _test_set(table, manifest)
    if not records:
        raise ValidationError("no test patients with features")
    ov = CohortManifest(records).outcome(outcome)
    outputs = model_outputs(docs, table, rows, records)
    results, csv_rows = {}, []
    for kind in ("radiomic", "clinical", "combined"):
        m = _metrics(*outputs[kind], ov)
        results[kind] = m
        csv_rows.append([kind, outcome, len(records), int(ov.labels.sum())] + [_num(m[c]) for c in REPORT_COLUMNS[4:]])
    _write_csv(os.path.join(out_dir, "evaluation.csv"), REPORT_COLUMNS, csv_rows)
    report = {"outcome": outcome, "patients": len(records), "events": int(ov.labels.sum()), "models": results}
    y = ov.labels
    if y.min() != y.max():
        delta, z, p = delong_compare(outputs["radiomic"][0], outputs["combined"][0], y)
        report["delong_radiomic_vs_combined"] = {"delta_auc": delta, "z": z, "p": p}
        forest = ForestModel.from_dict(docs["combined"])
        X = _design(table, rows, records, [n for n in forest.schema.names if n in table.names],
                    tuple(n for n in forest.schema.names if n not in table.names))[0]
        imp = permutation_importance(forest, X, y, config.permutation_repeats,
                                     seed=rngmod.child_seed(config.seed or 0, "importance"))
        report["combined_permutation_importance"] = dict(zip(forest.schema.names, [float(v) for v in imp]))
    else:
        report["delong_radiomic_vs_combined"] = None
    _dump_json(report, os.path.join(out_dir, "evaluation.json"))
    return report


# ------------------------------------------------------------------ stratify

def cmd_stratify(features_path, manifest_path, models_dir, config: RunConfig, out_dir, model_kind="combined"):
    """Risk groups from forest probabilities, per-group Kaplan-Meier tables, adjacent-group log-rank tests."""
    os.makedirs(out_dir, exist_ok=True)
    mode = config.stratify_mode
    manifest = read_manifest(manifest_path, check_files=False)
    table = read_feature_table(features_path)
    docs = load_models(models_dir)
    outcome = docs["radiomic"]["outcome"]
    rows, records = _test_set(table, manifest)
    ov = CohortManifest(records).outcome(outcome)
    prob = model_outputs(docs, table, rows, records)[model_kind][0]
    groups = stratify_risk(prob, mode)
    labels = RISK_GROUPS[mode]
    _write_csv(os.path.join(out_dir, "risk_groups.csv"), ["id", "prob_rf", "group"],
               [[r.id, _num(p), labels[g]] for r, p, g in zip(records, prob, groups)])
    km_rows, curves, notes = [], {}, []
    for g, name in enumerate(labels):
        sel = groups == g
        if not sel.any():
            notes.append(f"group {name} is empty; Kaplan-Meier curve omitted")
            continue
        km = kaplan_meier(ov.subset(sel))
        curves[name] = (km.event_times, km.survival_probs)
        km_rows.append([name, "0.0", "1.0", int(sel.sum())])
        km_rows += [[name, _num(t), _num(s), int(n)] for t, s, n in
                    zip(km.event_times, km.survival_probs, km.at_risk_counts)]
    _write_csv(os.path.join(out_dir, "km_curves.csv"), ["group", "time_months", "survival", "at_risk"], km_rows)
    tests = []
    for hi in range(len(labels) - 1, 0, -1):
        lo = hi - 1
        a, b = groups == hi, groups == lo
        if a.any() and b.any():
            chi2, p = logrank(ov.subset(a), ov.subset(b))
            tests.append({"groups": [labels[hi], labels[lo]], "chi2": chi2, "p": p})
        else:
            tests.append({"groups": [labels[hi], labels[lo]], "chi2": None, "p": None})
    t_max = float(ov.times.max()) if len(ov) else 1.0
    with open(os.path.join(out_dir, "km_curves.svg"), "w") as fh:
        fh.write(km_svg(curves, f"{outcome}: {model_kind} forest, {mode}", t_max))
    report = {"outcome": outcome, "mode": mode, "model": model_kind,
              "group_sizes": {labels[g]: int((groups == g).sum()) for g in range(len(labels))},
              "group_events": {labels[g]: int(ov.labels[groups == g].sum()) for g in range(len(labels))},
              "adjacent_logrank": tests, "notes": notes}
    _dump_json(report, os.path.join(out_dir, "stratification.json"))
    return report


# ------------------------------------------------------------------ synthesize

def cmd_synthesize(spec_path, seed, out_dir):
    if spec_path is None:
        spec = SyntheticSpec()
    else:
        try:
            with open(spec_path) as fh:
                spec = SyntheticSpec.from_text(fh.read())
        except OSError as exc:
            raise ValidationError(f"cannot read synthetic spec {spec_path}: {exc}") from None
    if seed is None:
        raise ValidationError("a seed is required")
    return synthesize(spec, seed, out_dir)
