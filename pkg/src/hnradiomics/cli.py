"""Command-line entry point: ``hnradiomics <command> [options]``.

Exit codes: 0 success, 2 invalid input (bad files, schema, leakage), 3 internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace

from .errors import LeakageError, SchemaError, ValidationError, VolumeFormatError
from .pipeline import commands
from .pipeline.config import RunConfig

INPUT_ERRORS = (ValidationError, SchemaError, VolumeFormatError, LeakageError)


def _parser():
    p = argparse.ArgumentParser(prog="hnradiomics", description="PET/CT radiomics outcome modelling")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, help_text, manifest=True, features=False, models=False):
        s = sub.add_parser(name, help=help_text)
        if manifest:
            s.add_argument("--manifest", required=True)
        if features:
            s.add_argument("--features", required=True, help="feature table written by 'extract'")
        if models:
            s.add_argument("--models", required=True, help="directory written by 'build'")
        s.add_argument("--config", help="key = value run configuration")
        s.add_argument("--seed", type=int, help="master seed (overrides the config)")
        s.add_argument("--out", required=True, help="output directory")
        return s

    add("extract", "extract radiomic features for every manifest patient")
    add("univariate", "Spearman association of every feature with every outcome", features=True)
    add("build", "radiomic logistic model and clinical/combined forests from training patients",
        features=True)
    add("evaluate", "test-split metrics, DeLong comparison, permutation importance", features=True,
        models=True)
    s = add("stratify", "risk groups and Kaplan-Meier curves on the test split", features=True, models=True)
    s.add_argument("--mode", choices=("two-group", "three-group"), help="overrides stratify_mode")
    s.add_argument("--model", choices=("clinical", "combined"), default="combined")
    s = add("synthesize", "write a synthetic cohort with planted signal", manifest=False)
    s.add_argument("--spec", help="key = value synthetic cohort settings")
    return p


def run(argv):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "synthesize":
        return commands.cmd_synthesize(args.spec, args.seed, args.out)
    config = RunConfig.from_file(args.config).with_seed(args.seed)
    if args.command == "extract":
        return commands.cmd_extract(args.manifest, config, args.out)
    if args.command == "univariate":
        return commands.cmd_univariate(args.features, args.manifest, config, args.out)
    if args.command == "build":
        return commands.cmd_build(args.features, args.manifest, config, args.out)
    if args.command == "evaluate":
        return commands.cmd_evaluate(args.features, args.manifest, args.models, config, args.out)
    if args.mode:
        config = replace(config, stratify_mode=args.mode)
    return commands.cmd_stratify(args.features, args.manifest, args.models, config, args.out, args.model)


def main(argv=None):
    try:
        result = run(sys.argv[1:] if argv is None else argv)
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - anything else is a defect
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(result, indent=1, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
