"""Command-line entry point: ``twister <stage> [--config FILE] [overrides]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ALL_VARIANTS, ConfigError, load_config
from .pipeline import STAGES, run_pipeline, run_single


def _csv(cast=str):
    return lambda s: [cast(x) for x in s.split(",") if x]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML run configuration")
    common.add_argument("--output-dir", dest="output_dir")
    common.add_argument("--seed", type=int)
    common.add_argument("--dataset-format", dest="dataset_format")
    common.add_argument("--dataset-path", dest="dataset_path")
    common.add_argument("--metadata-path", dest="metadata_path")
    common.add_argument("--k-core", dest="k_core", type=int)
    common.add_argument("--ego-seeds", dest="ego_seeds", type=int)
    common.add_argument("--mask-protocol", dest="mask_protocol")
    common.add_argument("--mask-ratio", dest="mask_ratio", type=float)
    common.add_argument("--variants", type=_csv(), help="comma-separated variant names")
    common.add_argument("--views", type=_csv(), help="comma-separated line-graph views")
    common.add_argument("--embedder")
    common.add_argument("--embed-dim", dest="embed_dim", type=int)
    common.add_argument("--generator")
    common.add_argument("--judge")
    common.add_argument("--judge-template", dest="judge_template")
    common.add_argument("--judge-seeds", dest="judge_seeds", type=_csv(int))
    common.add_argument("--parallelism", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="twister", description="Impute missing reviews on a user-item graph and evaluate them.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name, parents=[common], help=f"run the {name} stage")
        if name == "impute":
            p.add_argument("--variant", action="append", choices=ALL_VARIANTS, help="variant to impute (repeatable)")
    sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    return parser


OVERRIDE_KEYS = (
    "output_dir", "seed", "dataset_format", "dataset_path", "metadata_path", "k_core", "ego_seeds",
    "mask_protocol", "mask_ratio", "variants", "views", "embedder", "embed_dim", "generator", "judge",
    "judge_template", "judge_seeds", "parallelism",
)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in OVERRIDE_KEYS}
    try:
        cfg = load_config(args.config, overrides)
    except (ConfigError, OSError, ValueError) as exc:
        print(f"twister: config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "pipeline":
        report, ok = run_pipeline(cfg)
    elif args.command == "impute" and args.variant:
        report, ok = run_single(cfg, "impute", variants=args.variant)
    else:
        report, ok = run_single(cfg, args.command)
    for f in report["failures"]:
        print(f"twister: stage {f['stage']} failed: {f['error']}", file=sys.stderr)
    print(json.dumps({"output_dir": cfg.output_dir, "ok": ok, "stages_completed": report["stages_completed"]}))
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
