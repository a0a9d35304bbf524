"""Command-line entry point: config-driven pipeline stages.

Usage:  digcnet <command> --out DIR [--config FILE] [--seed N] [command options]

Commands run in dependency order: generate, build-graph, discover, sweep,
train-classifier, extract-features, train, predict, evaluate, report.
One pipeline owns an output directory at a time (lock file).  Exit codes:
0 success, 2 config error, 3 missing artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from filelock import FileLock, Timeout

from . import pipeline
from .errors import (
    EXIT_CONFIG,
    EXIT_MISSING_ARTIFACT,
    EXIT_NUMERIC,
    EXIT_OK,
    ConfigError,
    MissingArtifactError,
    ParseError,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="digcnet",
        description="Incident-aware traffic speed prediction pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--config", type=Path, help="pipeline config JSON")
        p.add_argument("--seed", type=int, help="override the config seed")

    add_common(sub.add_parser("generate", help="generate a synthetic city"))
    add_common(sub.add_parser("build-graph", help="flow graph and clusters"))

    p = sub.add_parser("discover", help="label critical incidents")
    add_common(p)
    p.add_argument("--dump-scores", action="store_true",
                   help="also write per-slot AD/RSV/IES scores")

    add_common(sub.add_parser("sweep", help="criticality counts over a rho/theta grid"))

    p = sub.add_parser("train-classifier", help="train the impact classifier")
    add_common(p)
    p.add_argument("--labels", choices=("discovery", "ground-truth"),
                   default="discovery", help="label source (default: discovery)")

    add_common(sub.add_parser("extract-features",
                              help="latent incident features from the classifier"))

    p = sub.add_parser("train", help="train the speed predictor")
    add_common(p)
    p.add_argument("--variant", choices=("full", "st_periodic", "st_only"),
                   help="ablation variant (default: config flags)")
    p.add_argument("--horizon", type=int, help="override prediction length k")

    p = sub.add_parser("predict", help="write test-window predictions")
    add_common(p)
    p.add_argument("--variant", choices=("full", "st_periodic", "st_only"))

    p = sub.add_parser("evaluate", help="MAPE against baselines")
    add_common(p)
    p.add_argument("--variant", choices=("full", "st_periodic", "st_only"))
    p.add_argument("--baselines", default="persistence,historical_average",
                   help="comma-separated: persistence,historical_average,plain_lstm")

    add_common(sub.add_parser("report", help="aggregate metrics into a report"))
    return parser


def _resolve_config(args: argparse.Namespace) -> pipeline.PipelineConfig:
    if args.config is not None:
        config = pipeline.load_config(args.config)
    else:
        config = pipeline.PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
        if args.config is None:
            # No config file: the scenario seed follows the root seed.
            from .generator import with_seed

            config.scenario = with_seed(config.scenario, args.seed)
    if getattr(args, "horizon", None) is not None:
        from dataclasses import replace

        if args.horizon < 1:
            raise ConfigError("--horizon must be >= 1")
        config.predictor = replace(config.predictor, horizon=args.horizon)
    return config


def _dispatch(args: argparse.Namespace, config: pipeline.PipelineConfig,
              out_dir: Path) -> None:
    command = args.command
    if command == "generate":
        pipeline.stage_generate(config, out_dir)
    elif command == "build-graph":
        pipeline.stage_build_graph(config, out_dir)
    elif command == "discover":
        pipeline.stage_discover(config, out_dir, dump_scores=args.dump_scores)
    elif command == "sweep":
        pipeline.stage_sweep(config, out_dir)
    elif command == "train-classifier":
        pipeline.stage_train_classifier(config, out_dir, label_source=args.labels)
    elif command == "extract-features":
        pipeline.stage_extract_features(config, out_dir)
    elif command == "train":
        pipeline.stage_train(config, out_dir, variant=args.variant)
    elif command == "predict":
        pipeline.stage_predict(config, out_dir, variant=args.variant)
    elif command == "evaluate":
        baselines = tuple(b for b in args.baselines.split(",") if b)
        pipeline.stage_evaluate(config, out_dir, variant=args.variant,
                                baselines=baselines)
    elif command == "report":
        pipeline.stage_report(config, out_dir)
    else:  # pragma: no cover - argparse enforces choices
        raise ConfigError(f"unknown command {command!r}")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = _resolve_config(args)
        out_dir = args.out
        out_dir.mkdir(parents=True, exist_ok=True)
        lock = FileLock(out_dir / ".digcnet.lock")
        try:
            with lock.acquire(timeout=600):
                _dispatch(args, config, out_dir)
        except Timeout:
            print(f"digcnet: output directory {out_dir} is locked by another run",
                  file=sys.stderr)
            return EXIT_CONFIG
    except (ConfigError, ParseError) as exc:
        print(f"digcnet: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"digcnet: missing artifact: {exc}", file=sys.stderr)
        return EXIT_MISSING_ARTIFACT
    except (FloatingPointError, ZeroDivisionError, ArithmeticError) as exc:
        print(f"digcnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
