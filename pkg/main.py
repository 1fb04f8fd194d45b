import argparse
import json
import sys
from pathlib import Path

import config
from src.data.checkpoint import load_checkpoint
from src.data.images import load_image
from src.data.loader import load_manifest
from src.errors import (
    ContractError,
    DataError,
    DimensionError,
    NumericError,
    ParameterError,
)
from src.evaluation.evaluator import evaluate
from src.gradcheck.harness import report_table, run_checks
from src.gradcheck.registry import registered_ops
from src.models.pban_config import PBANConfig
from src.models.pban_model import build_model
from src.models.weights import NamedWeights, param_count
from src.reporting.feature_dump import dump_features
from src.reporting.report_generator import metric_summary, save_json, write_predictions
from src.training.sgd import SGDConfig
from src.training.trainer import predict_image, train
from src.utils.logger import setup_logger

logger = setup_logger("main")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class CliParser(argparse.ArgumentParser):
    """Reports usage errors as ParameterError so they share the exit-code mapping."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise ParameterError(f"{self.prog}: {message}")


def require_dir(path: str | Path, what: str) -> None:
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise FileNotFoundError(f"{what} directory {parent} does not exist")


def load_model(path: str) -> tuple[NamedWeights, PBANConfig]:
    """Checkpoint whose tensors must be exactly the ones its config declares."""
    weights, pban_config = load_checkpoint(path)
    try:
        weights.check_against(build_model(pban_config).param_specs())
    except ContractError as e:
        raise DataError(f"{path}: {e}") from e
    return weights, pban_config


def cmd_train(args) -> int:
    if args.folds < 2:
        raise ParameterError(f"--folds must be >= 2, got {args.folds}")
    require_dir(args.out, "output")
    pban_config = PBANConfig.from_json_file(args.config) if args.config else PBANConfig()
    sgd_config = SGDConfig(
        lr=args.lr, epochs=args.epochs, batch_size=args.batch, seed=args.seed
    )
    manifest = load_manifest(args.manifest)
    logger.info(
        f"Training on {len(manifest)} records: {args.folds}-fold CV, {args.epochs} epochs, "
        f"batch {args.batch}, seed {args.seed}"
    )
    report = train(
        manifest,
        pban_config,
        sgd_config,
        folds=args.folds,
        test_fraction=args.test_fraction,
        out=args.out,
        max_steps=args.max_steps,
    )
    logger.info(f"Training finished in {report.wall_time:.1f}s, checkpoint {report.checkpoint}")
    return EXIT_OK


def cmd_score(args) -> int:
    weights, pban_config = load_model(args.model)
    sr = load_image(args.sr)
    hr = load_image(args.hr) if args.hr else None
    score = predict_image(weights, pban_config, sr, hr, batch_size=args.batch)
    print(f"{score:.10g}")
    return EXIT_OK


def cmd_eval(args) -> int:
    require_dir(args.out, "output")
    if args.predictions:
        require_dir(args.predictions, "predictions")
    weights, pban_config = load_model(args.model)
    manifest = load_manifest(args.manifest)
    report, table = evaluate(weights, pban_config, manifest)
    save_json(report.to_dict(), args.out)
    logger.info("\n" + metric_summary(report))
    if args.predictions:
        write_predictions(table, args.predictions)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.list:
        print("\n".join(registered_ops()))
        return EXIT_OK
    if args.out:
        require_dir(args.out, "output")
    reports = run_checks(
        [args.op] if args.op else None, seed=args.seed, random_shapes=args.random_shapes
    )
    print(report_table(reports).to_string(index=False))
    if args.out:
        save_json({"reports": [r.to_dict() for r in reports]}, args.out)
    failed = [r.op for r in reports if not r.passed]
    if failed:
        logger.error(f"Gradient check failed for: {', '.join(failed)}")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_inspect(args) -> int:
    weights, pban_config = load_model(args.model)
    counts = param_count(pban_config)
    print(json.dumps(pban_config.to_dict(), indent=2, sort_keys=True))
    print(counts.table().to_string(index=False))
    print(f"gmdc deform kernels (all blocks): {counts.matching('*.gmdc.group*.deform.weight')}")
    print(f"trainable: {counts.total}")
    print(f"buffers: {counts.buffers}")
    return EXIT_OK


def cmd_dump_features(args) -> int:
    weights, pban_config = load_model(args.model)
    sr = load_image(args.sr)
    hr = load_image(args.hr) if args.hr else None
    written = dump_features(hr, sr, weights, pban_config, args.out)
    print(f"{len(written)} stage maps written to {args.out}")
    return EXIT_OK


def build_parser() -> CliParser:
    parser = CliParser(prog="pban", description="PBAN full-reference image quality assessment")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="Cross-validate, train and save a checkpoint")
    p.add_argument("--manifest", required=True, help="CSV with sr_path,hr_path,mos")
    p.add_argument("--out", required=True, help="Checkpoint path (report and plot go beside it)")
    p.add_argument("--config", help="Architecture JSON overriding the defaults")
    p.add_argument("--epochs", type=int, default=config.EPOCHS)
    p.add_argument("--folds", type=int, default=config.FOLDS)
    p.add_argument("--seed", type=int, default=config.SEED)
    p.add_argument("--batch", type=int, default=config.BATCH_SIZE)
    p.add_argument("--lr", type=float, default=config.LEARNING_RATE)
    p.add_argument("--test-fraction", type=float, default=config.TEST_FRACTION)
    p.add_argument("--max-steps", type=int, help="Stop each fit after this many SGD steps")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("score", help="Print the quality score of one SR/HR pair")
    p.add_argument("--model", required=True)
    p.add_argument("--sr", required=True)
    p.add_argument("--hr", help="Reference image (required by the FR variant)")
    p.add_argument("--batch", type=int, default=config.EVAL_BATCH_SIZE)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("eval", help="Metric report of a checkpoint on a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="MetricReport JSON path")
    p.add_argument("--predictions", help="Optional per-record prediction CSV path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="Finite-difference gradient checks")
    p.add_argument("--op", help="Check a single registered op")
    p.add_argument("--seed", type=int, default=config.SEED)
    p.add_argument("--out", help="Write the reports as JSON")
    p.add_argument("--list", action="store_true", help="List the registered ops")
    p.add_argument(
        "--random-shapes",
        action="store_true",
        help="Draw input extents in [1, 5] from the seed instead of the default shapes",
    )
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("inspect", help="Config and parameter counts of a checkpoint")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("dump-features", help="Write per-stage feature maps as PNG")
    p.add_argument("--model", required=True)
    p.add_argument("--sr", required=True)
    p.add_argument("--hr")
    p.add_argument("--out", required=True, help="Existing output directory")
    p.set_defaults(func=cmd_dump_features)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ParameterError, ContractError) as e:
        logger.error(f"Usage error: {e}")
        return EXIT_USAGE
    except (DataError, DimensionError, OSError) as e:
        logger.error(f"Data error: {e}")
        return EXIT_DATA
    except NumericError as e:
        logger.error(f"Numeric error: {e}")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
