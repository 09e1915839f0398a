#!/usr/bin/env python3
"""modecfg: tune algorithm configurations and discover configuration modes.

    modecfg tune      --space F --worker CMD --data LIST --strategy S -k K --budget M --seeds S.. --out DIR
    modecfg partition --matrix CSV -k K [--method exact|greedy|kmeans] [--out CSV]
    modecfg synth     --dim D --modes K --per-mode N --budget M --seeds S.. --strategies LIST --out DIR
    modecfg report    --runs DIR --out CSV [--svg FILE]
    modecfg predict   --train-features CSV --labels CSV --query CSV

Results go to stdout or files, logs to stderr. Exit status is 2 for usage
errors and 1 when a run failed.
"""
import argparse
import logging
import sys
from pathlib import Path

import pandas as pd
from dotenv import load_dotenv
from pydantic import ValidationError

from evaluation import MatrixFormatError, knn_predict_partition, read_matrix_csv
from experiment import (ExperimentConfig, SynthConfig, aggregate_path_for, load_runlogs, run_experiment,
                        run_synthetic, write_reports)
from log_config import setup_colored_logging
from paramspace import ParamSpaceError
from partition import METHODS
from strategies import STRATEGY_NAMES, posthoc_matrix

logger = logging.getLogger('modecfg')

EXIT_FAILURE = 1
EXIT_USAGE = 2


class UsageError(Exception):
    """Bad arguments or input files; reported on one line with exit status 2"""


class OneLineParser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _validation_message(err: ValidationError) -> str:
    first = err.errors()[0]
    field = ".".join(str(part) for part in first["loc"])
    message = first["msg"]
    return f"{field}: {message}" if field else message


def _strategy_list(text: str):
    names = [s.strip() for s in text.split(",") if s.strip()]
    unknown = [s for s in names if s not in STRATEGY_NAMES]
    if not names or unknown:
        raise argparse.ArgumentTypeError(f"strategies must be a comma list of {', '.join(STRATEGY_NAMES)}")
    return names


def build_parser() -> argparse.ArgumentParser:
    parser = OneLineParser(prog="modecfg", description="Algorithm configuration with mode discovery")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=OneLineParser)

    tune = sub.add_parser("tune", help="tune an external algorithm through worker processes")
    tune.add_argument("--space", required=True, type=Path, help="parameter space JSON")
    tune.add_argument("--worker", required=True, help="worker command line")
    tune.add_argument("--data", required=True, type=Path, help="file of instance ids, one per line")
    tune.add_argument("--strategy", required=True, choices=STRATEGY_NAMES)
    tune.add_argument("-k", type=int, default=None, help="number of partitions (default 1 for single, else 2)")
    tune.add_argument("--budget", required=True, type=int, help="optimizer generations")
    tune.add_argument("--seeds", required=True, type=int, nargs="+")
    tune.add_argument("--out", required=True, type=Path)
    tune.add_argument("--partition-method", default="exact", choices=METHODS)
    tune.add_argument("--warm-start", action="store_true", help="staged: start each group from its representative")
    tune.add_argument("--explore-fraction", type=float, default=0.5)
    tune.add_argument("--parallel", type=int, default=1, help="worker processes")
    tune.add_argument("--optimizer", default="cmaes", choices=("cmaes", "random"))
    tune.add_argument("--no-svg", action="store_true")

    part = sub.add_parser("partition", help="partition a precomputed response matrix")
    part.add_argument("--matrix", required=True, type=Path)
    part.add_argument("-k", required=True, type=int)
    part.add_argument("--method", default="exact", choices=METHODS)
    part.add_argument("--seed", type=int, default=0)
    part.add_argument("--out", type=Path, default=None, help="CSV of instance_id,partition,config_id")

    synth = sub.add_parser("synth", help="run strategies on the synthetic benchmark")
    synth.add_argument("--dim", required=True, type=int)
    synth.add_argument("--modes", type=int, default=2)
    synth.add_argument("--per-mode", type=int, default=10)
    synth.add_argument("--budget", required=True, type=int)
    synth.add_argument("--seeds", required=True, type=int, nargs="+")
    synth.add_argument("--strategies", type=_strategy_list, default=list(STRATEGY_NAMES))
    synth.add_argument("--out", required=True, type=Path)
    synth.add_argument("-k", type=int, default=None, help="partitions for mode discovery (default: modes)")
    synth.add_argument("--partition-method", default="exact", choices=METHODS)
    synth.add_argument("--optimizer", default="cmaes", choices=("cmaes", "random"))
    synth.add_argument("--warm-start", action="store_true")
    synth.add_argument("--explore-fraction", type=float, default=0.5)
    synth.add_argument("--min-separation", type=float, default=0.0)
    synth.add_argument("--sigma", type=float, default=None, help="initial step size")
    synth.add_argument("--no-svg", action="store_true")

    report = sub.add_parser("report", help="rebuild reports from run logs")
    report.add_argument("--runs", required=True, type=Path)
    report.add_argument("--out", required=True, type=Path)
    report.add_argument("--svg", type=Path, default=None)

    predict = sub.add_parser("predict", help="1-NN partition prediction from instance features")
    predict.add_argument("--train-features", required=True, type=Path)
    predict.add_argument("--labels", required=True, type=Path)
    predict.add_argument("--query", required=True, type=Path)
    return parser


def _build_config(model, **values):
    try:
        return model(**{k: v for k, v in values.items() if v is not None})
    except ValidationError as e:
        raise UsageError(_validation_message(e)) from None


def cmd_tune(args) -> int:
    for path in (args.space, args.data):
        if not path.exists():
            raise UsageError(f"file not found: {path}")
    cfg = _build_config(
        ExperimentConfig, strategy=args.strategy, k=args.k, budget=args.budget, seeds=args.seeds,
        partition_method=args.partition_method, space_path=args.space, dataset_path=args.data,
        out_dir=args.out, worker_command=args.worker, parallel=args.parallel, optimizer=args.optimizer,
        warm_start=args.warm_start, explore_fraction=args.explore_fraction, svg=not args.no_svg)
    try:
        outcome = run_experiment(cfg)
    except (ParamSpaceError, ValueError) as e:
        raise UsageError(str(e)) from None
    return EXIT_FAILURE if outcome.failures else 0


def cmd_partition(args) -> int:
    if not args.matrix.exists():
        raise UsageError(f"file not found: {args.matrix}")
    try:
        matrix = read_matrix_csv(args.matrix)
        partition = posthoc_matrix(matrix, args.k, method=args.method, seed=args.seed)
    except (MatrixFormatError, ValueError) as e:
        raise UsageError(str(e)) from None

    for k in range(partition.k):
        if partition.dropped[k]:
            continue
        config_id = matrix.config_ids[int(partition.representative_config_index[k])]
        print(f"partition {k}\t{config_id}\tmean {partition.per_partition_cost[k]:.6g}\t"
              f"{len(partition.members(k))} instances")
    print(f"total\tmean {partition.mean_cost:.6g}")

    if args.out is not None:
        config_ids = [matrix.config_ids[int(c)] for c in partition.config_per_instance()]
        table = pd.DataFrame({"instance_id": matrix.instance_ids,
                              "partition": partition.assignment,
                              "config_id": config_ids})
        table.to_csv(args.out, index=False, lineterminator="\n")
        logger.info(f"Assignment written to {args.out}")
    return 0


def cmd_synth(args) -> int:
    cfg = _build_config(
        SynthConfig, dim=args.dim, modes=args.modes, per_mode=args.per_mode, budget=args.budget,
        seeds=args.seeds, strategies=args.strategies, k=args.k, partition_method=args.partition_method,
        optimizer=args.optimizer, warm_start=args.warm_start, explore_fraction=args.explore_fraction,
        min_separation=args.min_separation, sigma0=args.sigma, out_dir=args.out, svg=not args.no_svg)
    outcome = run_synthetic(cfg)
    for (strategy, seed), accuracy in sorted(outcome.accuracy.items()):
        logger.info(f"{strategy} seed {seed}: partition accuracy {accuracy:.3f}")
    return EXIT_FAILURE if outcome.failures else 0


def cmd_report(args) -> int:
    try:
        logs = load_runlogs(args.runs)
    except (FileNotFoundError, MatrixFormatError, ValueError) as e:
        raise UsageError(str(e)) from None
    try:
        write_reports(logs, args.out, aggregate_path_for(args.out), args.svg)
    except KeyError as e:
        raise UsageError(f"run log lacks the {e} field") from None
    return 0


def _read_table(path: Path, what: str) -> pd.DataFrame:
    if not path.exists():
        raise UsageError(f"file not found: {path}")
    table = pd.read_csv(path, dtype={"instance_id": str})
    if "instance_id" not in table.columns:
        raise UsageError(f"{what} CSV {path} needs an instance_id column")
    return table


def cmd_predict(args) -> int:
    train = _read_table(args.train_features, "training features")
    labels = _read_table(args.labels, "labels")
    query = _read_table(args.query, "query")
    if "partition" not in labels.columns:
        raise UsageError(f"labels CSV {args.labels} needs a partition column")

    feature_columns = [c for c in train.columns if c != "instance_id"]
    missing = [c for c in feature_columns if c not in query.columns]
    if not feature_columns or missing:
        raise UsageError(f"query CSV lacks feature columns: {', '.join(missing) or 'none defined'}")
    label_of = dict(zip(labels["instance_id"], labels["partition"]))
    unlabeled = [i for i in train["instance_id"] if i not in label_of]
    if unlabeled:
        raise UsageError(f"no partition label for training instance '{unlabeled[0]}'")

    features = train[feature_columns].to_numpy(dtype=float)
    train_labels = [int(label_of[i]) for i in train["instance_id"]]
    rows = []
    for instance_id, values in zip(query["instance_id"], query[feature_columns].to_numpy(dtype=float)):
        rows.append({"instance_id": instance_id,
                     "partition": knn_predict_partition(features, train_labels, values)})
    sys.stdout.write(pd.DataFrame(rows, columns=["instance_id", "partition"])
                     .to_csv(index=False, lineterminator="\n"))
    return 0


COMMANDS = {"tune": cmd_tune, "partition": cmd_partition, "synth": cmd_synth,
            "report": cmd_report, "predict": cmd_predict}


def main(argv=None) -> int:
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
        setup_colored_logging(level=level)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"modecfg: error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
