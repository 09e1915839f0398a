#!/usr/bin/env python3
"""Multi-seed experiment runs and their reports.

Each (strategy, seed) run writes one RunLog to <out>/runs/. Reports are
computed from RunLogs alone: the oracle of a dataset is the best cost every
instance received in any run on it (including the initial configuration),
and normalized scores place the initial configuration at 1 and the oracle
at 0.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, model_validator

from cache_manager import CacheManager
from evaluation import (DegenerateScaleError, MatrixFormatError, ResponseMatrix, RunLog, failure_penalty_for,
                        merge_matrices, normalized_score, oracle_per_datum)
from paramspace import ParamSpace, load_space
from partition import partition_accuracy
from strategies import STRATEGY_NAMES, Budget, StrategyResult, run_strategy
from synthbench import SyntheticEvaluator, make_problem
from worker_pool import WorkerPool, load_dataset

logger = logging.getLogger('experiment')

REPORT_COLUMNS = ["strategy", "seed", "iteration", "evaluations", "best_mean_cost", "normalized_score"]
SYNTH_SIGMA0 = 1.0

StrategyName = Literal["single", "posthoc", "staged", "online"]
MethodName = Literal["exact", "greedy", "kmeans"]
OptimizerName = Literal["cmaes", "random"]


def _default_k(data, default):
    if isinstance(data, dict) and data.get("k") is None:
        data = dict(data)
        data["k"] = 1 if data.get("strategy") == "single" else default
    return data


class ExperimentConfig(BaseModel):
    """One strategy over several seeds on an external algorithm"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    strategy: StrategyName
    k: int = Field(ge=1)
    budget: int = Field(ge=2)
    seeds: List[int] = Field(min_length=1)
    partition_method: MethodName = "exact"
    space_path: Path
    dataset_path: Path
    out_dir: Path
    worker_command: str = Field(min_length=1)
    parallel: int = Field(default=1, ge=1)
    optimizer: OptimizerName = "cmaes"
    warm_start: bool = False
    explore_fraction: float = Field(default=0.5, gt=0.0, lt=1.0)
    cache_dir: Optional[str] = None
    svg: bool = True

    @model_validator(mode="before")
    @classmethod
    def _fill_k(cls, data):
        return _default_k(data, 2)

    @model_validator(mode="after")
    def _check(self):
        if self.strategy == "single" and self.k != 1:
            raise ValueError(f"strategy single uses exactly one partition, got k={self.k}")
        if self.strategy != "single" and self.k < 2:
            raise ValueError(f"strategy {self.strategy} needs k >= 2, got k={self.k}")
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        return self


class SynthConfig(BaseModel):
    """All requested strategies over several seeds of the synthetic benchmark"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    dim: int = Field(ge=2)
    modes: int = Field(default=2, ge=1)
    per_mode: int = Field(default=10, ge=1)
    budget: int = Field(ge=2)
    seeds: List[int] = Field(min_length=1)
    strategies: List[StrategyName] = Field(default_factory=lambda: list(STRATEGY_NAMES), min_length=1)
    k: Optional[int] = Field(default=None, ge=2)
    partition_method: MethodName = "exact"
    optimizer: OptimizerName = "cmaes"
    warm_start: bool = False
    explore_fraction: float = Field(default=0.5, gt=0.0, lt=1.0)
    min_separation: float = Field(default=0.0, ge=0.0)
    sigma0: float = Field(default=SYNTH_SIGMA0, gt=0.0)
    out_dir: Path
    svg: bool = True

    @model_validator(mode="after")
    def _check(self):
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        if self.k is None and self.modes < 2 and any(s != "single" for s in self.strategies):
            raise ValueError("mode-discovery strategies need k >= 2; pass k explicitly when modes < 2")
        return self

    @property
    def partitions(self) -> int:
        return self.k if self.k is not None else self.modes


@dataclass
class RunOutcome:
    runlog_paths: List[Path] = field(default_factory=list)
    failures: List[Tuple[str, int, str]] = field(default_factory=list)
    report_path: Optional[Path] = None
    aggregate_path: Optional[Path] = None
    svg_path: Optional[Path] = None
    results: Dict[Tuple[str, int], StrategyResult] = field(default_factory=dict)
    accuracy: Dict[Tuple[str, int], float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures


def runlog_path(out_dir, strategy: str, seed: int) -> Path:
    return Path(out_dir) / "runs" / f"{strategy}_seed{seed}.jsonl"


def _save_run(outcome: RunOutcome, out_dir, strategy, seed, result: StrategyResult):
    path = runlog_path(out_dir, strategy, seed)
    result.run_log.write(path)
    outcome.runlog_paths.append(path)
    outcome.results[(strategy, seed)] = result
    logger.info(f"Saved run log to {path}")


def run_experiment(cfg: ExperimentConfig) -> RunOutcome:
    """Run one strategy per seed through worker processes; failing seeds are recorded and skipped"""
    space = load_space(cfg.space_path)
    instances = load_dataset(cfg.dataset_path)
    (Path(cfg.out_dir) / "runs").mkdir(parents=True, exist_ok=True)
    cache = CacheManager(cfg.cache_dir, namespace=cfg.worker_command)
    budget = Budget(max_iterations=cfg.budget, explore_fraction=cfg.explore_fraction)
    outcome = RunOutcome()

    for seed in cfg.seeds:
        try:
            with WorkerPool(cfg.worker_command, instances, parallel=cfg.parallel, cache=cache,
                            dataset=str(cfg.dataset_path)) as pool:
                result = run_strategy(cfg.strategy, space, pool, budget, K=cfg.k, seed=seed,
                                      method=cfg.partition_method, warm_start=cfg.warm_start,
                                      optimizer=cfg.optimizer)
            _save_run(outcome, cfg.out_dir, cfg.strategy, seed, result)
        except Exception as e:
            logger.error(f"Run {cfg.strategy} seed {seed} failed: {e}", exc_info=True)
            outcome.failures.append((cfg.strategy, seed, str(e)))
            # Continue with the next seed

    _finish(outcome, cfg.out_dir, cfg.svg)
    return outcome


def run_synthetic(cfg: SynthConfig) -> RunOutcome:
    """Every requested strategy on a freshly generated problem per seed"""
    (Path(cfg.out_dir) / "runs").mkdir(parents=True, exist_ok=True)
    budget = Budget(max_iterations=cfg.budget, explore_fraction=cfg.explore_fraction)
    space = ParamSpace.linear(cfg.dim, sigma0=cfg.sigma0)
    outcome = RunOutcome()
    accuracy_rows = []

    for seed in cfg.seeds:
        try:
            problem = make_problem(cfg.dim, cfg.modes, cfg.per_mode, seed, min_separation=cfg.min_separation)
        except ValueError as e:
            logger.error(f"Could not generate problem for seed {seed}: {e}")
            outcome.failures.extend((s, seed, str(e)) for s in cfg.strategies)
            continue
        evaluator = SyntheticEvaluator(problem)
        for strategy in cfg.strategies:
            K = 1 if strategy == "single" else cfg.partitions
            try:
                result = run_strategy(strategy, space, evaluator, budget, K=K, seed=seed,
                                      method=cfg.partition_method, warm_start=cfg.warm_start,
                                      optimizer=cfg.optimizer)
                _save_run(outcome, cfg.out_dir, strategy, seed, result)
            except Exception as e:
                logger.error(f"Run {strategy} seed {seed} failed: {e}", exc_info=True)
                outcome.failures.append((strategy, seed, str(e)))
                continue
            accuracy = partition_accuracy(result.partition.assignment, problem.labels)
            outcome.accuracy[(strategy, seed)] = accuracy
            accuracy_rows.append({"strategy": strategy, "seed": seed,
                                  "k_effective": result.partition.k_effective,
                                  "partition_accuracy": accuracy})

    if accuracy_rows:
        modes_path = Path(cfg.out_dir) / "modes.csv"
        pd.DataFrame(accuracy_rows).to_csv(modes_path, index=False, lineterminator="\n")
        logger.info(f"Mode recovery written to {modes_path}")
    _finish(outcome, cfg.out_dir, cfg.svg)
    return outcome


def _finish(outcome: RunOutcome, out_dir, svg: bool):
    if not outcome.runlog_paths:
        logger.warning("No run completed; skipping reports")
        return
    logs = [RunLog.load(p) for p in outcome.runlog_paths]
    report_path = Path(out_dir) / "report.csv"
    aggregate_path = Path(out_dir) / "aggregate.csv"
    svg_path = Path(out_dir) / "scores.svg" if svg else None
    write_reports(logs, report_path, aggregate_path, svg_path)
    outcome.report_path, outcome.aggregate_path, outcome.svg_path = report_path, aggregate_path, svg_path
    if outcome.failures:
        logger.warning(f"{len(outcome.failures)} runs failed: "
                       f"{', '.join(f'{s} seed {seed}' for s, seed, _ in outcome.failures)}")


# ──────────────────────────────────────────────────────────────────────────────
#  Reports
# ──────────────────────────────────────────────────────────────────────────────

def load_runlogs(runs_dir) -> List[RunLog]:
    paths = sorted(Path(runs_dir).glob("*.jsonl"))
    if not paths:
        raise FileNotFoundError(f"no run logs (*.jsonl) in {runs_dir}")
    logs = []
    for path in paths:
        try:
            logs.append(RunLog.load(path))
        except MatrixFormatError as e:
            raise MatrixFormatError(f"{path}: {e}") from e
    return logs


def _dataset_key(log: RunLog) -> str:
    return json.dumps(log.header.get("evaluator"), sort_keys=True)


def _init_matrix(log: RunLog) -> ResponseMatrix:
    m = ResponseMatrix(log.header["instance_ids"])
    m.add_row("init", None, log.init_costs())
    return m


def dataset_reference(logs: List[RunLog]) -> Tuple[float, float]:
    """(initial mean, oracle mean) over runs sharing one dataset"""
    merged = merge_matrices([log.to_matrix() for log in logs] + [_init_matrix(logs[0])])
    penalty = failure_penalty_for(merged.worst_finite())
    init = merged.filled(penalty)[-1]
    oracle = oracle_per_datum(merged, penalty=penalty)
    return float(np.nanmean(init)), float(np.mean(oracle))


def build_report(logs: List[RunLog]) -> pd.DataFrame:
    """One row per (run, iteration) with its best mean cost and normalized score"""
    groups: Dict[str, List[RunLog]] = {}
    for log in logs:
        groups.setdefault(_dataset_key(log), []).append(log)

    rows = []
    for key, group in groups.items():
        init_mean, oracle_mean = dataset_reference(group)
        degenerate = not init_mean > oracle_mean
        if degenerate:
            logger.warning(f"Initial configuration already matches the oracle on {key}; "
                           f"normalized scores are undefined, reporting raw costs only")
        for log in group:
            strategy, seed = log.header["strategy"], log.header["seed"]
            for record in log.records:
                cost = record.get("best_mean_cost")
                score = np.nan
                if cost is not None and not degenerate:
                    try:
                        score = normalized_score(cost, init_mean, oracle_mean)
                    except DegenerateScaleError:
                        score = np.nan
                rows.append({"strategy": strategy, "seed": seed, "iteration": record["iteration"],
                             "evaluations": record.get("evaluations"),
                             "best_mean_cost": np.nan if cost is None else cost,
                             "normalized_score": score})
    report = pd.DataFrame(rows, columns=REPORT_COLUMNS)
    return report.sort_values(["strategy", "seed", "iteration"], kind="stable").reset_index(drop=True)


def aggregate_report(report: pd.DataFrame) -> pd.DataFrame:
    """Mean and standard error of the mean over seeds, per (strategy, iteration)"""
    grouped = report.groupby(["strategy", "iteration"], sort=True)
    aggregate = grouped.agg(
        runs=("seed", "count"),
        evaluations=("evaluations", "mean"),
        mean_cost=("best_mean_cost", "mean"),
        sem_cost=("best_mean_cost", "sem"),
        mean_score=("normalized_score", "mean"),
        sem_score=("normalized_score", "sem"),
    )
    return aggregate.reset_index()


def plot_scores(aggregate: pd.DataFrame, path) -> None:
    """Mean normalized score against evaluations per strategy, with a shaded SEM band"""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for strategy, rows in aggregate.groupby("strategy", sort=True):
        x = rows["evaluations"].to_numpy(dtype=float)
        y = rows["mean_score"].to_numpy(dtype=float)
        sem = np.nan_to_num(rows["sem_score"].to_numpy(dtype=float))
        line, = ax.plot(x, y, label=strategy, linewidth=1.5)
        ax.fill_between(x, y - sem, y + sem, color=line.get_color(), alpha=0.2, linewidth=0)
    ax.set_xlabel("instance evaluations")
    ax.set_ylabel("normalized score (1 = initial, 0 = oracle)")
    ax.set_ylim(bottom=0.0)
    ax.grid(True, alpha=0.3)
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    logger.info(f"Score chart written to {path}")


def write_reports(logs: List[RunLog], report_path, aggregate_path, svg_path=None):
    report = build_report(logs)
    aggregate = aggregate_report(report)
    report.to_csv(report_path, index=False, lineterminator="\n")
    aggregate.to_csv(aggregate_path, index=False, lineterminator="\n")
    logger.info(f"Report written to {report_path}, aggregate to {aggregate_path}")
    if svg_path is not None:
        plot_scores(aggregate, svg_path)
    return report, aggregate


def aggregate_path_for(report_path) -> Path:
    report_path = Path(report_path)
    return report_path.with_name(f"{report_path.stem}_aggregate.csv")
