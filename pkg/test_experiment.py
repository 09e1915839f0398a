#!/usr/bin/env python3
import functools
import json
import logging
import math
import shlex
import sys
import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from evaluation import RunLog
from experiment import (ExperimentConfig, SynthConfig, aggregate_path_for, aggregate_report, build_report,
                        dataset_reference, load_runlogs, run_experiment, run_synthetic, runlog_path, write_reports)
from log_config import setup_colored_logging

# Set up logging
setup_colored_logging(level=logging.INFO)
logger = logging.getLogger('test_experiment')

DEMO_COMMAND = shlex.join([sys.executable, str(Path(__file__).with_name("demo_worker.py"))])
SPACE = {"params": [{"name": "a", "init": 1.0}, {"name": "b", "init": 2.0, "min": 0.1, "max": 20.0}],
         "sigma": 0.5}
DATASET = "# demo instances\nlow:-1.0\nlow:-0.8\nhigh:1.0\nhigh:1.2\n"
BENCHMARK_SEEDS = list(range(10))


def write_inputs(tmp_path):
    space_path = tmp_path / "space.json"
    space_path.write_text(json.dumps(SPACE), encoding="utf-8")
    dataset_path = tmp_path / "instances.txt"
    dataset_path.write_text(DATASET, encoding="utf-8")
    return space_path, dataset_path


def experiment_config(tmp_path, **overrides):
    space_path, dataset_path = write_inputs(tmp_path)
    values = dict(strategy="posthoc", budget=2, seeds=[0], space_path=space_path, dataset_path=dataset_path,
                  out_dir=tmp_path / "out", worker_command=DEMO_COMMAND, cache_dir=str(tmp_path / "cache"),
                  svg=False)
    values.update(overrides)
    return ExperimentConfig(**values)


def hand_log(strategy, seed, evaluator, init_costs, rows):
    log = RunLog({"strategy": strategy, "seed": seed, "evaluator": evaluator,
                  "instance_ids": list(init_costs), "init_costs": init_costs})
    for i, (costs, best) in enumerate(rows, start=1):
        log.append(i, strategy, seed, [{"id": f"cfg{i:05d}", "config": {"x": float(i)}, "costs": costs}],
                   assignment=[0] * len(init_costs), best_mean_cost=best, evaluations=i * len(costs))
    return log


def test_experiment_config_defaults_and_checks(tmp_path):
    assert experiment_config(tmp_path).k == 2
    assert experiment_config(tmp_path, strategy="single").k == 1
    with pytest.raises(ValidationError):
        experiment_config(tmp_path, strategy="single", k=2)
    with pytest.raises(ValidationError):
        experiment_config(tmp_path, k=1)
    with pytest.raises(ValidationError):
        experiment_config(tmp_path, seeds=[-1])
    with pytest.raises(ValidationError):
        experiment_config(tmp_path, budget=1)
    with pytest.raises(ValidationError):
        experiment_config(tmp_path, strategy="bayesian")
    with pytest.raises(ValidationError):
        experiment_config(tmp_path, retries=2)


def test_synth_config_checks(tmp_path):
    cfg = SynthConfig(dim=2, budget=3, seeds=[0], out_dir=tmp_path)
    assert cfg.partitions == 2
    assert cfg.sigma0 == 1.0
    assert SynthConfig(dim=2, modes=3, budget=3, seeds=[0], out_dir=tmp_path).partitions == 3
    with pytest.raises(ValidationError):
        SynthConfig(dim=1, budget=3, seeds=[0], out_dir=tmp_path)
    with pytest.raises(ValidationError):
        SynthConfig(dim=2, modes=1, budget=3, seeds=[0], out_dir=tmp_path)
    assert SynthConfig(dim=2, modes=1, budget=3, seeds=[0], strategies=["single"], out_dir=tmp_path).partitions == 1


def test_report_scores_against_shared_oracle():
    desc = {"kind": "synthetic", "seed": 0}
    a = hand_log("posthoc", 0, desc, {"a": 4.0, "b": 4.0}, [({"a": 1.0, "b": 3.0}, 2.0)])
    b = hand_log("posthoc", 1, desc, {"a": 4.0, "b": 4.0}, [({"a": 2.0, "b": 1.0}, 1.5)])
    init_mean, oracle_mean = dataset_reference([a, b])
    assert init_mean == 4.0
    assert oracle_mean == 1.0

    flat = hand_log("single", 0, {"kind": "synthetic", "seed": 1}, {"a": 1.0}, [({"a": 1.0}, 1.0)])
    report = build_report([b, a, flat])
    assert list(report["strategy"]) == ["posthoc", "posthoc", "single"]
    assert list(report["seed"]) == [0, 1, 0]
    assert report["normalized_score"][0] == pytest.approx(1.0 / 3.0)
    assert report["normalized_score"][1] == pytest.approx(0.5 / 3.0)
    assert math.isnan(report["normalized_score"][2])
    assert report["best_mean_cost"][2] == 1.0


def test_dataset_reference_penalizes_failures():
    desc = {"kind": "synthetic", "seed": 5}
    log = hand_log("posthoc", 0, desc, {"a": 4.0, "b": "fail", "c": "fail"},
                   [({"a": math.inf, "b": 2.0, "c": math.inf}, 2.0)])
    init_mean, oracle_mean = dataset_reference([log])
    # worst finite cost is 4, so failures count as 8
    assert init_mean == pytest.approx(20.0 / 3.0)
    assert oracle_mean == pytest.approx(14.0 / 3.0)


def test_aggregate_report_mean_and_sem():
    report = pd.DataFrame({"strategy": ["online", "online", "online"], "seed": [0, 1, 0],
                           "iteration": [1, 1, 2], "evaluations": [10, 10, 20],
                           "best_mean_cost": [1.0, 3.0, 0.5], "normalized_score": [0.2, 0.4, 0.1]})
    aggregate = aggregate_report(report)
    first = aggregate.iloc[0]
    assert first["runs"] == 2
    assert first["mean_cost"] == 2.0
    assert first["sem_cost"] == pytest.approx(1.0)
    assert first["mean_score"] == pytest.approx(0.3)
    assert aggregate.iloc[1]["runs"] == 1
    assert math.isnan(aggregate.iloc[1]["sem_cost"])


def test_write_and_load_reports(tmp_path):
    runs = tmp_path / "runs"
    runs.mkdir()
    with pytest.raises(FileNotFoundError):
        load_runlogs(runs)
    desc = {"kind": "synthetic", "seed": 0}
    hand_log("posthoc", 0, desc, {"a": 4.0}, [({"a": 1.0}, 1.0)]).write(runs / "posthoc_seed0.jsonl")
    hand_log("posthoc", 1, desc, {"a": 4.0}, [({"a": 2.0}, 2.0)]).write(runs / "posthoc_seed1.jsonl")
    logs = load_runlogs(runs)
    report_path = tmp_path / "report.csv"
    aggregate_path = aggregate_path_for(report_path)
    assert aggregate_path.name == "report_aggregate.csv"
    svg_path = tmp_path / "scores.svg"
    write_reports(logs, report_path, aggregate_path, svg_path)
    report = pd.read_csv(report_path)
    assert list(report.columns) == ["strategy", "seed", "iteration", "evaluations", "best_mean_cost",
                                    "normalized_score"]
    aggregate = pd.read_csv(aggregate_path)
    assert list(aggregate.columns) == ["strategy", "iteration", "runs", "evaluations", "mean_cost", "sem_cost",
                                       "mean_score", "sem_score"]
    assert "<svg" in svg_path.read_text(encoding="utf-8")


def test_synthetic_experiment_smoke(tmp_path):
    cfg = SynthConfig(dim=2, modes=2, per_mode=3, budget=3, seeds=[0, 1], out_dir=tmp_path / "synth")
    outcome = run_synthetic(cfg)
    assert outcome.ok
    assert len(outcome.runlog_paths) == 8
    assert runlog_path(cfg.out_dir, "staged", 1).exists()
    modes = pd.read_csv(cfg.out_dir / "modes.csv")
    assert len(modes) == 8
    assert modes["partition_accuracy"].between(0.5, 1.0).all()
    single = modes[modes["strategy"] == "single"]
    assert (single["k_effective"] == 1).all()

    aggregate = pd.read_csv(outcome.aggregate_path)
    assert set(aggregate["strategy"]) == {"single", "posthoc", "staged", "online"}
    assert (aggregate["runs"] == 2).all()
    report = pd.read_csv(outcome.report_path)
    assert (report["normalized_score"].dropna() >= 0.0).all()
    assert outcome.svg_path.exists()


def test_synthetic_experiment_is_reproducible(tmp_path):
    reports = []
    for name in ("first", "second"):
        cfg = SynthConfig(dim=2, modes=2, per_mode=2, budget=2, seeds=[3], strategies=["posthoc", "online"],
                          out_dir=tmp_path / name, svg=False)
        outcome = run_synthetic(cfg)
        reports.append(outcome.report_path.read_bytes())
        assert outcome.svg_path is None
    assert reports[0] == reports[1]


@functools.lru_cache(maxsize=None)
def benchmark_runs(dim):
    """Final record of every (strategy, seed) run at full benchmark size, plus each seed's oracle mean"""
    with tempfile.TemporaryDirectory() as tmp:
        cfg = SynthConfig(dim=dim, modes=2, per_mode=10, budget=100, seeds=BENCHMARK_SEEDS, out_dir=Path(tmp),
                          svg=False)
        outcome = run_synthetic(cfg)
        assert outcome.ok
        report = pd.read_csv(outcome.report_path)
        logs = load_runlogs(Path(tmp) / "runs")
    oracle = {seed: dataset_reference([log for log in logs if log.header["seed"] == seed])[1]
              for seed in BENCHMARK_SEEDS}
    return report, oracle


def final_scores(report):
    final = report.groupby(["strategy", "seed"]).tail(1)
    return final.groupby("strategy")["normalized_score"].mean()


@pytest.mark.slow
def test_benchmark_ordering_in_two_dimensions():
    scores = final_scores(benchmark_runs(2)[0])
    logger.info(f"Mean final scores, d=2: {scores.round(4).to_dict()}")
    assert scores["posthoc"] < scores["single"] - 0.05
    assert scores["staged"] < scores["single"] - 0.05
    assert scores["online"] <= scores["single"] + 0.02


@pytest.mark.slow
def test_benchmark_ordering_in_ten_dimensions():
    scores = final_scores(benchmark_runs(10)[0])
    logger.info(f"Mean final scores, d=10: {scores.round(4).to_dict()}")
    assert scores["posthoc"] < scores["single"]
    assert scores["staged"] < scores["single"] - 0.05
    assert scores["online"] <= scores["single"] + 0.02


@pytest.mark.slow
@pytest.mark.xfail(reason="posthoc leads single by about 0.03 at d=10; see DESIGN.md", strict=False)
def test_posthoc_margin_in_ten_dimensions():
    scores = final_scores(benchmark_runs(10)[0])
    assert scores["posthoc"] < scores["single"] - 0.05


@pytest.mark.slow
def test_benchmark_runs_respect_the_oracle():
    for dim in (2, 10):
        report, oracle = benchmark_runs(dim)
        for (strategy, seed), rows in report.groupby(["strategy", "seed"]):
            assert (rows["best_mean_cost"].dropna() >= oracle[seed] - 1e-12).all(), (dim, strategy, seed)
        final = report.groupby(["strategy", "seed"]).tail(1).set_index(["strategy", "seed"])["best_mean_cost"]
        for seed in BENCHMARK_SEEDS:
            assert final[("posthoc", seed)] <= final[("single", seed)] + 1e-12, (dim, seed)


def separated_mode_accuracy(dim):
    with tempfile.TemporaryDirectory() as tmp:
        cfg = SynthConfig(dim=dim, modes=2, per_mode=10, budget=100, seeds=BENCHMARK_SEEDS, strategies=["posthoc"],
                          min_separation=4.0, out_dir=Path(tmp), svg=False)
        outcome = run_synthetic(cfg)
    assert outcome.ok
    return float(np.mean([outcome.accuracy[("posthoc", seed)] for seed in BENCHMARK_SEEDS]))


@pytest.mark.slow
def test_posthoc_recovers_separated_modes():
    assert separated_mode_accuracy(2) >= 0.9


@pytest.mark.slow
@pytest.mark.xfail(reason="recovery is about 0.8 at d=10 with this budget; see DESIGN.md", strict=False)
def test_posthoc_recovers_separated_modes_in_ten_dimensions():
    assert separated_mode_accuracy(10) >= 0.9


def test_experiment_with_demo_worker(tmp_path):
    cfg = experiment_config(tmp_path, seeds=[0, 1], parallel=2)
    outcome = run_experiment(cfg)
    assert outcome.ok
    assert [p.name for p in outcome.runlog_paths] == ["posthoc_seed0.jsonl", "posthoc_seed1.jsonl"]
    log = RunLog.load(outcome.runlog_paths[0])
    assert log.header["evaluator"]["kind"] == "worker"
    assert log.header["instance_ids"] == ["low:-1.0", "low:-0.8", "high:1.0", "high:1.2"]
    assert len(log.records) == 2
    result = outcome.results[("posthoc", 0)]
    assert result.partition.k == 2
    assert outcome.report_path.exists() and outcome.aggregate_path.exists()


def test_rerun_with_warm_cache_is_byte_identical(tmp_path):
    first = run_experiment(experiment_config(tmp_path, strategy="online", out_dir=tmp_path / "first"))
    second = run_experiment(experiment_config(tmp_path, strategy="online", out_dir=tmp_path / "second"))
    assert first.ok and second.ok
    assert first.runlog_paths[0].read_bytes() == second.runlog_paths[0].read_bytes()
    assert first.aggregate_path.read_bytes() == second.aggregate_path.read_bytes()


def test_failing_worker_is_recorded(tmp_path):
    command = shlex.join([sys.executable, "-c", "pass"])
    cfg = experiment_config(tmp_path, worker_command=command, seeds=[0, 1])
    outcome = run_experiment(cfg)
    assert not outcome.ok
    assert [(s, seed) for s, seed, _ in outcome.failures] == [("posthoc", 0), ("posthoc", 1)]
    assert outcome.report_path is None


def main():
    logger.info("Starting experiment tests")
    test_report_scores_against_shared_oracle()
    test_dataset_reference_penalizes_failures()
    test_aggregate_report_mean_and_sem()
    for test in (test_experiment_config_defaults_and_checks, test_synth_config_checks, test_write_and_load_reports,
                 test_synthetic_experiment_smoke, test_synthetic_experiment_is_reproducible,
                 test_experiment_with_demo_worker, test_rerun_with_warm_cache_is_byte_identical,
                 test_failing_worker_is_recorded):
        with tempfile.TemporaryDirectory() as tmp:
            test(Path(tmp))
    logger.info("Experiment tests completed")


if __name__ == "__main__":
    main()
