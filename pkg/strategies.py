#!/usr/bin/env python3
"""Tuning procedures: one configuration for the whole dataset, or up to K.

Every strategy spends its budget in optimizer generations of lambda
candidates. The initial configuration is evaluated once on all instances
outside the budget; its costs go into the run log header.

    single   tune one configuration on all instances
    posthoc  tune on all instances, then partition the response matrix
    staged   posthoc for part of the budget, then tune each group separately
    online   K optimizers compete for instances through per-instance bandits
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

import optimizer as opt_mod
from evaluation import (ResponseMatrix, RunLog, encode_cost, failure_penalty_for, mean_per_config, merge_matrices,
                        oracle_per_datum)
from optimizer import SequentialOptimizer
from paramspace import Configuration, ParamSpace
from partition import Partition, make_partition, partition_matrix

logger = logging.getLogger('strategies')

DEFAULT_EXPLORE_FRACTION = 0.5
SCALE_FLOOR = 1e-6
STRATEGY_NAMES = ("single", "posthoc", "staged", "online")


class Budget(BaseModel):
    model_config = ConfigDict(frozen=True)

    max_iterations: int = Field(ge=2)
    explore_fraction: float = Field(default=DEFAULT_EXPLORE_FRACTION, gt=0.0, lt=1.0)


def as_budget(budget) -> Budget:
    if isinstance(budget, Budget):
        return budget
    return Budget(max_iterations=int(budget))


def child_seed(seed: int, *keys: int) -> int:
    """Independent, reproducible seed for a sub-component of a run"""
    return int(np.random.SeedSequence([int(seed), *keys]).generate_state(1)[0])


@dataclass
class StrategyResult:
    strategy: str
    partition: Partition
    per_partition_config: List[Configuration]
    response_matrix: ResponseMatrix
    run_log: RunLog
    baseline_best: Tuple[Configuration, float]
    oracle_mean: float

    @property
    def mean_cost(self) -> float:
        return self.partition.mean_cost


class TuningRun:
    """Bookkeeping shared by all strategies: matrix, run log and evaluation count"""

    def __init__(self, strategy: str, space: ParamSpace, evaluator, budget: Budget, seed: int,
                 optimizer: str = "cmaes", extra_header: Optional[Dict] = None):
        self.strategy = strategy
        self.space = space
        self.evaluator = evaluator
        self.seed = int(seed)
        self.optimizer_kind = optimizer
        self.instances = list(evaluator.instance_ids)
        if not self.instances:
            raise ValueError("dataset must contain at least one instance")
        self.matrix = ResponseMatrix(self.instances)
        self.initial_config = space.initial_config()
        self.x0 = space.to_search_space(self.initial_config)
        self.init_costs = dict(evaluator.evaluate_batch([self.initial_config], self.instances)[0])
        finite = [c for c in self.init_costs.values() if math.isfinite(c)]
        self._worst = max(finite) if finite else None
        self.evaluations = 0
        self.iteration = 0
        self._unrecorded: List[int] = []

        header = {
            "strategy": strategy,
            "seed": self.seed,
            "budget": budget.max_iterations,
            "explore_fraction": budget.explore_fraction,
            "optimizer": optimizer,
            "space": space.describe(),
            "evaluator": evaluator.descriptor(),
            "instance_ids": self.instances,
            "init_costs": {inst: encode_cost(c) for inst, c in self.init_costs.items()},
        }
        header.update(extra_header or {})
        self.log = RunLog(header)
        logger.info(f"Starting {strategy} run, seed {self.seed}, budget {budget.max_iterations} generations, "
                    f"{len(self.instances)} instances")

    def penalty(self) -> float:
        return failure_penalty_for(self._worst)

    def evaluate_configs(self, configs: Sequence[Configuration], instances: Sequence[str]) -> List[int]:
        """Evaluate configurations on instances and add one matrix row each"""
        results = self.evaluator.evaluate_batch(list(configs), list(instances))
        rows = []
        for config, costs in zip(configs, results):
            rows.append(self.matrix.add_row(f"cfg{len(self.matrix):05d}", config, costs))
            finite = [c for c in costs.values() if math.isfinite(c)]
            if finite:
                self._worst = max(finite) if self._worst is None else max(self._worst, max(finite))
        self.evaluations += len(configs) * len(instances)
        self._unrecorded.extend(rows)
        return rows

    def evaluate_points(self, points, instances: Sequence[str]) -> List[int]:
        return self.evaluate_configs([self.space.from_search_space(p) for p in points], instances)

    def row_mean(self, row: int, penalty: Optional[float] = None) -> float:
        """Mean over the row's observed instances, failures replaced by the penalty"""
        penalty = self.penalty() if penalty is None else penalty
        values = [penalty if math.isinf(c) else c for c in self.matrix.row_costs(row).values()]
        return float(np.mean(values))

    def best_full_row(self) -> Tuple[Optional[int], float]:
        """Best-mean row among those evaluated on every instance"""
        if len(self.matrix) == 0:
            return None, math.inf
        full = self.matrix.observed.all(axis=1)
        if not full.any():
            return None, math.inf
        means = np.where(full, mean_per_config(self.matrix, penalty=self.penalty()), np.inf)
        row = int(np.argmin(means))
        return row, float(means[row])

    def partition_input(self) -> np.ndarray:
        return self.matrix.partition_input(self.penalty())

    def oracle_mean(self) -> float:
        with_init = merge_matrices([self.matrix])
        with_init.add_row("init", self.initial_config, self.init_costs)
        return float(oracle_per_datum(with_init, penalty=self.penalty()).mean())

    def record(self, assignment, best_mean_cost: float, strategy: Optional[str] = None):
        candidates = [{"id": self.matrix.config_ids[r], "config": self.matrix.configs[r].values,
                       "costs": self.matrix.row_costs(r)} for r in self._unrecorded]
        self._unrecorded = []
        self.iteration += 1
        self.log.append(self.iteration, strategy or self.strategy, self.seed, candidates,
                        assignment=assignment, best_mean_cost=best_mean_cost, evaluations=self.evaluations)
        logger.debug(f"{self.strategy} iteration {self.iteration}: best mean {best_mean_cost:.6g}, "
                     f"{self.evaluations} evaluations")

    def make_optimizer(self, seed: int, x0=None, initial_best=None, lam=None):
        start = self.x0 if x0 is None else x0
        return opt_mod.init(start, self.space.sigma0, lam=lam, seed=seed, kind=self.optimizer_kind,
                            initial_best=initial_best)

    def result(self, partition: Partition) -> StrategyResult:
        row, cost = self.best_full_row()
        baseline = (self.matrix.configs[row], cost) if row is not None else (
            self.initial_config, self.row_mean_of_init())
        configs = [self.matrix.configs[int(r)] for r in partition.representative_config_index]
        oracle = self.oracle_mean()
        logger.info(f"Finished {self.strategy} run, seed {self.seed}: mean cost {partition.mean_cost:.6g} "
                    f"over {partition.k_effective} groups, oracle {oracle:.6g}, {self.evaluations} evaluations")
        return StrategyResult(strategy=self.strategy, partition=partition, per_partition_config=configs,
                              response_matrix=self.matrix, run_log=self.log, baseline_best=baseline,
                              oracle_mean=oracle)

    def row_mean_of_init(self) -> float:
        penalty = self.penalty()
        return float(np.mean([penalty if math.isinf(c) else c for c in self.init_costs.values()]))


def _tune_generation(run: TuningRun, optimizer, instances: Sequence[str]):
    """Ask, evaluate on the given instances, tell the mean costs"""
    batch = optimizer.ask()
    rows = run.evaluate_points(batch.points, instances)
    penalty = run.penalty()
    means = [run.row_mean(r, penalty) for r in rows]
    optimizer.tell(batch, means)
    return rows, means


def _check_k(K: int, instances: int, method: str):
    if K < 1:
        raise ValueError(f"number of partitions must be positive, got {K}")
    if method == "kmeans" and K > instances:
        raise ValueError(f"cannot form {K} clusters from {instances} instances")


def optimize_single(space: ParamSpace, evaluator, budget, seed: int = 0,
                    optimizer: str = "cmaes", lam: Optional[int] = None) -> StrategyResult:
    """Tune one configuration for the whole dataset; the optimizer sees mean costs"""
    budget = as_budget(budget)
    run = TuningRun("single", space, evaluator, budget, seed, optimizer)
    opt = run.make_optimizer(seed, lam=lam)
    zeros = [0] * len(run.instances)
    for _ in range(budget.max_iterations):
        _tune_generation(run, opt, run.instances)
        _, cost = run.best_full_row()
        run.record(zeros, cost)
    row, _ = run.best_full_row()
    return run.result(make_partition(run.partition_input(), zeros, [row]))


def _explore(run: TuningRun, opt, generations: int, K: int, method: str) -> Partition:
    """Tune on all instances; the last generation's matrix is partitioned with `method`.

    Earlier progress records use greedy search in place of exact enumeration.
    """
    partition = None
    for generation in range(generations):
        _tune_generation(run, opt, run.instances)
        last = generation == generations - 1
        progress = "greedy" if method == "exact" and not last else method
        partition = partition_matrix(run.partition_input(), K, method=progress, seed=run.seed)
        run.record(partition.assignment, partition.mean_cost)
    return partition


def posthoc(space: ParamSpace, evaluator, budget, K: int, seed: int = 0, method: str = "exact",
            optimizer: str = "cmaes", lam: Optional[int] = None) -> StrategyResult:
    """Tune on the whole dataset, then split instances by the configurations they prefer"""
    budget = as_budget(budget)
    _check_k(K, len(evaluator.instance_ids), method)
    run = TuningRun("posthoc", space, evaluator, budget, seed, optimizer,
                    extra_header={"k": K, "method": method})
    opt = run.make_optimizer(seed, lam=lam)
    partition = _explore(run, opt, budget.max_iterations, K, method)
    return run.result(partition)


def posthoc_matrix(matrix: ResponseMatrix, K: int, method: str = "exact", seed: int = 0) -> Partition:
    """Partition a precomputed response matrix, no optimizer involved"""
    if len(matrix) == 0:
        raise ValueError("matrix has no configurations")
    _check_k(K, len(matrix.instance_ids), method)
    partition = partition_matrix(matrix.partition_input(), K, method=method, seed=seed)
    logger.info(f"Partitioned {len(matrix.instance_ids)} instances over {len(matrix)} configurations "
                f"into {partition.k_effective} groups, mean cost {partition.mean_cost:.6g}")
    return partition


def staged(space: ParamSpace, evaluator, budget, K: int, seed: int = 0, method: str = "exact",
           warm_start: bool = False, optimizer: str = "cmaes", lam: Optional[int] = None) -> StrategyResult:
    """Explore as posthoc, then run one optimizer per group on that group's instances"""
    budget = as_budget(budget)
    _check_k(K, len(evaluator.instance_ids), method)
    explore_generations = int(math.floor(budget.max_iterations * budget.explore_fraction))
    exploit_generations = budget.max_iterations - explore_generations
    if explore_generations < 1 or exploit_generations < 1:
        raise ValueError(f"budget {budget.max_iterations} with explore fraction {budget.explore_fraction} "
                         f"leaves an empty explore or exploit phase")

    run = TuningRun("staged", space, evaluator, budget, seed, optimizer,
                    extra_header={"k": K, "method": method, "warm_start": warm_start})
    explored = _explore(run, run.make_optimizer(seed, lam=lam), explore_generations, K, method)
    logger.info(f"Explore phase done after {explore_generations} generations: "
                f"{explored.k_effective} groups, mean cost {explored.mean_cost:.6g}")

    groups = [[run.instances[j] for j in explored.members(k)] for k in range(explored.k)]
    explore_reps = [int(r) for r in explored.representative_config_index]
    optimizers = {}
    best: Dict[int, Tuple[int, float]] = {}
    for k, members in enumerate(groups):
        if not members:
            logger.info(f"Group {k} is empty after exploring; keeping its representative")
            continue
        if warm_start:
            start = space.to_search_space(run.matrix.configs[explore_reps[k]])
            cost = float(explored.per_partition_cost[k])
            best[k] = (explore_reps[k], cost)
            optimizers[k] = run.make_optimizer(child_seed(seed, k + 1), x0=start, initial_best=(start, cost), lam=lam)
        else:
            optimizers[k] = run.make_optimizer(child_seed(seed, k + 1), lam=lam)

    def current_reps():
        return [best[k][0] if k in best else explore_reps[k] for k in range(explored.k)]

    for _ in range(exploit_generations):
        for k, opt in optimizers.items():
            rows, means = _tune_generation(run, opt, groups[k])
            i = int(np.argmin(means))
            if k not in best or means[i] < best[k][1]:
                best[k] = (rows[i], means[i])
        current = make_partition(run.partition_input(), explored.assignment, current_reps())
        run.record(explored.assignment, current.mean_cost)

    return run.result(make_partition(run.partition_input(), explored.assignment, current_reps()))


# ──────────────────────────────────────────────────────────────────────────────
#  Bandits
# ──────────────────────────────────────────────────────────────────────────────

@dataclass
class BanditState:
    """Per-instance Gaussian arms, one per optimizer"""
    means: np.ndarray   # N x K running mean cost
    counts: np.ndarray  # N x K pulls
    scale: np.ndarray   # N observation scale

    @classmethod
    def from_costs(cls, costs, K: int) -> "BanditState":
        """All K arms of instance j start at the mean of row j; scale is its population std"""
        costs = np.asarray(costs, dtype=float)
        if costs.ndim != 2 or costs.shape[1] < 1:
            raise ValueError(f"initial costs must be an N x lambda matrix, got shape {costs.shape}")
        if K < 1:
            raise ValueError(f"number of arms must be positive, got {K}")
        mu = costs.mean(axis=1)
        scale = np.maximum(costs.std(axis=1), SCALE_FLOOR)
        return cls(means=np.repeat(mu[:, None], K, axis=1), counts=np.zeros((costs.shape[0], K), dtype=int),
                   scale=scale)

    @property
    def arms(self) -> int:
        return self.means.shape[1]

    def best_arms(self) -> np.ndarray:
        return np.argmin(self.means, axis=1)


def bandit_pull(b: BanditState, instance: int, rng: np.random.Generator) -> int:
    """Thompson sample one instance's arms; lower sampled cost wins"""
    std = b.scale[instance] / np.sqrt(np.maximum(b.counts[instance], 1))
    theta = b.means[instance] + std * rng.standard_normal(b.arms)
    return int(np.argmin(theta))


def bandit_update(b: BanditState, instance: int, arm: int, cost: float) -> BanditState:
    if not 0 <= arm < b.arms:
        raise ValueError(f"arm {arm} out of range for {b.arms} arms")
    b.counts[instance, arm] += 1
    n = b.counts[instance, arm]
    if n == 1:
        # the initialization estimate is replaced, not averaged in
        b.means[instance, arm] = cost
    else:
        b.means[instance, arm] += (cost - b.means[instance, arm]) / n
    return b


def online(space: ParamSpace, evaluator, budget, K: int, seed: int = 0,
           optimizer: str = "cmaes", lam: Optional[int] = None) -> StrategyResult:
    """K optimizers; each iteration every instance picks one by Thompson sampling.

    One generation on all instances seeds the bandits. Each optimizer then
    proposes one candidate per iteration, evaluated on the instances that
    picked it; an optimizer nobody picked is skipped for that iteration.
    """
    budget = as_budget(budget)
    _check_k(K, len(evaluator.instance_ids), "online")
    run = TuningRun("online", space, evaluator, budget, seed, optimizer, extra_header={"k": K})
    N = len(run.instances)

    seeding = run.make_optimizer(child_seed(seed, K + 1), lam=lam)
    init_rows = run.evaluate_points(seeding.ask().points, run.instances)
    penalty = run.penalty()
    init_costs = run.matrix.filled(penalty)[init_rows].T
    bandit = BanditState.from_costs(init_costs, K)
    run.record(bandit.best_arms(), run.best_full_row()[1])

    rng = np.random.default_rng(child_seed(seed, 0))
    sequential = [SequentialOptimizer(run.make_optimizer(child_seed(seed, k + 1), lam=lam)) for k in range(K)]
    best: List[Optional[Tuple[int, float]]] = [None] * K
    # the seeding generation counts as the first of the budget
    iterations = (budget.max_iterations - 1) * sequential[0].optimizer.popsize

    for _ in range(iterations):
        arms = np.array([bandit_pull(bandit, j, rng) for j in range(N)])
        for k, seq in enumerate(sequential):
            members = np.flatnonzero(arms == k)
            if members.size == 0:
                continue
            instances = [run.instances[j] for j in members]
            row = run.evaluate_points([seq.current()], instances)[0]
            penalty = run.penalty()
            observed = run.matrix.row_costs(row)
            costs = [penalty if math.isinf(observed[inst]) else observed[inst] for inst in instances]
            mean = float(np.mean(costs))
            seq.report(mean)
            if best[k] is None or mean < best[k][1]:
                best[k] = (row, mean)
            for j, cost in zip(members, costs):
                bandit_update(bandit, int(j), k, cost)
        run.record(bandit.best_arms(), _online_estimate(run, bandit, best))

    # Completion pass: each optimizer's best configuration on the instances assigned to it
    assignment = bandit.best_arms()
    fallback = run.best_full_row()[0]
    final_rows = []
    for k in range(K):
        members = np.flatnonzero(assignment == k)
        if members.size == 0:
            final_rows.append(best[k][0] if best[k] is not None else fallback)
            continue
        config = run.matrix.configs[best[k][0]] if best[k] is not None else run.initial_config
        final_rows.append(run.evaluate_configs([config], [run.instances[j] for j in members])[0])
    partition = make_partition(run.partition_input(), assignment, final_rows)
    run.record(assignment, partition.mean_cost, strategy="online/final")
    logger.info(f"Online assignment sizes: {np.bincount(assignment, minlength=K).tolist()} over {N} instances")
    return run.result(partition)


def _online_estimate(run: TuningRun, bandit: BanditState, best) -> float:
    """Mean over instances of the best arm's cost: observed when available, else the arm's running mean"""
    penalty = run.penalty()
    observed = [run.matrix.row_costs(b[0]) if b is not None else {} for b in best]
    total = 0.0
    for j, arm in enumerate(bandit.best_arms()):
        cost = observed[arm].get(run.instances[j])
        if cost is None:
            cost = bandit.means[j, arm]
        total += penalty if math.isinf(cost) else cost
    return total / len(run.instances)


def run_strategy(name: str, space: ParamSpace, evaluator, budget, K: int = 2, seed: int = 0,
                 method: str = "exact", warm_start: bool = False, optimizer: str = "cmaes",
                 lam: Optional[int] = None) -> StrategyResult:
    if name == "single":
        return optimize_single(space, evaluator, budget, seed=seed, optimizer=optimizer, lam=lam)
    if name == "posthoc":
        return posthoc(space, evaluator, budget, K, seed=seed, method=method, optimizer=optimizer, lam=lam)
    if name == "staged":
        return staged(space, evaluator, budget, K, seed=seed, method=method, warm_start=warm_start,
                      optimizer=optimizer, lam=lam)
    if name == "online":
        return online(space, evaluator, budget, K, seed=seed, optimizer=optimizer, lam=lam)
    raise ValueError(f"unknown strategy '{name}', expected one of {STRATEGY_NAMES}")
