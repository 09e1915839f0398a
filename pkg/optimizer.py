#!/usr/bin/env python3
"""CMA-ES with an ask/tell interface over search-space points.

The update follows the standard formulation (default recombination weights,
rank-one and rank-mu covariance updates, cumulative step-size adaptation).
Only the ranking of the told costs is used, so any strictly increasing
transform of a generation's costs leaves the state unchanged. NaN costs
(failed evaluations) rank last.
"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from paramspace import gaussian_points

logger = logging.getLogger('optimizer')

EIGENVALUE_FLOOR = 1e-14


class OptimizerConfigError(ValueError):
    """Invalid optimizer settings"""


class OptimizerStateError(RuntimeError):
    """Operation not valid in the optimizer's current state"""


@dataclass(frozen=True)
class CandidateBatch:
    points: np.ndarray  # lambda x d
    generation: int

    def __len__(self):
        return self.points.shape[0]


def default_popsize(dimension: int) -> int:
    return 4 + int(math.floor(3 * math.log(dimension)))


class CMAESParameters:
    """Static strategy parameters, set once per dimension and population size"""

    def __init__(self, dimension, popsize=None):
        N = dimension
        self.dimension = N
        self.lam = int(popsize) if popsize is not None else default_popsize(N)
        if self.lam < 2:
            raise OptimizerConfigError(f"population size must be at least 2, got {self.lam}")
        self.mu = self.lam // 2
        raw = np.array([math.log(self.lam / 2 + 0.5) - math.log(i + 1) if i < self.mu else 0.0
                        for i in range(self.lam)])
        self.weights = raw / raw[:self.mu].sum()
        self.mueff = self.weights[:self.mu].sum() ** 2 / (self.weights[:self.mu] ** 2).sum()

        self.cc = (4 + self.mueff / N) / (N + 4 + 2 * self.mueff / N)
        self.cs = (self.mueff + 2) / (N + self.mueff + 5)
        self.c1 = 2 / ((N + 1.3) ** 2 + self.mueff)
        self.cmu = min(1 - self.c1, 2 * (self.mueff - 2 + 1 / self.mueff) / ((N + 2) ** 2 + self.mueff))
        self.damps = 1 + 2 * max(0.0, math.sqrt((self.mueff - 1) / (N + 1)) - 1) + self.cs
        self.chiN = math.sqrt(N) * (1 - 1 / (4 * N) + 1 / (21 * N ** 2))


class BestSolution:
    """Best evaluated point so far; ties keep the earliest"""

    def __init__(self, x=None, f=None, evals=None):
        self.x, self.f, self.evals = x, f, evals

    def update(self, x, f, evals=None):
        if self.f is None or f < self.f:
            self.x = np.array(x, dtype=float)
            self.f = f
            self.evals = evals
        return self


def _tie_averaged_weights(sorted_costs, weights):
    """Recombination weights in sorted order, averaged over runs of equal cost"""
    averaged = weights.copy()
    start = 0
    n = len(sorted_costs)
    while start < n:
        end = start + 1
        while end < n and sorted_costs[end] == sorted_costs[start]:
            end += 1
        if end - start > 1:
            averaged[start:end] = weights[start:end].mean()
        start = end
    return averaged


def _ranking_costs(costs):
    ranked = np.asarray(costs, dtype=float).copy()
    ranked[np.isnan(ranked)] = np.inf
    return ranked


class CMAES:
    """Covariance matrix adaptation evolution strategy.

    The whole run is a pure function of (x0, sigma0, popsize, seed) and the
    sequence of told costs.
    """
    kind = "cmaes"

    def __init__(self, x0, sigma0, popsize=None, seed=0, initial_best: Optional[Tuple[np.ndarray, float]] = None):
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.shape[0] < 1:
            raise OptimizerConfigError("search space dimension must be at least 1")
        if not sigma0 > 0:
            raise OptimizerConfigError(f"initial step size must be positive, got {sigma0}")
        N = x0.shape[0]
        self.params = CMAESParameters(N, popsize)
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)

        self.mean = x0.copy()
        self.sigma = float(sigma0)
        self.C = np.eye(N)
        self.eigenbasis = np.eye(N)
        self.eigenvalues = np.ones(N)
        self.invsqrt = np.eye(N)
        self.pc = np.zeros(N)
        self.ps = np.zeros(N)
        self.generation = 0
        self.counteval = 0
        self.best = BestSolution()
        if initial_best is not None:
            self.best.update(initial_best[0], float(initial_best[1]), 0)

    @property
    def popsize(self):
        return self.params.lam

    @property
    def dimension(self):
        return self.params.dimension

    def ask(self) -> CandidateBatch:
        """Sample lambda candidates from m + sigma * B * D * Normal(0, I)"""
        z = self._rng.standard_normal((self.params.lam, self.dimension))
        y = (z * np.sqrt(self.eigenvalues)) @ self.eigenbasis.T
        return CandidateBatch(points=self.mean + self.sigma * y, generation=self.generation)

    def tell(self, batch: CandidateBatch, costs):
        par = self.params
        ranked = _ranking_costs(costs)
        if ranked.shape != (par.lam,) or len(batch) != par.lam:
            raise OptimizerStateError(
                f"expected {par.lam} candidates and costs, got {len(batch)} and {ranked.shape[0]}")
        if batch.generation != self.generation:
            raise OptimizerStateError(
                f"batch belongs to generation {batch.generation}, optimizer is at {self.generation}")

        self.counteval += par.lam
        order = np.argsort(ranked, kind="stable")
        self.best.update(batch.points[order[0]], ranked[order[0]], self.counteval)
        self.generation += 1

        sorted_costs = ranked[order]
        if sorted_costs[0] == sorted_costs[-1]:
            # no ranking information, nothing to learn from
            logger.debug(f"Generation {self.generation}: all costs tie, distribution unchanged")
            return self

        N = self.dimension
        w = _tie_averaged_weights(sorted_costs, par.weights)
        xold = self.mean
        y = (batch.points[order] - xold) / self.sigma  # sorted steps
        y_w = w @ y
        self.mean = xold + self.sigma * y_w

        # Cumulation: update evolution paths
        self.ps = (1 - par.cs) * self.ps + math.sqrt(par.cs * (2 - par.cs) * par.mueff) * (self.invsqrt @ y_w)
        ps_norm = np.linalg.norm(self.ps)
        hsig = (ps_norm / math.sqrt(1 - (1 - par.cs) ** (2 * self.generation)) / par.chiN
                < 1.4 + 2 / (N + 1))
        self.pc = (1 - par.cc) * self.pc + hsig * math.sqrt(par.cc * (2 - par.cc) * par.mueff) * y_w

        # Adapt covariance matrix C
        c1a = par.c1 * (1 - (1 - hsig) * par.cc * (2 - par.cc))
        rank_mu = (y * w[:, None]).T @ y
        self.C = ((1 - c1a - par.cmu * w.sum()) * self.C
                  + par.c1 * np.outer(self.pc, self.pc)
                  + par.cmu * rank_mu)

        # Adapt step-size sigma
        self.sigma *= math.exp(min(1.0, (par.cs / par.damps) * (ps_norm / par.chiN - 1)))

        self._update_eigensystem()
        logger.debug(f"Generation {self.generation}: best {sorted_costs[0]:.6g}, sigma {self.sigma:.4g}")
        return self

    def _update_eigensystem(self):
        C = (self.C + self.C.T) / 2
        eigenvalues, eigenbasis = np.linalg.eigh(C)
        floor = EIGENVALUE_FLOOR * np.trace(C) / self.dimension
        if eigenvalues.min() < floor:
            eigenvalues = np.maximum(eigenvalues, floor)
            C = (eigenbasis * eigenvalues) @ eigenbasis.T
            C = (C + C.T) / 2
        self.C = C
        self.eigenvalues = eigenvalues
        self.eigenbasis = eigenbasis
        self.invsqrt = (eigenbasis / np.sqrt(eigenvalues)) @ eigenbasis.T

    def recommend(self) -> np.ndarray:
        """Best evaluated point so far (not the distribution mean)"""
        if self.best.x is None:
            raise OptimizerStateError("no candidates have been evaluated yet")
        return self.best.x.copy()

    def state_dict(self) -> dict:
        return {
            "mean": self.mean.copy(), "sigma": self.sigma, "C": self.C.copy(),
            "pc": self.pc.copy(), "ps": self.ps.copy(), "generation": self.generation,
            "best_x": None if self.best.x is None else self.best.x.copy(), "best_f": self.best.f,
        }


class RandomSearch:
    """Independent Gaussian sampling around x0 with the CMAES ask/tell contract"""
    kind = "random"

    def __init__(self, x0, sigma0, popsize=None, seed=0, initial_best: Optional[Tuple[np.ndarray, float]] = None):
        self.mean = np.asarray(x0, dtype=float).ravel().copy()
        if self.mean.shape[0] < 1:
            raise OptimizerConfigError("search space dimension must be at least 1")
        if not sigma0 > 0:
            raise OptimizerConfigError(f"initial step size must be positive, got {sigma0}")
        self.sigma = float(sigma0)
        self.popsize = int(popsize) if popsize is not None else default_popsize(self.mean.shape[0])
        if self.popsize < 2:
            raise OptimizerConfigError(f"population size must be at least 2, got {self.popsize}")
        self.seed = int(seed)
        self._rng = np.random.default_rng(self.seed)
        self.generation = 0
        self.counteval = 0
        self.best = BestSolution()
        if initial_best is not None:
            self.best.update(initial_best[0], float(initial_best[1]), 0)

    @property
    def dimension(self):
        return self.mean.shape[0]

    def ask(self) -> CandidateBatch:
        points = gaussian_points(self.mean, self.sigma, self.popsize, self._rng)
        return CandidateBatch(points=points, generation=self.generation)

    def tell(self, batch: CandidateBatch, costs):
        ranked = _ranking_costs(costs)
        if ranked.shape != (self.popsize,) or len(batch) != self.popsize:
            raise OptimizerStateError(
                f"expected {self.popsize} candidates and costs, got {len(batch)} and {ranked.shape[0]}")
        if batch.generation != self.generation:
            raise OptimizerStateError(
                f"batch belongs to generation {batch.generation}, optimizer is at {self.generation}")
        self.counteval += self.popsize
        first = int(np.argmin(ranked))
        self.best.update(batch.points[first], ranked[first], self.counteval)
        self.generation += 1
        return self

    def recommend(self) -> np.ndarray:
        if self.best.x is None:
            raise OptimizerStateError("no candidates have been evaluated yet")
        return self.best.x.copy()


OPTIMIZERS = {"cmaes": CMAES, "random": RandomSearch}


def init(x0, sigma0, lam=None, seed=0, kind="cmaes", initial_best=None):
    """Create a fresh optimizer: mean x0, identity covariance, lambda defaulting to 4 + floor(3 ln d)"""
    if kind not in OPTIMIZERS:
        raise OptimizerConfigError(f"unknown optimizer '{kind}', expected one of {sorted(OPTIMIZERS)}")
    return OPTIMIZERS[kind](x0, sigma0, popsize=lam, seed=seed, initial_best=initial_best)


class SequentialOptimizer:
    """Hands out a generation's candidates one at a time.

    The same candidate is returned until a cost is reported for it; once all
    lambda candidates have costs the generation is told to the optimizer.
    """

    def __init__(self, optimizer):
        self.optimizer = optimizer
        self._batch = None
        self._costs = []

    @property
    def told_any(self):
        return self.optimizer.best.x is not None

    def current(self) -> np.ndarray:
        if self._batch is None:
            self._batch = self.optimizer.ask()
            self._costs = []
        return self._batch.points[len(self._costs)]

    def report(self, cost: float):
        if self._batch is None:
            raise OptimizerStateError("report called before a candidate was handed out")
        self._costs.append(cost)
        if len(self._costs) == len(self._batch):
            self.optimizer.tell(self._batch, self._costs)
            self._batch = None
            self._costs = []
