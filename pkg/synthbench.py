#!/usr/bin/env python3
"""Synthetic multi-modal tuning benchmark.

K modes of N instances each. Every instance is one of four classic test
functions, rotated, shifted to its mode's center and rescaled so that its
typical value on the unit sphere around the minimum is about one.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence

import numpy as np

logger = logging.getLogger('synthbench')

BASE_FUNCTIONS = ("ackley", "griewank", "rastrigin", "zakharov")
CENTER_RANGE = 2.0
SCALE_SAMPLES = 128
MAX_CENTER_DRAWS = 10000


# Terms are grouped so every summand is non-negative in floating point and
# the value at the origin is exactly 0.

def ackley(x):
    x = np.asarray(x, dtype=float)
    a, b, c = 20.0, 0.2, 2.0 * np.pi
    return float(a * (1.0 - np.exp(-b * np.sqrt(np.mean(x ** 2)))) + (np.e - np.exp(np.mean(np.cos(c * x)))))


def griewank(x):
    x = np.asarray(x, dtype=float)
    i = np.arange(1, x.shape[0] + 1)
    return float(np.sum(x ** 2) / 4000.0 + (1.0 - np.prod(np.cos(x / np.sqrt(i)))))


def rastrigin(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(x ** 2 + 10.0 * (1.0 - np.cos(2.0 * np.pi * x))))


def zakharov(x):
    x = np.asarray(x, dtype=float)
    weighted = np.sum(0.5 * np.arange(1, x.shape[0] + 1) * x)
    return float(np.sum(x ** 2) + weighted ** 2 + weighted ** 4)


def zakharov_sphere_mean(d: int) -> float:
    """Exact mean of zakharov over the unit sphere in d dimensions, for any rotation.

    With weights a_i = i/2 and v uniform on the sphere, E[(a.v)^2] = |a|^2 / d and
    E[(a.v)^4] = 3 |a|^4 / (d (d + 2)). Sampled means converge slowly because of the quartic term.
    """
    a2 = d * (d + 1) * (2 * d + 1) / 24.0
    return 1.0 + a2 / d + 3.0 * a2 ** 2 / (d * (d + 2))


FUNCTIONS = {"ackley": ackley, "griewank": griewank, "rastrigin": rastrigin, "zakharov": zakharov}


def random_rotation(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-uniform rotation: QR of a Gaussian matrix with sign correction, det forced to +1"""
    if d < 1:
        raise ValueError(f"dimension must be positive, got {d}")
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    Q = Q * signs
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def unit_sphere_points(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((count, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True)
class SyntheticInstance:
    function: str
    rotation: np.ndarray
    center: np.ndarray
    scale: float
    mode: int

    def __call__(self, x) -> float:
        y = self.rotation @ (np.asarray(x, dtype=float) - self.center)
        return self.scale * FUNCTIONS[self.function](y)


@dataclass(frozen=True)
class SyntheticProblem:
    dimension: int
    modes: int
    per_mode: int
    seed: int
    centers: np.ndarray
    instances: List[SyntheticInstance]
    min_separation: float = 0.0
    labels: np.ndarray = field(default=None)

    @property
    def instance_ids(self) -> List[str]:
        return [f"mode{inst.mode}-{i:04d}" for i, inst in enumerate(self.instances)]

    def descriptor(self) -> Dict:
        return {"kind": "synthetic", "seed": self.seed, "dim": self.dimension, "modes": self.modes,
                "per_mode": self.per_mode, "min_separation": self.min_separation}


def _draw_centers(rng, K, d, min_separation):
    for _ in range(MAX_CENTER_DRAWS):
        centers = rng.uniform(-CENTER_RANGE, CENTER_RANGE, size=(K, d))
        if K < 2 or min_separation <= 0:
            return centers
        gaps = [np.linalg.norm(centers[a] - centers[b]) for a in range(K) for b in range(a + 1, K)]
        if min(gaps) >= min_separation:
            return centers
    raise ValueError(f"could not draw {K} centers in [-{CENTER_RANGE}, {CENTER_RANGE}]^{d} "
                     f"separated by {min_separation}")


def make_problem(d: int, K: int, N: int, seed: int, min_separation: float = 0.0) -> SyntheticProblem:
    """Generate K modes x N instances; instance costs are zero exactly at their mode center"""
    if d < 2 or K < 1 or N < 1:
        raise ValueError(f"need d >= 2, K >= 1, N >= 1; got d={d}, K={K}, N={N}")
    rng = np.random.default_rng(seed)
    centers = _draw_centers(rng, K, d, min_separation)
    instances = []
    for m in range(K):
        for n in range(N):
            index = m * N + n
            kind = BASE_FUNCTIONS[index % len(BASE_FUNCTIONS)]
            rotation = random_rotation(d, rng)
            # drawn for every kind so later rotations do not depend on the function mix
            sphere = unit_sphere_points(SCALE_SAMPLES, d, rng)
            if kind == "zakharov":
                typical = zakharov_sphere_mean(d)
            else:
                typical = np.mean([FUNCTIONS[kind](rotation @ u) for u in sphere])
            instances.append(SyntheticInstance(function=kind, rotation=rotation, center=centers[m].copy(),
                                               scale=1.0 / typical, mode=m))
    labels = np.repeat(np.arange(K), N)
    logger.info(f"Generated synthetic problem d={d}, modes={K}, per mode={N}, seed={seed}")
    return SyntheticProblem(dimension=d, modes=K, per_mode=N, seed=seed, centers=centers,
                            instances=instances, min_separation=min_separation, labels=labels)


def eval_datum(problem: SyntheticProblem, index: int, x) -> float:
    if not 0 <= index < len(problem.instances):
        raise ValueError(f"instance index {index} out of range for {len(problem.instances)} instances")
    x = np.asarray(x, dtype=float)
    if x.shape != (problem.dimension,):
        raise ValueError(f"point has shape {x.shape}, problem dimension is {problem.dimension}")
    return problem.instances[index](x)


class SyntheticEvaluator:
    """Evaluator over a synthetic problem; configurations are points named x0..x{d-1}"""

    def __init__(self, problem: SyntheticProblem):
        self.problem = problem
        self.instance_ids = problem.instance_ids
        self._index = {inst: i for i, inst in enumerate(self.instance_ids)}
        self.names = [f"x{i}" for i in range(problem.dimension)]

    def descriptor(self) -> Dict:
        return self.problem.descriptor()

    def evaluate(self, config, instances: Sequence[str]) -> Dict[str, float]:
        x = np.array([config.values[name] for name in self.names])
        return {inst: eval_datum(self.problem, self._index[inst], x) for inst in instances}

    def evaluate_batch(self, configs, instances: Sequence[str]) -> List[Mapping[str, float]]:
        return [self.evaluate(cfg, instances) for cfg in configs]

    def close(self):
        pass
