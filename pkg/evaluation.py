#!/usr/bin/env python3
"""Cost bookkeeping: the response matrix, aggregates, oracle and run logs.

Inside a ResponseMatrix a missing entry is NaN and a failed evaluation is
+inf. Means replace failures by a finite penalty so one crashed run does not
poison the average; minima (the oracle) see failures as +inf.
"""
import io
import json
import logging
import math
import warnings
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from paramspace import Configuration

logger = logging.getLogger('evaluation')

FAIL = "fail"
FAILED = math.inf
DEFAULT_FAILURE_PENALTY = 1.0
CSV_FORMAT = ".17g"


class DegenerateScaleError(ValueError):
    """Initial and oracle costs do not span a usable normalization range"""


class MatrixFormatError(ValueError):
    """A matrix CSV or run log could not be parsed"""


def failure_penalty_for(worst_finite: Optional[float]) -> float:
    """Penalty replacing failed evaluations in means: twice the worst finite cost seen"""
    if worst_finite is None or not math.isfinite(worst_finite):
        return DEFAULT_FAILURE_PENALTY
    if worst_finite > 0:
        return 2.0 * worst_finite
    return worst_finite + 1.0


def encode_cost(value: float):
    return FAIL if math.isinf(value) else float(value)


def decode_cost(value) -> float:
    if value == FAIL:
        return FAILED
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MatrixFormatError(f"invalid cost value {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise MatrixFormatError(f"cost must be finite or '{FAIL}', got {value!r}")
    return value


class ResponseMatrix:
    """Costs of every evaluated configuration (rows) on every instance (columns)."""

    def __init__(self, instance_ids: Sequence[str]):
        self.instance_ids = [str(i) for i in instance_ids]
        if len(set(self.instance_ids)) != len(self.instance_ids):
            raise ValueError("instance ids must be unique")
        self._column = {inst: j for j, inst in enumerate(self.instance_ids)}
        self.config_ids: List[str] = []
        self.configs: List[Optional[Configuration]] = []
        self._rows: List[np.ndarray] = []
        self._stacked = None

    def __len__(self):
        return len(self._rows)

    @property
    def shape(self):
        return len(self._rows), len(self.instance_ids)

    def column(self, instance_id) -> int:
        try:
            return self._column[str(instance_id)]
        except KeyError:
            raise ValueError(f"unknown instance id '{instance_id}'") from None

    def columns(self, instance_ids: Iterable[str]) -> List[int]:
        return [self.column(i) for i in instance_ids]

    def add_row(self, config_id: str, config: Optional[Configuration], costs: Mapping[str, float]) -> int:
        row = np.full(len(self.instance_ids), np.nan)
        for inst, cost in costs.items():
            row[self.column(inst)] = float(cost)
        self.config_ids.append(str(config_id))
        self.configs.append(config)
        self._rows.append(row)
        self._stacked = None
        return len(self._rows) - 1

    @property
    def costs(self) -> np.ndarray:
        """M x N array; NaN missing, +inf failed"""
        if self._stacked is None:
            if self._rows:
                self._stacked = np.vstack(self._rows)
            else:
                self._stacked = np.empty((0, len(self.instance_ids)))
        return self._stacked

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.costs)

    @property
    def failed(self) -> np.ndarray:
        return np.isinf(self.costs)

    def row_costs(self, row: int) -> Dict[str, float]:
        values = self._rows[row]
        return {inst: float(values[j]) for j, inst in enumerate(self.instance_ids) if not np.isnan(values[j])}

    def worst_finite(self) -> Optional[float]:
        X = self.costs
        finite = X[np.isfinite(X)]
        return float(finite.max()) if finite.size else None

    def failure_penalty(self) -> float:
        return failure_penalty_for(self.worst_finite())

    def filled(self, penalty: Optional[float] = None) -> np.ndarray:
        """Costs with failures replaced by the penalty; missing entries stay NaN"""
        penalty = self.failure_penalty() if penalty is None else penalty
        X = self.costs.copy()
        X[np.isinf(X)] = penalty
        return X

    def partition_input(self, penalty: Optional[float] = None) -> np.ndarray:
        """N x M matrix for partitioning: failures penalized, missing entries ineligible (+inf)"""
        X = self.filled(penalty)
        X[np.isnan(X)] = np.inf
        return X.T.copy()


def mean_per_config(m: ResponseMatrix, subset: Optional[Iterable[str]] = None,
                    penalty: Optional[float] = None) -> np.ndarray:
    """Mean cost of every configuration over the observed instances (optionally a subset)"""
    X = m.filled(penalty)
    if subset is not None:
        cols = m.columns(subset)
        if not cols:
            raise ValueError("instance subset must not be empty")
        X = X[:, cols]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        return np.nanmean(X, axis=1)


def oracle_per_datum(m: ResponseMatrix, penalty: Optional[float] = None) -> np.ndarray:
    """Best cost each instance received from any evaluated configuration.

    Failures count as +inf unless a penalty is given, in which case they count as the penalty.
    """
    if len(m) == 0:
        raise ValueError("oracle needs at least one evaluated configuration")
    X = m.costs if penalty is None else m.filled(penalty)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", category=RuntimeWarning)
        return np.nanmin(X, axis=0)


def merge_matrices(matrices: Sequence[ResponseMatrix]) -> ResponseMatrix:
    """Concatenate rows of several matrices over the union of their instance ids"""
    instance_ids = []
    seen = set()
    for m in matrices:
        for inst in m.instance_ids:
            if inst not in seen:
                seen.add(inst)
                instance_ids.append(inst)
    merged = ResponseMatrix(instance_ids)
    for m in matrices:
        for row in range(len(m)):
            merged.add_row(m.config_ids[row], m.configs[row], m.row_costs(row))
    return merged


def normalized_score(cost: float, init_cost: float, oracle_cost: float) -> float:
    """0 at the oracle, 1 at the initial configuration"""
    if not init_cost > oracle_cost:
        raise DegenerateScaleError(
            f"initial cost {init_cost} does not exceed oracle cost {oracle_cost}; report raw costs instead")
    return max(0.0, (cost - oracle_cost) / (init_cost - oracle_cost))


def normalize_rows(X) -> np.ndarray:
    """Shift each row to zero mean and scale to unit population variance; constant rows become zeros"""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("normalize_rows expects a 2-d matrix")
    mean = X.mean(axis=1, keepdims=True)
    std = X.std(axis=1, keepdims=True)
    constant = std <= 1e-12 * np.maximum(1.0, np.abs(mean))
    safe_std = np.where(constant, 1.0, std)
    return np.where(constant, 0.0, (X - mean) / safe_std)


def knn_predict_partition(train_features, train_labels, query):
    """Label of the nearest training vector (1-NN); ties go to the lowest training index"""
    train = np.atleast_2d(np.asarray(train_features, dtype=float))
    labels = list(train_labels)
    q = np.asarray(query, dtype=float).ravel()
    if train.shape[0] < 1:
        raise ValueError("at least one training point is required")
    if len(labels) != train.shape[0]:
        raise ValueError(f"{train.shape[0]} training vectors but {len(labels)} labels")
    if q.shape[0] != train.shape[1]:
        raise ValueError(f"query has dimension {q.shape[0]}, training features have {train.shape[1]}")
    distances = cdist(q[None, :], train, metric="sqeuclidean")[0]
    return labels[int(np.argmin(distances))]


# ──────────────────────────────────────────────────────────────────────────────
#  Matrix CSV
# ──────────────────────────────────────────────────────────────────────────────

def _parse_cell(cell, where) -> float:
    if not isinstance(cell, str) or cell == "":
        return math.nan
    if cell == FAIL:
        return FAILED
    try:
        value = float(cell)
    except ValueError:
        raise MatrixFormatError(f"{where}: cannot parse cost '{cell}'") from None
    if not math.isfinite(value):
        raise MatrixFormatError(f"{where}: cost must be finite, empty or '{FAIL}', got '{cell}'")
    return value


def read_matrix_csv(source) -> ResponseMatrix:
    """Read a matrix CSV from a path, text or file-like object"""
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        table = pd.read_csv(source, header=None, dtype=str, keep_default_na=False, na_filter=False)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise MatrixFormatError(f"matrix CSV could not be read: {e}") from e
    header = list(table.iloc[0])
    if not header or header[0] != "config_id":
        raise MatrixFormatError("first header cell of a matrix CSV must be 'config_id'")
    try:
        m = ResponseMatrix(header[1:])
    except ValueError as e:
        raise MatrixFormatError(str(e)) from e
    for line, values in enumerate(table.iloc[1:].itertuples(index=False), start=2):
        values = list(values)
        costs = {}
        for inst, cell in zip(m.instance_ids, values[1:]):
            value = _parse_cell(cell, f"line {line}, column '{inst}'")
            if not math.isnan(value):
                costs[inst] = value
        m.add_row(values[0], None, costs)
    logger.info(f"Loaded matrix with {len(m)} configurations over {len(m.instance_ids)} instances")
    return m


def _format_cell(value: float) -> str:
    if math.isnan(value):
        return ""
    if math.isinf(value):
        return FAIL
    return format(value, CSV_FORMAT)


def matrix_to_csv(m: ResponseMatrix) -> str:
    rows = [[cid] + [_format_cell(v) for v in m.costs[i]] for i, cid in enumerate(m.config_ids)]
    table = pd.DataFrame(rows, columns=["config_id"] + m.instance_ids, dtype=object)
    return table.to_csv(index=False, lineterminator="\n")


def write_matrix_csv(m: ResponseMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(matrix_to_csv(m))


# ──────────────────────────────────────────────────────────────────────────────
#  Run logs
# ──────────────────────────────────────────────────────────────────────────────

class RunLog:
    """Append-only record of one tuning run; replaying it rebuilds the response matrix."""

    def __init__(self, header: dict):
        if "instance_ids" not in header:
            raise ValueError("run log header must list instance_ids")
        self.header = dict(header)
        self.records: List[dict] = []

    @property
    def last_iteration(self) -> int:
        return self.records[-1]["iteration"] if self.records else 0

    def append(self, iteration: int, strategy: str, seed: int, candidates: List[dict],
               assignment: Optional[Sequence[int]] = None, best_mean_cost: Optional[float] = None,
               evaluations: Optional[int] = None) -> dict:
        """Add one iteration; candidates are dicts with id, config values and observed costs"""
        if iteration <= self.last_iteration:
            raise ValueError(f"iteration {iteration} does not follow {self.last_iteration}")
        record = {
            "iteration": int(iteration),
            "strategy": strategy,
            "seed": int(seed),
            "candidates": [
                {"id": c["id"],
                 "config": {k: float(v) for k, v in c["config"].items()},
                 "costs": {inst: encode_cost(v) for inst, v in c["costs"].items()}}
                for c in candidates
            ],
            "assignment": None if assignment is None else [int(a) for a in assignment],
            "best_mean_cost": (float(best_mean_cost)
                               if best_mean_cost is not None and math.isfinite(best_mean_cost) else None),
            "evaluations": None if evaluations is None else int(evaluations),
        }
        self.records.append(record)
        return record

    def to_matrix(self) -> ResponseMatrix:
        m = ResponseMatrix(self.header["instance_ids"])
        for record in self.records:
            for cand in record["candidates"]:
                m.add_row(cand["id"], Configuration(values=cand["config"]),
                          {inst: decode_cost(v) for inst, v in cand["costs"].items()})
        return m

    def init_costs(self) -> Dict[str, float]:
        return {inst: decode_cost(v) for inst, v in self.header.get("init_costs", {}).items()}

    def dumps(self) -> str:
        lines = [json.dumps({"header": self.header}, ensure_ascii=False, separators=(",", ":"))]
        lines += [json.dumps(r, ensure_ascii=False, separators=(",", ":")) for r in self.records]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "RunLog":
        lines = [line for line in text.split("\n") if line.strip()]
        if not lines:
            raise MatrixFormatError("run log is empty")
        try:
            first = json.loads(lines[0])
            if not isinstance(first, dict) or not isinstance(first.get("header"), dict):
                raise MatrixFormatError("first line of a run log must hold the header")
            log = cls(first["header"])
            for line in lines[1:]:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise MatrixFormatError(f"run log record must be a JSON object, got {line[:40]!r}")
                log.records.append(record)
        except json.JSONDecodeError as e:
            raise MatrixFormatError(f"run log line is not valid JSON: {e}") from e
        return log

    @classmethod
    def load(cls, path) -> "RunLog":
        return cls.loads(Path(path).read_text(encoding="utf-8"))
