#!/usr/bin/env python3
"""Tunable parameter spaces and the transform to the optimizer's search space.

User parameters live in their own units. The optimizer works on an
unconstrained real vector: log-scaled parameters are mapped through the
natural log, linear ones pass through unchanged. Bounds are enforced only
when decoding back to user units (by clamping), so the optimizer itself
stays unconstrained.
"""
import json
import logging
import math
from typing import Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from pydantic_core import PydanticCustomError

logger = logging.getLogger('paramspace')

DEFAULT_SIGMA0 = 0.5


class ParamSpaceError(ValueError):
    """Base error for parameter space problems"""


class DomainError(ParamSpaceError):
    """A value lies outside the domain of its scale transform"""


class SpaceParseError(ParamSpaceError):
    """A space file could not be parsed"""


class ParamSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    name: str = Field(min_length=1)
    init: float
    scale: Literal["log", "linear"] = "log"
    lower: Optional[float] = Field(default=None, alias="min")
    upper: Optional[float] = Field(default=None, alias="max")

    @field_validator("init", "lower", "upper")
    @classmethod
    def _finite(cls, value):
        if value is not None and not math.isfinite(value):
            raise ValueError("must be finite")
        return value

    @model_validator(mode="after")
    def _check_domain(self):
        if self.scale == "log" and self.init <= 0:
            raise PydanticCustomError(
                "log_domain",
                "init of log-scaled parameter '{name}' must be positive, got {init}",
                {"name": self.name, "init": self.init},
            )
        if self.lower is not None and self.upper is not None and not self.lower < self.upper:
            raise ValueError(f"min ({self.lower}) must be below max ({self.upper}) for '{self.name}'")
        if self.lower is not None and self.init < self.lower:
            raise ValueError(f"init {self.init} of '{self.name}' is below min {self.lower}")
        if self.upper is not None and self.init > self.upper:
            raise ValueError(f"init {self.init} of '{self.name}' is above max {self.upper}")
        return self

    def encode(self, value: float) -> float:
        if self.scale == "log":
            if not value > 0:
                raise DomainError(f"parameter '{self.name}' is log-scaled and needs a positive value, got {value}")
            return math.log(value)
        return float(value)

    def decode(self, coord: float) -> float:
        if self.scale == "log":
            # exp overflows to inf for huge coordinates; keep the value representable
            value = math.exp(min(coord, 709.0)) if coord > -745.0 else 5e-324
        else:
            value = float(coord)
        if self.lower is not None and value < self.lower:
            value = self.lower
        if self.upper is not None and value > self.upper:
            value = self.upper
        return value


class Configuration(BaseModel):
    """Parameter values in user units, keyed by parameter name."""
    model_config = ConfigDict(frozen=True)

    values: Dict[str, float]

    def fingerprint(self) -> str:
        """Canonical full-precision serialization used as a cache key"""
        return json.dumps({name: repr(float(v)) for name, v in sorted(self.values.items())},
                          separators=(",", ":"))

    def __getitem__(self, name):
        return self.values[name]


class ParamSpace(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid", populate_by_name=True)

    params: List[ParamSpec] = Field(min_length=1)
    sigma0: float = Field(default=DEFAULT_SIGMA0, alias="sigma", gt=0)

    @model_validator(mode="after")
    def _unique_names(self):
        seen = set()
        for spec in self.params:
            if spec.name in seen:
                raise PydanticCustomError(
                    "duplicate_name", "duplicate parameter name '{name}'", {"name": spec.name})
            seen.add(spec.name)
        return self

    @classmethod
    def linear(cls, dimension: int, sigma0: float = DEFAULT_SIGMA0, init: float = 0.0):
        """Unbounded linear space named x0..x{d-1}, used for synthetic problems"""
        return cls(params=[ParamSpec(name=f"x{i}", init=init, scale="linear") for i in range(dimension)],
                   sigma0=sigma0)

    @property
    def dimension(self) -> int:
        return len(self.params)

    @property
    def names(self) -> List[str]:
        return [spec.name for spec in self.params]

    def initial_config(self) -> Configuration:
        return Configuration(values={spec.name: spec.init for spec in self.params})

    def check_config(self, cfg: Configuration) -> None:
        if set(cfg.values) != set(self.names):
            raise ParamSpaceError(
                f"configuration keys {sorted(cfg.values)} do not match space parameters {sorted(self.names)}")

    def to_search_space(self, cfg: Configuration) -> np.ndarray:
        self.check_config(cfg)
        return np.array([spec.encode(cfg.values[spec.name]) for spec in self.params], dtype=float)

    def from_search_space(self, point) -> Configuration:
        coords = np.asarray(point, dtype=float).ravel()
        if coords.shape[0] != self.dimension:
            raise ParamSpaceError(f"search point has length {coords.shape[0]}, space has dimension {self.dimension}")
        return Configuration(values={spec.name: spec.decode(float(c)) for spec, c in zip(self.params, coords)})

    def describe(self) -> dict:
        return self.model_dump(by_alias=True, exclude_none=True)


def to_search_space(space: ParamSpace, cfg: Configuration) -> np.ndarray:
    return space.to_search_space(cfg)


def from_search_space(space: ParamSpace, point) -> Configuration:
    return space.from_search_space(point)


def gaussian_points(center, sigma: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """`count` search points from Normal(center, sigma^2 I), one per row"""
    if count < 1:
        raise ValueError(f"count must be positive, got {count}")
    center = np.asarray(center, dtype=float).ravel()
    return center + sigma * rng.standard_normal((count, center.shape[0]))


def sample_configurations(space: ParamSpace, count: int, seed: int = 0) -> List[Configuration]:
    """Draw `count` configurations from Normal(x0, sigma0^2 I) in search space"""
    x0 = space.to_search_space(space.initial_config())
    points = gaussian_points(x0, space.sigma0, count, np.random.default_rng(seed))
    return [space.from_search_space(p) for p in points]


def _describe_validation_error(err: ValidationError):
    first = err.errors()[0]
    field = ".".join(str(part) for part in first["loc"]) or "<document>"
    return first["type"], f"{field}: {first['msg']}"


def parse_space_file(text: str) -> ParamSpace:
    """Parse a JSON space document into a ParamSpace.

    Scale defaults to log and sigma to 0.5; unknown keys are rejected.
    """
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise SpaceParseError(f"space file is not valid JSON: {e}") from e
    if not isinstance(document, dict):
        raise SpaceParseError("space file must be a JSON object with a 'params' list")

    try:
        space = ParamSpace.model_validate(document)
    except ValidationError as e:
        kind, message = _describe_validation_error(e)
        if kind == "log_domain":
            raise DomainError(message) from e
        raise SpaceParseError(message) from e

    logger.debug(f"Loaded parameter space with {space.dimension} parameters, sigma {space.sigma0}")
    return space


def load_space(path) -> ParamSpace:
    with open(path, "r", encoding="utf-8") as f:
        return parse_space_file(f.read())
