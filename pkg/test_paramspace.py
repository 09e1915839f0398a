#!/usr/bin/env python3
import json
import logging
import math

import numpy as np
import pytest

from log_config import setup_colored_logging
from paramspace import (Configuration, DomainError, ParamSpace, ParamSpaceError, ParamSpec, SpaceParseError,
                        from_search_space, parse_space_file, sample_configurations, to_search_space)

# Set up logging
setup_colored_logging(level=logging.INFO)
logger = logging.getLogger('test_paramspace')

SPACE_DOC = {
    "params": [
        {"name": "reg", "init": 10.0, "min": 0.01, "max": 1000.0},
        {"name": "window", "init": 5.0, "scale": "log"},
        {"name": "bias", "init": -0.5, "scale": "linear"},
    ],
    "sigma": 0.3,
}


def test_parse_defaults_and_aliases():
    space = parse_space_file(json.dumps({"params": [{"name": "a", "init": 2.0}]}))
    assert space.sigma0 == 0.5
    assert space.params[0].scale == "log"
    space = parse_space_file(json.dumps(SPACE_DOC))
    assert space.sigma0 == 0.3
    assert space.names == ["reg", "window", "bias"]
    assert space.params[0].lower == 0.01 and space.params[0].upper == 1000.0


def test_initial_config_maps_to_log_coordinates():
    space = parse_space_file(json.dumps(SPACE_DOC))
    x0 = to_search_space(space, space.initial_config())
    assert x0[0] == math.log(10.0)
    assert x0[1] == math.log(5.0)
    assert x0[2] == -0.5


def test_decode_clamps_to_bounds():
    space = parse_space_file(json.dumps(SPACE_DOC))
    cfg = from_search_space(space, np.array([50.0, 0.0, 3.0]))
    assert cfg["reg"] == 1000.0
    assert cfg["window"] == 1.0
    assert cfg["bias"] == 3.0
    cfg = from_search_space(space, np.array([-50.0, 1e6, 0.0]))
    assert cfg["reg"] == 0.01
    assert math.isfinite(cfg["window"])


def test_round_trip_inside_bounds():
    space = parse_space_file(json.dumps(SPACE_DOC))
    cfg = Configuration(values={"reg": 3.5, "window": 0.25, "bias": 1.5})
    back = space.from_search_space(space.to_search_space(cfg))
    for name in space.names:
        assert back[name] == pytest.approx(cfg[name], rel=1e-12)


def test_log_parameter_needs_positive_init():
    with pytest.raises(DomainError):
        parse_space_file(json.dumps({"params": [{"name": "a", "init": 0.0}]}))
    with pytest.raises(DomainError):
        ParamSpec(name="a", init=1.0).encode(-2.0)


def test_space_file_errors():
    with pytest.raises(SpaceParseError):
        parse_space_file("{not json")
    with pytest.raises(SpaceParseError):
        parse_space_file(json.dumps({"params": [{"name": "a", "init": 1.0, "step": 2}]}))
    with pytest.raises(SpaceParseError):
        parse_space_file(json.dumps({"params": [{"name": "a", "init": 1.0}, {"name": "a", "init": 2.0}]}))
    with pytest.raises(SpaceParseError):
        parse_space_file(json.dumps({"params": []}))
    with pytest.raises(SpaceParseError):
        parse_space_file(json.dumps({"params": [{"name": "a", "init": 5.0, "min": 1.0, "max": 2.0}]}))
    with pytest.raises(SpaceParseError):
        parse_space_file(json.dumps({"params": [{"name": "a", "init": 1.0}], "sigma": 0}))


def test_check_config_rejects_other_names():
    space = parse_space_file(json.dumps(SPACE_DOC))
    with pytest.raises(ParamSpaceError):
        space.to_search_space(Configuration(values={"reg": 1.0}))
    with pytest.raises(ParamSpaceError):
        space.from_search_space([0.0, 0.0])


def test_fingerprint_ignores_key_order():
    a = Configuration(values={"x": 0.1, "y": 2.0})
    b = Configuration(values={"y": 2.0, "x": 0.1})
    c = Configuration(values={"x": 0.1 + 1e-15, "y": 2.0})
    assert a.fingerprint() == b.fingerprint()
    assert a.fingerprint() != c.fingerprint()


def test_linear_space():
    space = ParamSpace.linear(3, sigma0=1.0)
    assert space.names == ["x0", "x1", "x2"]
    assert np.array_equal(space.to_search_space(space.initial_config()), np.zeros(3))
    assert space.from_search_space([-1.5, 0.0, 2.0])["x0"] == -1.5


def test_sample_configurations_is_seeded():
    space = parse_space_file(json.dumps(SPACE_DOC))
    first = sample_configurations(space, 5, seed=3)
    second = sample_configurations(space, 5, seed=3)
    assert len(first) == 5
    assert [c.values for c in first] == [c.values for c in second]
    assert all(0.01 <= c["reg"] <= 1000.0 for c in first)
    with pytest.raises(ValueError):
        sample_configurations(space, 0)


def main():
    logger.info("Starting parameter space tests")
    test_parse_defaults_and_aliases()
    test_initial_config_maps_to_log_coordinates()
    test_decode_clamps_to_bounds()
    test_round_trip_inside_bounds()
    test_log_parameter_needs_positive_init()
    test_space_file_errors()
    test_check_config_rejects_other_names()
    test_fingerprint_ignores_key_order()
    test_linear_space()
    test_sample_configurations_is_seeded()
    logger.info("Parameter space tests completed")


if __name__ == "__main__":
    main()
