#!/usr/bin/env python3
import logging
import math
import sys
from pathlib import Path

import pytest

from cache_manager import CacheManager
from demo_worker import toy_cost
from log_config import setup_colored_logging
from paramspace import Configuration
from worker_pool import ProtocolError, WorkerPool, WorkerPoolError, encode_request, load_dataset, parse_response

# Set up logging
setup_colored_logging(level=logging.INFO)
logger = logging.getLogger('test_worker_pool')

DEMO_WORKER = str(Path(__file__).with_name("demo_worker.py"))
INSTANCES = [f"scene-{i}:{0.25 * i}" for i in range(12)]

ECHO_HELLO = (
    "import sys, json\n"
    "while True:\n"
    "    line = sys.stdin.readline()\n"
    "    if not line:\n"
    "        break\n"
    "    m = json.loads(line)\n"
    "    if 'hello' in m:\n"
    "        print(json.dumps(m), flush=True)\n"
    "    else:\n"
    "        print({reply}, flush=True)\n"
)


def demo_command(*options):
    return [sys.executable, DEMO_WORKER, *options]


def inline_worker(reply_expression):
    return [sys.executable, "-c", ECHO_HELLO.format(reply=reply_expression)]


def config(a, b=1.0):
    return Configuration(values={"a": a, "b": b})


def expected(instance, cfg):
    return toy_cost(instance, dict(cfg.values))


def test_encode_and_parse():
    assert encode_request(7, "scene-3", config(10.0)) == '{"id":7,"instance":"scene-3","config":{"a":10.0,"b":1.0}}'
    assert parse_response('{"id":7,"cost":0.125}') == (7, 0.125)
    assert parse_response('{"id":3,"cost":"fail"}') == (3, math.inf)
    assert parse_response('{"id":3,"cost":2}') == (3, 2.0)
    for bad in ('{"id":7}', '{"id":7,"cost":1.0,"extra":1}', '{"id":"7","cost":1.0}', '{"id":7,"cost":NaN}',
                '{"id":7,"cost":"oops"}', 'not json', '[7, 1.0]', '{"id":true,"cost":1.0}'):
        with pytest.raises(ProtocolError):
            parse_response(bad)


def test_load_dataset(tmp_path):
    path = tmp_path / "instances.txt"
    path.write_text("# scenes\nscene-1\n\n  scene-2  \n", encoding="utf-8")
    assert load_dataset(path) == ["scene-1", "scene-2"]
    path.write_text("a\na\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_dataset(path)
    path.write_text("# nothing\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_dataset(path)


def test_pool_evaluates_all_requests():
    configs = [config(0.5), config(2.0, 3.0), config(1.5)]
    with WorkerPool(demo_command(), INSTANCES, parallel=2) as pool:
        results = pool.evaluate_batch(configs, INSTANCES)
        assert pool.requests_sent == len(configs) * len(INSTANCES)
        assert pool.descriptor()["kind"] == "worker"
    for cfg, costs in zip(configs, results):
        assert list(costs) == INSTANCES
        for inst in INSTANCES:
            assert costs[inst] == expected(inst, cfg)


def test_out_of_order_responses_are_matched_by_id():
    configs = [config(0.5 + 0.1 * i) for i in range(3)]
    with WorkerPool(demo_command("--reverse-batch", "5"), INSTANCES, parallel=2, window=8) as pool:
        results = pool.evaluate_batch(configs, INSTANCES)
    for cfg, costs in zip(configs, results):
        for inst in INSTANCES:
            assert costs[inst] == expected(inst, cfg)


def test_failed_instances_and_cache(tmp_path):
    cache = CacheManager(cache_dir=str(tmp_path), namespace="demo")
    cfg = config(0.75)
    with WorkerPool(demo_command("--fail-instance", "scene-3"), INSTANCES, cache=cache) as pool:
        first = pool.evaluate(cfg, INSTANCES)
        sent = pool.requests_sent
        assert math.isinf(first["scene-3:0.75"])
        assert first["scene-4:1.0"] == expected("scene-4:1.0", cfg)
        second = pool.evaluate(cfg, INSTANCES)
        assert pool.requests_sent == sent
        assert second == first

    reloaded = CacheManager(cache_dir=str(tmp_path), namespace="demo")
    assert reloaded.get_costs(cfg, INSTANCES) == first
    assert CacheManager(cache_dir=str(tmp_path), namespace="other").get_costs(cfg, INSTANCES) == {}


def test_crash_fails_outstanding_requests_and_restarts(tmp_path):
    flag = tmp_path / "crashed.flag"
    cache = CacheManager(cache_dir=str(tmp_path / "cache"), namespace="crash")
    cfg = config(1.25)
    command = demo_command("--crash-after", "3", "--crash-once-file", str(flag))
    with WorkerPool(command, INSTANCES, window=8, cache=cache) as pool:
        first = pool.evaluate(cfg, INSTANCES)
        assert pool.restarts == 1
        assert flag.exists()
        lost = [inst for inst, cost in first.items() if math.isinf(cost)]
        assert lost
        for inst, cost in first.items():
            if math.isfinite(cost):
                assert cost == expected(inst, cfg)

        sent = pool.requests_sent
        second = pool.evaluate(cfg, INSTANCES)
        assert pool.requests_sent - sent == len(lost)
        assert all(second[inst] == expected(inst, cfg) for inst in INSTANCES)


def test_restart_limit():
    with WorkerPool(demo_command("--crash-after", "1"), INSTANCES, max_restarts=1) as pool:
        with pytest.raises(WorkerPoolError):
            pool.evaluate(config(1.0), INSTANCES)


def test_bad_workers():
    with pytest.raises(WorkerPoolError):
        WorkerPool([str(Path(__file__).with_name("no-such-worker"))], INSTANCES)
    with pytest.raises(WorkerPoolError):
        WorkerPool([sys.executable, "-c", "pass"], INSTANCES)
    with pytest.raises(ProtocolError):
        WorkerPool([sys.executable, "-c", "import sys; sys.stdin.readline(); print('{\"hello\":2}', flush=True)"],
                   INSTANCES)
    with pytest.raises(ValueError):
        WorkerPool(demo_command(), INSTANCES, parallel=0)


def test_protocol_violations_are_raised():
    replies = [
        "json.dumps({'id': 999, 'cost': 1.0})",
        "json.dumps({'id': m['id'], 'cost': 1.0, 'note': 'x'})",
        "json.dumps({'id': m['id'], 'cost': float('nan')})",
    ]
    for reply in replies:
        with WorkerPool(inline_worker(reply), INSTANCES[:2]) as pool:
            with pytest.raises(ProtocolError):
                pool.evaluate(config(1.0), INSTANCES[:2])


def test_inline_worker_reply_format():
    with WorkerPool(inline_worker("json.dumps({'id': m['id'], 'cost': 'fail'})"), INSTANCES[:3]) as pool:
        costs = pool.evaluate(config(1.0), INSTANCES[:3])
    assert all(math.isinf(c) for c in costs.values())


def main():
    logger.info("Starting worker pool tests")
    import tempfile
    test_encode_and_parse()
    test_pool_evaluates_all_requests()
    test_out_of_order_responses_are_matched_by_id()
    with tempfile.TemporaryDirectory() as tmp:
        test_load_dataset(Path(tmp))
        test_failed_instances_and_cache(Path(tmp) / "cache")
        test_crash_fails_outstanding_requests_and_restarts(Path(tmp))
    test_restart_limit()
    test_bad_workers()
    test_protocol_violations_are_raised()
    test_inline_worker_reply_format()
    logger.info("Worker pool tests completed")


if __name__ == "__main__":
    main()
