#!/usr/bin/env python3
import io
import logging

from log_config import ColoredFormatter, setup_colored_logging

# Set up logging
setup_colored_logging(level=logging.DEBUG)
logger = logging.getLogger('test_logging')


def test_plain_stream_has_no_colors():
    stream = io.StringIO()
    setup_colored_logging(level=logging.INFO, stream=stream)
    logging.getLogger('optimizer').info("Generation 3: best 0.25, sigma 0.4")
    logging.getLogger('optimizer').debug("not shown at INFO")
    output = stream.getvalue()
    assert "optimizer - INFO - Generation 3: best 0.25, sigma 0.4" in output
    assert "\033[" not in output
    assert "not shown" not in output


def test_colored_formatter_restores_record():
    formatter = ColoredFormatter(fmt='%(name)s - %(levelname)s - %(message)s', use_color=True)
    record = logging.LogRecord('partition', logging.WARNING, __file__, 1, "Fallback to greedy partitioning", None, None)
    text = formatter.format(record)
    assert "\033[" in text
    assert record.levelname == "WARNING"
    assert record.name == "partition"


def main():
    # Test various log types to see the color scheme
    logger.info("Starting log color test")

    logging.getLogger('strategies').info("Starting posthoc run, seed 0, budget 50 generations, 20 instances")
    logging.getLogger('optimizer').debug("Generation 12: best 0.0312, sigma 0.21")
    logging.getLogger('partition').info("Partitioned 20 instances over 300 configurations into 2 groups")
    logging.getLogger('partition').warning("Fallback to greedy partitioning: budget exceeded")
    logging.getLogger('cache_manager').debug("Cache hit for 20/20 instances")
    logging.getLogger('worker_pool').info("Starting worker 0: python demo_worker.py")
    logging.getLogger('worker_pool').warning("Worker 1 crashed with 3 outstanding requests; marking them failed")
    logging.getLogger('experiment').error("Run staged seed 4 failed")
    logging.getLogger('synthbench').info("Generated synthetic problem d=10, modes=2")
    logging.getLogger('modecfg').critical("Fatal error")

    test_plain_stream_has_no_colors()
    test_colored_formatter_restores_record()
    setup_colored_logging(level=logging.DEBUG)
    logger.info("Log color test completed")


if __name__ == "__main__":
    main()
