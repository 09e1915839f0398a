#!/usr/bin/env python3
import logging
import sys
import re

# ANSI color codes
RESET = "\033[0m"
BOLD = "\033[1m"
RED = "\033[31m"
GREEN = "\033[32m"
YELLOW = "\033[33m"
BLUE = "\033[34m"
MAGENTA = "\033[35m"
CYAN = "\033[36m"
WHITE = "\033[37m"

BG_RED = "\033[41m"

# High intensity colors
BRIGHT_BLACK = "\033[90m"
BRIGHT_GREEN = "\033[92m"
BRIGHT_YELLOW = "\033[93m"
BRIGHT_BLUE = "\033[94m"
BRIGHT_MAGENTA = "\033[95m"
BRIGHT_CYAN = "\033[96m"


class ColoredFormatter(logging.Formatter):
    # Colors for different log levels
    LEVEL_COLORS = {
        'DEBUG': CYAN,
        'INFO': GREEN,
        'WARNING': YELLOW,
        'ERROR': RED,
        'CRITICAL': BG_RED + BOLD + WHITE
    }

    # Colors for different modules/components
    MODULE_COLORS = {
        'optimizer': BRIGHT_BLUE,
        'strategies': BRIGHT_MAGENTA,
        'partition': BRIGHT_CYAN,
        'evaluation': CYAN,
        'worker_pool': BRIGHT_YELLOW,
        'cache_manager': BRIGHT_GREEN,
        'experiment': BLUE,
        'synthbench': MAGENTA,
        'modecfg': BRIGHT_YELLOW,
        'main': BRIGHT_YELLOW
    }

    # Task-specific colors based on message content patterns
    TASK_PATTERNS = [
        # Optimization progress
        (re.compile(r'generation|candidate|sigma|recommend', re.I), BLUE),
        (re.compile(r'partition|cluster|assignment|mode', re.I), CYAN),
        (re.compile(r'bandit|arm|thompson', re.I), MAGENTA),

        # Evaluation and workers
        (re.compile(r'worker|request|protocol|handshake', re.I), BRIGHT_MAGENTA),

        # Performance and caching
        (re.compile(r'cache|cached|saving', re.I), BRIGHT_GREEN),
        (re.compile(r'load(ing)?|replay|found', re.I), BRIGHT_CYAN),

        # Error handling (checked before progress so "failed run" stays red)
        (re.compile(r'error|fail|exception|missing|invalid|crash', re.I), RED),
        (re.compile(r'warn(ing)?|fallback|degenerate', re.I), YELLOW),

        # Progress indicators
        (re.compile(r'start|begin|init', re.I), BRIGHT_BLUE),
        (re.compile(r'complet|finish|done|success|wrote', re.I), BRIGHT_GREEN),
    ]

    def __init__(self, *args, use_color=True, **kwargs):
        super().__init__(*args, **kwargs)
        self.use_color = use_color

    def format(self, record):
        if not self.use_color:
            return super().format(record)

        original_message = record.getMessage()
        original_levelname = record.levelname
        original_name = record.name

        # Color based on log level
        if original_levelname in self.LEVEL_COLORS:
            record.levelname = f"{self.LEVEL_COLORS[original_levelname]}{original_levelname}{RESET}"

        # Color based on logger name/module
        module_color = self.MODULE_COLORS.get(original_name, MAGENTA)
        record.name = f"{module_color}{original_name}{RESET}"

        try:
            result = super().format(record)
        finally:
            # Other handlers may format the same record
            record.levelname = original_levelname
            record.name = original_name

        # Apply color to timestamp
        formatted_time = self.formatTime(record, self.datefmt)
        result = result.replace(formatted_time, f"{BRIGHT_BLACK}{formatted_time}{RESET}", 1)

        # Apply task-specific message coloring
        message_start = result.find(original_message)
        if message_start != -1:
            for pattern, color in self.TASK_PATTERNS:
                if pattern.search(original_message):
                    colored_message = f"{color}{original_message}{RESET}"
                    result = result[:message_start] + colored_message + result[message_start + len(original_message):]
                    break

        return result


def setup_colored_logging(level=logging.INFO, stream=None):
    """Set up colored logging for all modules.

    Logs go to stderr so that stdout stays free for command results.
    """
    stream = stream if stream is not None else sys.stderr

    root_logger = logging.getLogger()
    root_logger.setLevel(level)

    # Clear existing handlers to avoid duplicates
    if root_logger.handlers:
        root_logger.handlers.clear()

    console_handler = logging.StreamHandler(stream)
    console_handler.setLevel(level)

    formatter = ColoredFormatter(
        fmt='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S',
        use_color=hasattr(stream, "isatty") and stream.isatty(),
    )
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    return root_logger
