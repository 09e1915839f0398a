#!/usr/bin/env python3
"""Reference worker speaking the evaluation protocol.

The "algorithm" is a toy: an instance id of the form `<name>:<target>`
prefers every parameter at exp(target), and its cost is the mean squared
distance in log space. Ids without a target use 0.

Options exist to exercise the framework: answering batches out of order,
failing chosen instances and crashing mid-run.
"""
import argparse
import json
import math
import os
import select
import sys

IDLE_FLUSH_SECONDS = 0.05


def instance_target(instance: str) -> float:
    _, sep, tail = instance.rpartition(":")
    if not sep:
        return 0.0
    try:
        return float(tail)
    except ValueError:
        return 0.0


def toy_cost(instance: str, config: dict) -> float:
    target = instance_target(instance)
    terms = [((math.log(v) if v > 0 else v) - target) ** 2 for v in config.values()]
    return sum(terms) / len(terms) if terms else 0.0


def parse_args(argv=None):
    parser = argparse.ArgumentParser(description="Toy worker for the modecfg evaluation protocol")
    parser.add_argument("--reverse-batch", type=int, default=1, metavar="N",
                        help="buffer N requests and answer them in reverse order")
    parser.add_argument("--fail-instance", action="append", default=[], metavar="SUBSTRING",
                        help="answer \"fail\" for instances containing SUBSTRING")
    parser.add_argument("--crash-after", type=int, default=0, metavar="N",
                        help="exit without answering after receiving N requests")
    parser.add_argument("--crash-once-file", default=None, metavar="PATH",
                        help="only crash if PATH does not exist yet, creating it")
    return parser.parse_args(argv)


def should_crash(args) -> bool:
    if args.crash_once_file is None:
        return True
    if os.path.exists(args.crash_once_file):
        return False
    with open(args.crash_once_file, "w", encoding="utf-8") as f:
        f.write("crashed\n")
    return True


def answer(request, args) -> str:
    instance = request["instance"]
    if any(s in instance for s in args.fail_instance):
        cost = "fail"
    else:
        cost = toy_cost(instance, request["config"])
    return json.dumps({"id": request["id"], "cost": cost}, separators=(",", ":"))


def flush(pending, args):
    for request in reversed(pending):
        sys.stdout.write(answer(request, args) + "\n")
    sys.stdout.flush()
    pending.clear()


def handle(message, pending, args, state) -> None:
    if message == {"hello": 1}:
        sys.stdout.write('{"hello":1}\n')
        sys.stdout.flush()
        return
    state["received"] += 1
    if state["crash_armed"] and state["received"] >= args.crash_after:
        print(f"demo_worker: crashing after {state['received']} requests", file=sys.stderr)
        sys.exit(3)
    pending.append(message)
    if len(pending) >= args.reverse_batch:
        flush(pending, args)


def main(argv=None):
    args = parse_args(argv)
    state = {"received": 0, "crash_armed": args.crash_after > 0 and should_crash(args)}
    pending = []
    fd = sys.stdin.fileno()
    buffer = b""
    while True:
        # answer a partial batch once the framework stops sending
        if pending and not select.select([fd], [], [], IDLE_FLUSH_SECONDS)[0]:
            flush(pending, args)
            continue
        chunk = os.read(fd, 65536)
        if not chunk:
            break
        buffer += chunk
        while b"\n" in buffer:
            line, buffer = buffer.split(b"\n", 1)
            if line.strip():
                handle(json.loads(line.decode("utf-8")), pending, args, state)
    flush(pending, args)


if __name__ == "__main__":
    main()
