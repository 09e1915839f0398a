#!/usr/bin/env python3
"""Evaluating external algorithms through worker subprocesses.

Protocol (line-delimited JSON, UTF-8, one object per line, flushed per line):

    framework -> worker   {"hello":1}
    worker -> framework   {"hello":1}
    framework -> worker   {"id":7,"instance":"scene-3","config":{"reg":10.0}}
    worker -> framework   {"id":7,"cost":0.125}   or   {"id":7,"cost":"fail"}

Responses may arrive out of order; they are matched by id. Workers should
log to stderr, stdout is reserved for responses.
"""
import json
import logging
import math
import shlex
import subprocess
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Dict, List, Mapping, Optional, Sequence

from evaluation import FAIL, FAILED

logger = logging.getLogger('worker_pool')

HELLO = {"hello": 1}
MAX_RESTARTS = 3
DEFAULT_WINDOW = 8


class ProtocolError(RuntimeError):
    """A worker said something the protocol does not allow"""


class WorkerPoolError(RuntimeError):
    """Workers could not be started or kept alive"""


def encode_request(request_id: int, instance: str, config) -> str:
    return json.dumps({"id": request_id, "instance": instance,
                       "config": {k: float(v) for k, v in config.values.items()}},
                      separators=(",", ":"), ensure_ascii=False)


def parse_response(line: str):
    """Return (id, cost) from a response line; failures map to +inf"""
    try:
        message = json.loads(line)
    except json.JSONDecodeError:
        raise ProtocolError(f"malformed response line: {line!r}") from None
    if not isinstance(message, dict) or set(message) != {"id", "cost"}:
        raise ProtocolError(f"response must have exactly 'id' and 'cost': {line!r}")
    request_id, cost = message["id"], message["cost"]
    if isinstance(request_id, bool) or not isinstance(request_id, int):
        raise ProtocolError(f"response id must be an integer: {line!r}")
    if cost == FAIL:
        return request_id, FAILED
    if isinstance(cost, bool) or not isinstance(cost, (int, float)) or not math.isfinite(cost):
        raise ProtocolError(f"response cost must be a finite number or \"{FAIL}\": {line!r}")
    return request_id, float(cost)


class WorkerProcess:
    """One worker subprocess speaking the line protocol"""

    def __init__(self, command: Sequence[str], index: int):
        self.command = list(command)
        self.index = index
        self.proc = None

    def start(self):
        logger.info(f"Starting worker {self.index}: {' '.join(self.command)}")
        try:
            self.proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                         text=True, encoding="utf-8", bufsize=1)
        except OSError as e:
            raise WorkerPoolError(f"could not launch worker '{' '.join(self.command)}': {e}") from e
        try:
            self.send(json.dumps(HELLO, separators=(",", ":")))
        except OSError as e:
            raise WorkerPoolError(f"worker {self.index} exited before the handshake") from e
        reply = self.readline()
        if reply == "":
            raise WorkerPoolError(f"worker {self.index} exited before the handshake")
        try:
            ok = json.loads(reply) == HELLO
        except json.JSONDecodeError:
            ok = False
        if not ok:
            raise ProtocolError(f"worker {self.index} answered the handshake with {reply!r}")
        logger.debug(f"Worker {self.index} handshake complete")

    def send(self, line: str):
        self.proc.stdin.write(line + "\n")
        self.proc.stdin.flush()

    def readline(self) -> str:
        return self.proc.stdout.readline()

    def stop(self, timeout=5.0):
        if self.proc is None:
            return
        try:
            if self.proc.stdin and not self.proc.stdin.closed:
                self.proc.stdin.close()
        except OSError:
            pass
        try:
            self.proc.wait(timeout=timeout)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()
        if self.proc.stdout:
            self.proc.stdout.close()
        self.proc = None


class WorkerPool:
    """Dispatches (configuration, instance) requests across worker processes.

    `parallel` worker processes each keep up to `window` requests in flight.
    Results are cached; a crashed worker yields failures for its outstanding
    requests and is restarted, at most `max_restarts` times per pool.
    """

    def __init__(self, command, instance_ids: Sequence[str], parallel: int = 1, window: int = DEFAULT_WINDOW,
                 cache=None, max_restarts: int = MAX_RESTARTS, dataset: Optional[str] = None):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        if not self.command:
            raise WorkerPoolError("worker command is empty")
        if parallel < 1 or window < 1:
            raise ValueError(f"parallel and window must be positive, got {parallel} and {window}")
        self.instance_ids = list(instance_ids)
        self.window = window
        self.cache = cache
        self.max_restarts = max_restarts
        self.dataset = dataset
        self.restarts = 0
        self.requests_sent = 0
        self._next_id = 0
        self._lock = threading.Lock()
        self.workers = [WorkerProcess(self.command, i) for i in range(parallel)]
        try:
            for worker in self.workers:
                worker.start()
        except Exception:
            self.close()
            raise

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        self.close()

    def descriptor(self) -> Dict:
        return {"kind": "worker", "command": self.command, "dataset": self.dataset}

    def close(self):
        for worker in self.workers:
            worker.stop()

    def _allocate_id(self) -> int:
        with self._lock:
            self._next_id += 1
            return self._next_id

    def _restart(self, worker: WorkerProcess):
        with self._lock:
            if self.restarts >= self.max_restarts:
                raise WorkerPoolError(f"worker {worker.index} crashed after {self.restarts} restarts; giving up")
            self.restarts += 1
        worker.stop(timeout=1.0)
        worker.start()

    def _run_share(self, worker: WorkerProcess, share, configs):
        """Send one worker its requests, keeping at most `window` in flight"""
        queue = deque(share)
        outstanding = {}
        answers, lost = {}, set()
        while queue or outstanding:
            crashed = False
            while queue and len(outstanding) < self.window:
                request_id, ci, instance = queue.popleft()
                outstanding[request_id] = (ci, instance)
                try:
                    worker.send(encode_request(request_id, instance, configs[ci]))
                    with self._lock:
                        self.requests_sent += 1
                except OSError:
                    crashed = True
                    break
            line = "" if crashed else worker.readline()
            if line == "":
                logger.warning(f"Worker {worker.index} crashed with {len(outstanding)} outstanding requests; "
                               f"marking them failed")
                for request_id in outstanding:
                    answers[request_id] = FAILED
                    lost.add(request_id)
                outstanding.clear()
                self._restart(worker)
                continue
            request_id, cost = parse_response(line.rstrip("\n"))
            if request_id not in outstanding:
                raise ProtocolError(f"worker {worker.index} answered unknown id {request_id}: {line.rstrip()!r}")
            answers[request_id] = cost
            del outstanding[request_id]
        return answers, lost

    def evaluate(self, config, instances: Sequence[str]) -> Dict[str, float]:
        return self.evaluate_batch([config], instances)[0]

    def evaluate_batch(self, configs, instances: Sequence[str]) -> List[Mapping[str, float]]:
        """Evaluate every configuration on every instance; joins before returning"""
        results = [dict() for _ in configs]
        pending = []
        for ci, config in enumerate(configs):
            if self.cache is not None:
                results[ci].update(self.cache.get_costs(config, instances))
            for instance in instances:
                if instance not in results[ci]:
                    pending.append((self._allocate_id(), ci, instance))
        if not pending:
            return results

        shares = [pending[w::len(self.workers)] for w in range(len(self.workers))]
        index = {request_id: (ci, instance) for request_id, ci, instance in pending}
        fresh = [dict() for _ in configs]
        with ThreadPoolExecutor(max_workers=len(self.workers)) as executor:
            futures = {executor.submit(self._run_share, worker, share, configs): worker
                       for worker, share in zip(self.workers, shares) if share}
            for future in as_completed(futures):
                answers, lost = future.result()
                for request_id, cost in answers.items():
                    ci, instance = index[request_id]
                    results[ci][instance] = cost
                    if request_id not in lost:
                        fresh[ci][instance] = cost

        if self.cache is not None:
            for ci, config in enumerate(configs):
                self.cache.save_costs(config, fresh[ci])
        logger.debug(f"Evaluated {len(pending)} requests for {len(configs)} configurations")
        return [{inst: res[inst] for inst in instances} for res in results]


def load_dataset(path) -> List[str]:
    """Instance ids, one per line; blank lines and '#' comments are skipped"""
    ids = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line and not line.startswith("#"):
                ids.append(line)
    if not ids:
        raise ValueError(f"dataset list {path} contains no instance ids")
    if len(set(ids)) != len(ids):
        raise ValueError(f"dataset list {path} contains duplicate instance ids")
    return ids
