#!/usr/bin/env python3
import os
import json
import logging
import hashlib
import threading

from evaluation import decode_cost, encode_cost

logger = logging.getLogger('cache_manager')

CACHE_DIR_ENV = "MODECFG_CACHE_DIR"


def default_cache_dir():
    return os.getenv(CACHE_DIR_ENV, "cache")


class CacheManager:
    """
    Caches (configuration, instance) costs to avoid re-running workers.

    One JSON file per configuration fingerprint holds its instance costs,
    under a namespace directory per evaluated algorithm.
    """
    def __init__(self, cache_dir=None, namespace="default"):
        self.cache_dir = cache_dir if cache_dir is not None else default_cache_dir()
        self.namespace = namespace
        self.eval_dir = os.path.join(self.cache_dir, "evaluations", self._get_hash(namespace))
        os.makedirs(self.eval_dir, exist_ok=True)

        self._memory = {}
        self._lock = threading.Lock()

        logger.info(f"Cache initialized at {os.path.abspath(self.eval_dir)}")

    def _get_hash(self, content):
        """Create a hash from content for use as a cache key"""
        if isinstance(content, str):
            content = content.encode('utf-8')
        return hashlib.md5(content).hexdigest()

    def _path(self, fingerprint):
        return os.path.join(self.eval_dir, f"{self._get_hash(fingerprint)}.json")

    def _load(self, fingerprint):
        entry = self._memory.get(fingerprint)
        if entry is not None:
            return entry
        cache_path = self._path(fingerprint)
        entry = {}
        if os.path.exists(cache_path):
            with open(cache_path, "r", encoding="utf-8") as f:
                stored = json.load(f)
            if stored.get("fingerprint") == fingerprint:
                entry = {inst: decode_cost(v) for inst, v in stored["costs"].items()}
        self._memory[fingerprint] = entry
        return entry

    def get_costs(self, config, instances):
        """Return the cached subset of {instance: cost} for a configuration"""
        fingerprint = config.fingerprint()
        with self._lock:
            entry = self._load(fingerprint)
            hits = {inst: entry[inst] for inst in instances if inst in entry}
        if hits:
            logger.debug(f"Cache hit for {len(hits)}/{len(instances)} instances of {fingerprint[:40]}")
        return hits

    def save_costs(self, config, costs):
        """Add instance costs for a configuration and persist them"""
        if not costs:
            return
        fingerprint = config.fingerprint()
        with self._lock:
            entry = dict(self._load(fingerprint))
            entry.update(costs)
            self._memory[fingerprint] = entry
            cache_path = self._path(fingerprint)
            tmp_path = cache_path + ".tmp"
            with open(tmp_path, "w", encoding="utf-8") as f:
                json.dump({"fingerprint": fingerprint,
                           "costs": {inst: encode_cost(v) for inst, v in sorted(entry.items())}}, f)
            os.replace(tmp_path, cache_path)
        logger.debug(f"Saved {len(costs)} costs to cache for {fingerprint[:40]}")
