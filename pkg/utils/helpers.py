import hashlib
import logging
import time
from contextlib import contextmanager

import numpy as np

logger = logging.getLogger(__name__)

STREAM_NAMES = ("env", "policy-init", "noise", "update", "eval")


def deterministic_seed(*parts):
    """Stable 63-bit seed from any printable parts; identical across processes and platforms."""
    key = "|".join(str(p) for p in parts)
    digest = hashlib.sha256(key.encode("utf-8")).hexdigest()[:16]
    return int(digest, 16) & 0x7FFFFFFFFFFFFFFF


class SeedStreams:
    """Named independent generators derived from one master seed.

    Adding or consuming one stream never shifts another, so e.g. the evaluation budget can
    change without perturbing training.
    """

    def __init__(self, master):
        self.master = int(master)
        self._streams = {}

    def get(self, name):
        if name not in self._streams:
            self._streams[name] = np.random.default_rng(deterministic_seed(self.master, name))
        return self._streams[name]

    def child(self, name):
        """Fresh generator for a sub-stream, e.g. one per rollout worker."""
        return np.random.default_rng(deterministic_seed(self.master, name))

    @property
    def env(self):
        return self.get("env")

    @property
    def policy_init(self):
        return self.get("policy-init")

    @property
    def noise(self):
        return self.get("noise")

    @property
    def update(self):
        return self.get("update")

    @property
    def eval(self):
        return self.get("eval")

    def bit_generator_states(self):
        return {name: rng.bit_generator.state for name, rng in sorted(self._streams.items())}

    def restore(self, states):
        for name, state in states.items():
            self.get(name).bit_generator.state = state


def seed_streams(master):
    return SeedStreams(master)


@contextmanager
def perf_timer(label):
    start = time.perf_counter()
    try:
        yield
    finally:
        logger.info("[PERF] %s took %.4f seconds", label, time.perf_counter() - start)
