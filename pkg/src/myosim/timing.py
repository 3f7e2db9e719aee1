"""Wall-clock and memory accounting for simulation components."""
from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager

COMPONENTS = ("solver_0d", "solver_1d", "solver_3d", "interpolation", "homogenization", "total")


class Timer:
    """Accumulates exclusive wall time per named component."""

    def __init__(self):
        self.seconds = defaultdict(float)
        self.calls = defaultdict(int)

    @contextmanager
    def section(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.seconds[name] += time.perf_counter() - t0
            self.calls[name] += 1

    def add(self, name, seconds):
        self.seconds[name] += seconds
        self.calls[name] += 1

    def get(self, name) -> float:
        return self.seconds.get(name, 0.0)

    def as_dict(self) -> dict:
        return dict(self.seconds)


class NullTimer(Timer):
    @contextmanager
    def section(self, name):
        yield


class MemoryTracker:
    """High-water mark of the bytes held by registered arrays."""

    def __init__(self):
        self._live = {}
        self.peak = 0

    def track(self, name, *arrays):
        self._live[name] = sum(int(getattr(a, "nbytes", 0)) for a in arrays)
        self.peak = max(self.peak, self.current)

    def release(self, name):
        self._live.pop(name, None)

    @property
    def current(self) -> int:
        return sum(self._live.values())
