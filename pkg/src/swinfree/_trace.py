"""Opt-in per-op wall-clock attribution for forward passes.

Kernels wrap themselves in ``timed("name")``; with no active tracer this is a
no-op. Timed regions never nest, so attributed fractions sum to at most one.
"""

from __future__ import annotations

import contextlib
import contextvars
import time
from collections import defaultdict

_active: contextvars.ContextVar["OpTracer | None"] = contextvars.ContextVar("op_tracer", default=None)


class OpTracer:
    def __init__(self):
        self.seconds: dict[str, float] = defaultdict(float)
        self.counters: dict[str, int] = defaultdict(int)
        self.stage = 0

    def add(self, op: str, dt: float):
        self.seconds[op] += dt

    def count(self, key: str, n: int = 1):
        self.counters[key] += n


@contextlib.contextmanager
def tracing():
    tracer = OpTracer()
    token = _active.set(tracer)
    try:
        yield tracer
    finally:
        _active.reset(token)


def current() -> OpTracer | None:
    return _active.get()


@contextlib.contextmanager
def timed(op: str):
    tracer = _active.get()
    if tracer is None:
        yield
        return
    t0 = time.perf_counter()
    try:
        yield
    finally:
        tracer.add(op, time.perf_counter() - t0)
