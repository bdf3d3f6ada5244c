"""Deterministic discrete-event kernel.

Time is kept as integer nanoseconds.  Events with equal fire times are
delivered in scheduling order.
"""
from __future__ import annotations

import heapq
import zlib
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

NS_PER_S = 1_000_000_000

# Purposes with their own random substream per node.
TRAFFIC = "traffic"
BACKOFF = "backoff"
FADING = "fading"
APP_JITTER = "app-jitter"


def seconds_to_ns(t: float) -> int:
    return int(round(t * NS_PER_S))


def ns_to_seconds(t: int) -> float:
    return t / NS_PER_S


class SchedulingError(RuntimeError):
    """An event was scheduled before the current clock."""


@dataclass(order=True)
class SimEvent:
    fire_time: int
    sequence: int
    target: Any = field(compare=False, default=None)
    kind: str = field(compare=False, default="timer")
    action: Callable[["SimEvent"], None] | None = field(compare=False, default=None, repr=False)
    payload: Any = field(compare=False, default=None, repr=False)
    cancelled: bool = field(compare=False, default=False)


class Kernel:
    def __init__(self, trace: bool = False):
        self.now = 0
        self._queue: list[SimEvent] = []
        self._seq = 0
        self.delivered = 0
        self.trace: list[tuple[int, int, str, Any]] | None = [] if trace else None

    def schedule(self, fire_time: int, action: Callable[[SimEvent], None] | None = None,
                 *, target=None, kind: str = "timer", payload=None) -> SimEvent:
        if fire_time < self.now:
            raise SchedulingError(f"event at {fire_time} ns is before now={self.now} ns")
        ev = SimEvent(int(fire_time), self._seq, target, kind, action, payload)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        return ev

    def cancel(self, ev: SimEvent) -> None:
        ev.cancelled = True

    def peek_time(self) -> int | None:
        while self._queue and self._queue[0].cancelled:
            heapq.heappop(self._queue)
        return self._queue[0].fire_time if self._queue else None

    def run_until(self, t_end: int) -> int:
        """Deliver every event with fire_time <= t_end; the clock ends at t_end."""
        if t_end < self.now:
            raise SchedulingError(f"run_until({t_end}) is before now={self.now}")
        count = 0
        q = self._queue
        while q and q[0].fire_time <= t_end:
            ev = heapq.heappop(q)
            if ev.cancelled:
                continue
            self.now = ev.fire_time
            ev.cancelled = True  # a delivered event can never fire again
            if self.trace is not None:
                self.trace.append((ev.fire_time, ev.sequence, ev.kind, ev.target))
            if ev.action is not None:
                ev.action(ev)
            count += 1
        self.now = t_end
        self.delivered += count
        return count


def _label_key(label: str) -> int:
    return zlib.crc32(label.encode("utf-8"))


class RngStreams:
    """Independent generators keyed by (purpose, node).

    Each stream is derived from the master seed and stable labels only, so
    adding a node or a purpose never shifts another stream's draws.
    """

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed) & ((1 << 64) - 1)
        self._cache: dict[tuple[str, int], np.random.Generator] = {}

    def stream(self, purpose: str, node: int = 0) -> np.random.Generator:
        key = (purpose, int(node))
        gen = self._cache.get(key)
        if gen is None:
            ss = np.random.SeedSequence(self.master_seed, spawn_key=(_label_key(purpose), int(node)))
            gen = np.random.Generator(np.random.PCG64(ss))
            self._cache[key] = gen
        return gen
