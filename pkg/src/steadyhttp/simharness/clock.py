"""Deterministic virtual-time event loop.

Time advances only when events run.  Ties at the same timestamp execute in
scheduling order, so a run is a pure function of its inputs.
"""

from __future__ import annotations

import heapq
from typing import Callable


class Timer:
    """Cancellable handle for a scheduled callback."""

    __slots__ = ("when", "fn", "args", "cancelled")

    def __init__(self, when: float, fn: Callable, args: tuple):
        self.when = when
        self.fn = fn
        self.args = args
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True
        self.fn = None
        self.args = ()


class EventLoop:
    def __init__(self):
        self._queue: list[tuple[float, int, Timer]] = []
        self._seq = 0
        self._now = 0.0

    @property
    def now(self) -> float:
        return self._now

    def call_at(self, when: float, fn: Callable, *args) -> Timer:
        if when < self._now:
            raise ValueError(f"cannot schedule into the past ({when} < {self._now})")
        timer = Timer(when, fn, args)
        heapq.heappush(self._queue, (when, self._seq, timer))
        self._seq += 1
        return timer

    def call_later(self, delay: float, fn: Callable, *args) -> Timer:
        if delay < 0:
            raise ValueError("delay must be >= 0")
        return self.call_at(self._now + delay, fn, *args)

    def pending(self) -> int:
        return sum(1 for _, _, t in self._queue if not t.cancelled)

    def run(
        self,
        stop: Callable[[], bool] | None = None,
        max_time: float = 1e7,
    ) -> None:
        """Run callbacks in time order until the queue drains.

        ``stop`` is checked between callbacks; a True result ends the run.
        Exceeding ``max_time`` virtual seconds raises, which turns an
        accidental infinite self-rescheduling loop into a loud failure.
        """
        while self._queue:
            if stop is not None and stop():
                return
            when, _, timer = heapq.heappop(self._queue)
            if timer.cancelled:
                continue
            if when > max_time:
                raise RuntimeError(f"virtual time exceeded {max_time} s; runaway schedule")
            self._now = when
            fn, args = timer.fn, timer.args
            timer.fn, timer.args = None, ()
            fn(*args)
