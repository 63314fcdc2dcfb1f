"""Injectable millisecond clocks; the logical clock keeps scripted runs byte-stable."""

from __future__ import annotations

import time


class WallClock:
    def now_ms(self) -> int:
        return int(time.time() * 1000)


class LogicalClock:
    """Monotonic counter advancing a fixed step per reading.

    Every timestamp a scripted run records comes from here, so two runs with
    the same inputs produce identical persisted bytes.
    """

    def __init__(self, start_ms: int = 0, step_ms: int = 1):
        self._now = start_ms
        self._step = step_ms

    def now_ms(self) -> int:
        self._now += self._step
        return self._now
