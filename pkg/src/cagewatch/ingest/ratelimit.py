"""Per-source politeness: a shared rate limiter and exponential-backoff retries."""

from __future__ import annotations

import threading
import time
from collections import deque
from typing import Callable, TypeVar

T = TypeVar("T")

BACKOFF_BASE = 2.0
MAX_RETRIES = 5


class RateLimiter:
    """Sliding-window limiter: at most ``max_requests`` per ``interval`` seconds.

    Safe for concurrent acquisition; clock and sleep are injectable so tests
    can run against a mock clock.
    """

    def __init__(
        self,
        max_requests: int,
        interval: float = 60.0,
        clock: Callable[[], float] = time.monotonic,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if max_requests < 1:
            raise ValueError("max_requests must be >= 1")
        self.max_requests = max_requests
        self.interval = interval
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._stamps: deque[float] = deque()

    def acquire(self) -> None:
        while True:
            with self._lock:
                now = self._clock()
                while self._stamps and now - self._stamps[0] >= self.interval:
                    self._stamps.popleft()
                if len(self._stamps) < self.max_requests:
                    self._stamps.append(now)
                    return
                wait = self.interval - (now - self._stamps[0])
            self._sleep(max(wait, 0.0))


def with_retries(
    fn: Callable[[], T],
    max_retries: int = MAX_RETRIES,
    base: float = BACKOFF_BASE,
    sleep: Callable[[float], None] = time.sleep,
    retriable: tuple[type[Exception], ...] = (Exception,),
) -> T:
    """Call ``fn``, retrying transient failures with exponential backoff.

    Raises the last error (annotated with the attempt count via ``.attempts``
    when possible) once retries are exhausted.
    """
    attempt = 0
    while True:
        attempt += 1
        try:
            return fn()
        except retriable as exc:
            if attempt > max_retries:
                try:
                    exc.attempts = attempt  # type: ignore[attr-defined]
                except Exception:
                    pass
                raise
            sleep(base ** (attempt - 1))
