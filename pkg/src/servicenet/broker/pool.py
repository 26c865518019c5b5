"""Bounded database connection pool with FIFO queueing.

Acquisitions beyond capacity wait in arrival order instead of failing;
this is what produces the saturation plateau under load. An optional
fixed per-query delay models database service time so saturation can be
reproduced deterministically on fast hardware.
"""

from __future__ import annotations

import asyncio
from collections import deque
from contextlib import asynccontextmanager
from typing import Awaitable, Callable, TypeVar

T = TypeVar("T")

DEFAULT_CAPACITY = 500


class DbPool:
    def __init__(self, capacity: int = DEFAULT_CAPACITY, delay_s: float = 0.0):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.delay_s = delay_s
        self._in_use = 0
        self._waiters: deque[asyncio.Future] = deque()
        # Instrumentation.
        self.acquisitions = 0
        self.max_in_use = 0

    @property
    def in_use(self) -> int:
        return self._in_use

    @property
    def queued(self) -> int:
        return len(self._waiters)

    async def acquire(self) -> None:
        if self._in_use < self.capacity and not self._waiters:
            self._grant()
            return
        fut: asyncio.Future = asyncio.get_running_loop().create_future()
        self._waiters.append(fut)
        try:
            await fut
        except asyncio.CancelledError:
            if not fut.cancelled() and fut.done():
                # Granted between cancellation and wakeup: give it back.
                self.release()
            else:
                self._waiters.remove(fut)
            raise

    def _grant(self) -> None:
        self._in_use += 1
        self.acquisitions += 1
        self.max_in_use = max(self.max_in_use, self._in_use)
        assert self._in_use <= self.capacity

    def release(self) -> None:
        self._in_use -= 1
        while self._waiters:
            fut = self._waiters.popleft()
            if not fut.done():
                self._grant()
                fut.set_result(None)
                break

    @asynccontextmanager
    async def slot(self):
        await self.acquire()
        try:
            yield
        finally:
            self.release()

    async def run_query(self, fn: Callable[[], T]) -> T:
        """Execute one logical query while holding a pool slot."""
        async with self.slot():
            if self.delay_s > 0:
                await asyncio.sleep(self.delay_s)
            return fn()
