"""Discrete-event engine: virtual clock, ordered event queue, cancelable timers.

Events at the same instant fire by ascending priority, then insertion order.
"""

import heapq

# Tie-break ordinals for events sharing a fire time.
PRIO_PROBE = 0
PRIO_CHANNEL = 1
PRIO_ROUTING = 2
PRIO_TRANSPORT = 3
PRIO_DELIVERY = 4
PRIO_APP = 5


class SchedulingError(RuntimeError):
    """An event was scheduled before the current virtual time."""


class EventHandle:
    __slots__ = ("id", "fire_at", "priority", "fn", "args")

    def __init__(self, id, fire_at, priority, fn, args):
        self.id = id
        self.fire_at = fire_at
        self.priority = priority
        self.fn = fn
        self.args = args

    @property
    def live(self):
        return self.fn is not None

    def __repr__(self):
        state = "live" if self.fn is not None else "dead"
        return f"EventHandle(id={self.id}, at={self.fire_at}, {state})"


class Kernel:
    def __init__(self):
        self._heap = []
        self._seq = 0
        self._now = 0.0
        self._live = 0
        self.fired = 0

    def now(self):
        return self._now

    def __len__(self):
        return self._live

    def schedule(self, at, priority, fn, *args):
        if at < self._now:
            raise SchedulingError(
                f"cannot schedule at t={at!r}: clock is already at {self._now!r}")
        seq = self._seq
        self._seq = seq + 1
        handle = EventHandle(seq, at, priority, fn, args)
        heapq.heappush(self._heap, (at, priority, seq, handle))
        self._live += 1
        return handle

    def cancel(self, handle):
        if handle is None or handle.fn is None:
            return False
        handle.fn = None
        handle.args = None
        self._live -= 1
        return True

    def run(self, until):
        if until < self._now:
            raise SchedulingError(f"run(until={until!r}) is before now={self._now!r}")
        heap = self._heap
        pop = heapq.heappop
        count = 0
        while heap and heap[0][0] <= until:
            at, _, _, handle = pop(heap)
            fn = handle.fn
            if fn is None:
                continue
            args = handle.args
            handle.fn = None
            handle.args = None
            self._live -= 1
            self._now = at
            fn(*args)
            count += 1
        self._now = until
        self.fired += count
        return count
