"""Randomly alternated cut model and the cross-layer environment subsystem.

The channel is Good until ``start``; from then on Bad and Good intervals
alternate, each lasting a whole number of seconds drawn uniformly from
``[d_min, d_max]``.  A transition instant belongs to the state it starts.
"""

import csv
import enum
import hashlib
import math
from bisect import bisect_right
from dataclasses import dataclass, field

from .errors import ConfigError
from .kernel import PRIO_CHANNEL


class ChannelState(enum.Enum):
    GOOD = "good"
    BAD = "bad"

    def __str__(self):
        return self.value


GOOD = ChannelState.GOOD
BAD = ChannelState.BAD


def integer_range(d_min, d_max):
    """Whole-second bounds covered by ``[d_min, d_max]``."""
    if d_min <= 0:
        raise ConfigError(f"d_min must be positive, got {d_min}")
    if d_min > d_max:
        raise ConfigError(f"d_min ({d_min}) > d_max ({d_max})")
    lo, hi = math.ceil(d_min), math.floor(d_max)
    if lo > hi:
        raise ConfigError(f"no whole second lies in [{d_min}, {d_max}]")
    return lo, hi


def draw_duration(rng, lo, hi):
    return lo + int(rng.random() * (hi - lo + 1))


@dataclass(frozen=True)
class CutSchedule:
    start: float
    transitions: tuple
    horizon: float
    d_min: float = None
    d_max: float = None
    _times: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        prev_t, prev_s = -math.inf, GOOD
        for t, s in self.transitions:
            if t <= prev_t:
                raise ConfigError(f"transition times must increase (at {t})")
            if s is prev_s:
                raise ConfigError(f"transition at {t} does not alternate state")
            prev_t, prev_s = t, s
        object.__setattr__(self, "_times", tuple(t for t, _ in self.transitions))

    def state_at(self, t):
        i = bisect_right(self._times, t)
        return GOOD if i == 0 else self.transitions[i - 1][1]

    def next_transition_after(self, t):
        i = bisect_right(self._times, t)
        if i == len(self.transitions):
            return None
        return self.transitions[i]

    def intervals(self, state=None):
        """``(begin, end, state)`` spans from 0 to the horizon."""
        out = []
        begin, cur = 0.0, GOOD
        for t, s in self.transitions:
            if t > begin:
                out.append((begin, t, cur))
            begin, cur = t, s
        if self.horizon > begin:
            out.append((begin, self.horizon, cur))
        if state is not None:
            out = [iv for iv in out if iv[2] is state]
        return out

    def cycles(self):
        """Complete cut cycles as ``(bad_start, good_start, next_bad_or_horizon)``.

        A trailing Bad interval with no following Good one is not a cycle.
        """
        out = []
        tr = self.transitions
        for i, (t, s) in enumerate(tr):
            if s is not BAD or i + 1 >= len(tr):
                continue
            end = tr[i + 2][0] if i + 2 < len(tr) else self.horizon
            out.append((t, tr[i + 1][0], end))
        return out

    def digest(self):
        h = hashlib.sha256()
        for t, s in self.transitions:
            h.update(f"{t!r}:{s.value};".encode())
        h.update(f"h={self.horizon!r}".encode())
        return h.hexdigest()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "new_state"])
            for t, s in self.transitions:
                w.writerow([f"{t:.6f}", s.value])


def build_cut_schedule(rng, start=200.0, d_min=20.0, d_max=100.0, horizon=2000.0):
    """Draw an alternating Bad/Good timeline from ``start`` up to ``horizon``.

    ``rng`` only needs a ``random()`` method returning floats in [0, 1).
    """
    lo, hi = integer_range(d_min, d_max)
    if start < 0:
        raise ConfigError(f"cut start must be non-negative, got {start}")
    transitions = []
    t, state = float(start), BAD
    while t < horizon:
        transitions.append((t, state))
        t += draw_duration(rng, lo, hi)
        state = GOOD if state is BAD else BAD
    return CutSchedule(float(start), tuple(transitions), float(horizon), d_min, d_max)


class EnvSubsystem:
    """Relays channel transitions to subscribed protocol layers.

    Each subscriber is called as ``cb(state, t_actual)`` at
    ``t_actual + detect_latency``, in registration order.
    """

    def __init__(self, kernel, schedule, detect_latency=0.0):
        if detect_latency < 0:
            raise ConfigError("detect_latency must be >= 0")
        self.kernel = kernel
        self.schedule = schedule
        self.detect_latency = detect_latency
        self.subscribers = []
        self.bound_mode = None
        self._published = False

    def subscribe(self, callback):
        if self._published:
            raise ConfigError("subscribe() after publish_transitions()")
        self.subscribers.append(callback)

    def publish_transitions(self):
        if self._published:
            raise ConfigError("transitions already published")
        self._published = True
        handles = []
        if not self.subscribers:
            return handles
        now = self.kernel.now()
        for t, state in self.schedule.transitions:
            at = t + self.detect_latency
            if at < now:
                continue
            handles.append(self.kernel.schedule(at, PRIO_CHANNEL, self._notify, state, t))
        return handles

    def _notify(self, state, t_actual):
        for cb in self.subscribers:
            cb(state, t_actual)
