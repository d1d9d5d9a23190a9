"""Simplified shared-medium link layer.

Every emission is decided at the instant it is handed to the link: Lost if
the channel is Bad then, Delivered otherwise.  A node's transmitter
serializes its frames FIFO, so the delivery instant is
``max(now, busy_until) + total_bytes * 8 / bandwidth``.
"""

import csv
import enum
from dataclasses import dataclass

from .channel import BAD
from .errors import TopologyError
from .kernel import PRIO_DELIVERY

BROADCAST = -1


class FrameKind(enum.Enum):
    DATA = "DATA"
    SACK = "SACK"
    HEARTBEAT = "HEARTBEAT"
    HEARTBEAT_ACK = "HEARTBEAT_ACK"
    SHUTDOWN = "SHUTDOWN"
    SHUTDOWN_ACK = "SHUTDOWN_ACK"
    SHUTDOWN_COMPLETE = "SHUTDOWN_COMPLETE"
    DSDV_UPDATE = "DSDV_UPDATE"

    def __str__(self):
        return self.value


SHUTDOWN_FAMILY = frozenset(
    {FrameKind.SHUTDOWN, FrameKind.SHUTDOWN_ACK, FrameKind.SHUTDOWN_COMPLETE})


@dataclass(frozen=True)
class FrameSizes:
    """Per-kind byte overhead; values follow RFC 2960 chunk layouts plus a network header."""

    data: int = 48
    sack: int = 64
    heartbeat: int = 56
    shutdown: int = 40
    dsdv_header: int = 20
    dsdv_entry: int = 12

    def frame_size(self, kind, n=0):
        """Total on-air bytes: ``n`` is the payload for DATA, the entry count for DSDV_UPDATE."""
        if n < 0:
            raise ValueError("negative size input")
        if kind is FrameKind.DATA:
            return n + self.data
        if kind is FrameKind.DSDV_UPDATE:
            return self.dsdv_header + n * self.dsdv_entry
        if kind is FrameKind.SACK:
            return self.sack
        if kind is FrameKind.HEARTBEAT or kind is FrameKind.HEARTBEAT_ACK:
            return self.heartbeat
        return self.shutdown


DEFAULT_SIZES = FrameSizes()


def frame_size(kind, n=0, sizes=DEFAULT_SIZES):
    return sizes.frame_size(kind, n)


class Frame:
    """One on-air emission.

    ``src``/``dst`` are the hop endpoints; ``origin``/``final_dst`` the
    network-layer endpoints of routed (non-DSDV) traffic.
    """

    __slots__ = ("src", "dst", "kind", "payload_bytes", "total_bytes", "tag",
                 "origin", "final_dst", "body")

    def __init__(self, src, dst, kind, payload_bytes, total_bytes, tag=None,
                 origin=None, final_dst=None, body=None):
        self.src = src
        self.dst = dst
        self.kind = kind
        self.payload_bytes = payload_bytes
        self.total_bytes = total_bytes
        self.tag = tag
        self.origin = src if origin is None else origin
        self.final_dst = dst if final_dst is None else final_dst
        self.body = body

    def hop(self, src, dst):
        """Copy of a routed frame re-addressed for the next hop."""
        return Frame(src, dst, self.kind, self.payload_bytes, self.total_bytes,
                     self.tag, self.origin, self.final_dst, self.body)

    def __repr__(self):
        return (f"Frame({self.kind.value} {self.src}->{self.dst} "
                f"{self.total_bytes}B tag={self.tag!r})")


class TxOutcome:
    __slots__ = ("delivered", "at")

    def __init__(self, delivered, at=None):
        self.delivered = delivered
        self.at = at

    @property
    def lost(self):
        return not self.delivered

    def __repr__(self):
        return f"Delivered(at={self.at})" if self.delivered else "Lost"


LOST = TxOutcome(False)


class Link:
    def __init__(self, kernel, schedule, adjacency, bandwidth_bps=2_000_000,
                 recorder=None, log=False):
        self.kernel = kernel
        self.schedule = schedule
        self.adjacency = {n: tuple(nbs) for n, nbs in adjacency.items()}
        self.bandwidth_bps = float(bandwidth_bps)
        self.recorder = recorder
        self.receivers = {}
        self._busy = dict.fromkeys(self.adjacency, 0.0)
        self.log = [] if log else None
        self.emitted_bits = 0
        self.lost_bits = 0

    def attach(self, node_id, receiver):
        if node_id not in self.adjacency:
            raise TopologyError(f"node {node_id} is not in the topology")
        self.receivers[node_id] = receiver

    def neighbors(self, node_id):
        return self.adjacency[node_id]

    def transmit(self, frame):
        src, dst = frame.src, frame.dst
        if src not in self.adjacency:
            raise TopologyError(f"unknown source node {src}")
        if dst != BROADCAST and dst not in self.adjacency[src]:
            raise TopologyError(f"node {dst} is not a neighbor of {src}")
        t = self.kernel._now
        bits = frame.total_bytes * 8
        self.emitted_bits += bits
        if self.schedule.state_at(t) is BAD:
            self.lost_bits += bits
            outcome = LOST
        else:
            start = self._busy[src]
            if start < t:
                start = t
            at = start + bits / self.bandwidth_bps
            self._busy[src] = at
            if dst == BROADCAST:
                for nb in self.adjacency[src]:
                    self.kernel.schedule(at, PRIO_DELIVERY, self._deliver, nb, frame)
            else:
                self.kernel.schedule(at, PRIO_DELIVERY, self._deliver, dst, frame)
            outcome = TxOutcome(True, at)
        if self.recorder is not None:
            self.recorder.record_emission(frame, outcome.delivered, t)
        if self.log is not None:
            self.log.append((t, src, dst, frame.kind.value, frame.total_bytes,
                             "delivered" if outcome.delivered else "lost"))
        return outcome

    def _deliver(self, node_id, frame):
        rx = self.receivers.get(node_id)
        if rx is not None:
            rx(frame)

    def write_log(self, path):
        if self.log is None:
            raise RuntimeError("emission logging was not enabled")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "src", "dst", "kind", "total_bytes", "outcome"])
            for t, src, dst, kind, nbytes, outcome in self.log:
                w.writerow([f"{t:.6f}", src, "broadcast" if dst == BROADCAST else dst,
                            kind, nbytes, outcome])
