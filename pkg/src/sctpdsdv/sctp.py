"""Simplified SCTP association endpoint.

Covers data transfer with cumulative SACKs and gap reports, RTO estimation
and backoff, four-report fast retransmit, heartbeats and the T2-shutdown
teardown on both sides.  Associations start ESTABLISHED.

In persistent mode the endpoint follows the channel state reported by the
environment subsystem: while Bad it emits nothing, its timers are frozen
with their remaining time, and a retransmission timer that expires anyway
is deferred, without backoff, to the next Good report.
"""

import csv
import enum
from collections import deque
from dataclasses import dataclass

from .channel import BAD
from .kernel import PRIO_TRANSPORT
from .link import DEFAULT_SIZES, SHUTDOWN_FAMILY, FrameKind

FAST_RTX_THRESHOLD = 4

DATA = FrameKind.DATA
SACK = FrameKind.SACK


class AssocState(enum.Enum):
    ESTABLISHED = "ESTABLISHED"
    SHUTDOWN_PENDING = "SHUTDOWN_PENDING"
    SHUTDOWN_SENT = "SHUTDOWN_SENT"
    SHUTDOWN_ACK_SENT = "SHUTDOWN_ACK_SENT"
    CLOSED = "CLOSED"
    ABORTED = "ABORTED"

    def __str__(self):
        return self.value


ESTABLISHED = AssocState.ESTABLISHED
SHUTDOWN_PENDING = AssocState.SHUTDOWN_PENDING
SHUTDOWN_SENT = AssocState.SHUTDOWN_SENT
SHUTDOWN_ACK_SENT = AssocState.SHUTDOWN_ACK_SENT
CLOSED = AssocState.CLOSED
ABORTED = AssocState.ABORTED

# Legal lifecycle moves; anything else is a bug.
TRANSITIONS = {
    ESTABLISHED: {SHUTDOWN_PENDING, SHUTDOWN_ACK_SENT, ABORTED},
    SHUTDOWN_PENDING: {SHUTDOWN_SENT, SHUTDOWN_ACK_SENT, ABORTED},
    SHUTDOWN_SENT: {CLOSED, SHUTDOWN_ACK_SENT, ABORTED},
    SHUTDOWN_ACK_SENT: {CLOSED, ABORTED},
    CLOSED: set(),
    ABORTED: set(),
}


@dataclass
class SctpParams:
    rto_initial: float = 3.0
    rto_min: float = 1.0
    rto_max: float = 60.0
    max_retrans: int = 10
    window: int = 4
    heartbeat_interval: float = 30.0
    backoff_multiplier: float = 2.0
    segment_bytes: int = 1500


@dataclass
class RtoState:
    srtt: float = None
    rttvar: float = None
    rto: float = 3.0


class Chunk:
    __slots__ = ("chunk_id", "nbytes", "tsn", "sent_at", "retransmitted",
                 "gap_acked", "marked")

    def __init__(self, chunk_id, nbytes):
        self.chunk_id = chunk_id
        self.nbytes = nbytes
        self.tsn = None
        self.sent_at = None
        self.retransmitted = False
        self.gap_acked = False
        self.marked = False

    def __repr__(self):
        return f"Chunk(tsn={self.tsn}, id={self.chunk_id}, {self.nbytes}B)"


class Timer:
    """One-shot timer with a lazily moved deadline and freeze/thaw support.

    Restarting to a later deadline keeps the queued event and re-arms it when
    it fires early, which saves a heap operation per acknowledgment.
    """

    __slots__ = ("kernel", "fn", "deadline", "handle", "frozen")

    def __init__(self, kernel, fn):
        self.kernel = kernel
        self.fn = fn
        self.deadline = None
        self.handle = None
        self.frozen = None

    @property
    def running(self):
        return self.deadline is not None

    def start(self, duration):
        self.frozen = None
        deadline = self.kernel._now + duration
        self.deadline = deadline
        h = self.handle
        if h is not None and h.fn is not None:
            if h.fire_at <= deadline:
                return
            self.kernel.cancel(h)
        self.handle = self.kernel.schedule(deadline, PRIO_TRANSPORT, self._fire)

    def start_frozen(self, duration):
        self.stop()
        self.frozen = duration

    def stop(self):
        self.deadline = None
        self.frozen = None
        if self.handle is not None:
            self.kernel.cancel(self.handle)
            self.handle = None

    def freeze(self):
        if self.deadline is None:
            return None
        remaining = self.deadline - self.kernel._now
        self.stop()
        self.frozen = remaining
        return remaining

    def thaw(self):
        remaining = self.frozen
        if remaining is not None:
            self.start(remaining)
        return remaining

    def _fire(self):
        self.handle = None
        deadline = self.deadline
        if deadline is None:
            return
        if self.kernel._now < deadline:
            self.handle = self.kernel.schedule(deadline, PRIO_TRANSPORT, self._fire)
            return
        self.deadline = None
        self.fn()


class Association:
    """One endpoint of a pre-established association with ``peer``.

    ``router`` is the local network layer: it must offer
    ``send(kind, payload_bytes, total_bytes, dest, tag, body) -> bool`` and
    ``lookup_next_hop(dest)``.
    """

    def __init__(self, kernel, router, peer, params=None, sizes=DEFAULT_SIZES,
                 on_deliver=None, trace=False):
        self.kernel = kernel
        self.router = router
        self.local = router.node_id
        self.peer = peer
        self.params = p = params or SctpParams()
        self.sizes = sizes
        self.on_deliver = on_deliver
        self.persistent = False
        self.blocked = False

        self.state = ESTABLISHED
        self.state_history = [(kernel.now(), ESTABLISHED)]
        self.next_tsn = 1
        self.cum_ack = 0
        self.send_queue = deque()
        self.outstanding = {}
        self.flight = 0
        self.rto = RtoState(rto=p.rto_initial)
        self.dup_reports = {}
        self.fast_rtx_done = set()
        self.t2_attempts = 0
        self.t2_value = None
        self.window = p.window

        self.rtx_timer = Timer(kernel, self.on_rto_expiry)
        self.t2_timer = Timer(kernel, self._on_t2_expiry)
        self.hb_timer = Timer(kernel, self._on_heartbeat_timer)
        self._gate = False
        self._pending_rtx = False
        self._any_marked = False
        self._shutdown_deferred = False
        self._t2_deferred = False
        self._held = []
        self._next_chunk_id = 0
        self.last_data_emit = kernel.now()

        # receive side
        self.rcv_cum = 0
        self.rcv_ooo = {}
        self.delivered_ids = []
        self.delivered_bytes = 0

        # counters
        self.submitted_bytes = 0
        self.dropped_bytes = 0
        self.data_sent = 0
        self.retransmissions = 0
        self.fast_retransmissions = 0
        self.heartbeats_sent = 0
        self.heartbeat_acks = 0
        self.trace = [] if trace else None

        router.upper = self.receive
        router.route_listeners.append(self.try_send)

    def __repr__(self):
        return f"Association({self.local}->{self.peer}, {self.state.value})"

    # -- bookkeeping ---------------------------------------------------

    def _log(self, event, tsn=None, rto=None):
        if self.trace is not None:
            self.trace.append((self.kernel.now(), event, self.state.value, tsn,
                               self.rto.rto if rto is None else rto))

    def _set_state(self, new):
        if new not in TRANSITIONS[self.state]:
            raise AssertionError(f"illegal transition {self.state} -> {new}")
        self.state = new
        self.state_history.append((self.kernel.now(), new))
        self._log("STATE")
        if new is CLOSED or new is ABORTED:
            self.rtx_timer.stop()
            self.t2_timer.stop()
            self.hb_timer.stop()

    def transitions(self):
        return [s for _, s in self.state_history]

    def has_pending(self):
        return bool(self.send_queue) or bool(self.outstanding)

    def write_trace(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "event", "state", "tsn", "rto"])
            for t, event, state, tsn, rto in self.trace or ():
                w.writerow([f"{t:.6f}", event, state, "" if tsn is None else tsn,
                            f"{rto:.6f}"])

    def start(self):
        self.hb_timer.start(self.params.heartbeat_interval)

    def _start_timer(self, timer, duration, event):
        if self.blocked:
            timer.start_frozen(duration)
        else:
            timer.start(duration)
        self._log(event, rto=duration)

    # -- emission ------------------------------------------------------

    def _emit_data(self, chunk, rtx):
        nbytes = chunk.nbytes
        ok = self.router.send(DATA, nbytes, nbytes + self.sizes.data, self.peer,
                              chunk.tsn, chunk.chunk_id)
        if not ok:
            return False
        now = self.kernel._now
        self.last_data_emit = now
        if rtx:
            chunk.retransmitted = True
            self.retransmissions += 1
            self._log("DATA_RTX", chunk.tsn)
        else:
            chunk.sent_at = now
            self.data_sent += 1
            if self.trace is not None:
                self._log("DATA_TX", chunk.tsn)
        return True

    def _emit_ctl(self, kind, tag=None, body=None):
        if self.blocked:
            if kind is SACK:
                self._held = [h for h in self._held if h[0] is not SACK]
            self._held.append((kind, tag, body))
            return True
        if kind is SACK:
            body = (self.rcv_cum, tuple(sorted(self.rcv_ooo)))
        ok = self.router.send(kind, 0, self.sizes.frame_size(kind), self.peer, tag, body)
        if self.trace is not None and kind is not SACK:
            self._log(f"{kind.value}_TX")
        return ok

    # -- application side ----------------------------------------------

    def submit_payload(self, nbytes):
        if self.state is not ESTABLISHED and self.state is not SHUTDOWN_PENDING:
            self.dropped_bytes += nbytes
            return False
        seg = self.params.segment_bytes
        self.submitted_bytes += nbytes
        q = self.send_queue
        while nbytes > 0:
            n = seg if nbytes > seg else nbytes
            q.append(Chunk(self._next_chunk_id, n))
            self._next_chunk_id += 1
            nbytes -= n
        self.try_send()
        return True

    def try_send(self):
        state = self.state
        if (state is not ESTABLISHED and state is not SHUTDOWN_PENDING) or self.blocked:
            return
        if self._pending_rtx:
            first = self._first_in_flight()
            if first is None:
                self._pending_rtx = False
            else:
                if not self._emit_data(first, rtx=True):
                    return
                first.marked = False
                self._pending_rtx = False
                self._start_timer(self.rtx_timer, self.rto.rto, "T3_START")
        if self._gate:
            return
        if self._any_marked:
            for c in self.outstanding.values():
                if c.marked and not c.gap_acked:
                    if not self._emit_data(c, rtx=True):
                        return
                    c.marked = False
            self._any_marked = False
        q = self.send_queue
        if not q or self.flight >= self.window:
            return
        if self.router.lookup_next_hop(self.peer) is None:
            return
        while q and self.flight < self.window:
            c = q.popleft()
            c.tsn = self.next_tsn
            self.next_tsn += 1
            self.outstanding[c.tsn] = c
            self.flight += 1
            self._emit_data(c, rtx=False)
            if not self.rtx_timer.running and self.rtx_timer.frozen is None:
                self._start_timer(self.rtx_timer, self.rto.rto, "T3_START")

    def _first_in_flight(self):
        for c in self.outstanding.values():
            if not c.gap_acked:
                return c
        return None

    # -- reception -----------------------------------------------------

    def receive(self, frame):
        kind = frame.kind
        if kind is DATA:
            self.on_data(frame.tag, frame.body, frame.payload_bytes)
        elif kind is SACK:
            cum, gaps = frame.body
            self.on_sack(cum, gaps)
        elif kind is FrameKind.HEARTBEAT:
            if self.state is not CLOSED and self.state is not ABORTED:
                self._emit_ctl(FrameKind.HEARTBEAT_ACK, frame.tag)
        elif kind is FrameKind.HEARTBEAT_ACK:
            self.heartbeat_acks += 1
        elif kind in SHUTDOWN_FAMILY:
            self.on_shutdown_msg(kind)

    def on_data(self, tsn, chunk_id, nbytes):
        state = self.state
        if state is CLOSED or state is ABORTED:
            return
        if tsn > self.rcv_cum and tsn not in self.rcv_ooo:
            if tsn == self.rcv_cum + 1:
                self._deliver(chunk_id, nbytes)
                self.rcv_cum = tsn
                ooo = self.rcv_ooo
                while ooo and self.rcv_cum + 1 in ooo:
                    self.rcv_cum += 1
                    self._deliver(*ooo.pop(self.rcv_cum))
            else:
                self.rcv_ooo[tsn] = (chunk_id, nbytes)
        self._emit_ctl(SACK)

    def _deliver(self, chunk_id, nbytes):
        self.delivered_ids.append(chunk_id)
        self.delivered_bytes += nbytes
        if self.on_deliver is not None:
            self.on_deliver(nbytes)

    def on_sack(self, cum, gaps):
        state = self.state
        if state is CLOSED or state is ABORTED:
            return
        if cum >= self.next_tsn:
            self._log("PROTOCOL_VIOLATION", cum)
            self._set_state(ABORTED)
            return
        now = self.kernel._now
        out = self.outstanding
        sample_chunk = None
        advanced = cum > self.cum_ack
        if advanced:
            for tsn in range(self.cum_ack + 1, cum + 1):
                c = out.pop(tsn, None)
                if c is None:
                    continue
                if not c.gap_acked:
                    self.flight -= 1
                    if not c.retransmitted:
                        sample_chunk = c
                self.dup_reports.pop(tsn, None)
                self.fast_rtx_done.discard(tsn)
            self.cum_ack = cum
        if gaps:
            for tsn in gaps:
                c = out.get(tsn)
                if c is not None and not c.gap_acked:
                    c.gap_acked = True
                    c.marked = False
                    self.flight -= 1
                    if not c.retransmitted and (sample_chunk is None or tsn > sample_chunk.tsn):
                        sample_chunk = c
            highest = gaps[-1]
            gapset = set(gaps)
            for tsn, c in out.items():
                if tsn >= highest:
                    break
                if c.gap_acked or tsn in gapset:
                    continue
                n = self.dup_reports.get(tsn, 0) + 1
                self.dup_reports[tsn] = n
                if n >= FAST_RTX_THRESHOLD and tsn not in self.fast_rtx_done:
                    self.fast_rtx_done.add(tsn)
                    self._fast_retransmit(c)
        if sample_chunk is not None:
            assert not sample_chunk.retransmitted, "Karn's rule violated"
            self.update_rto(now - sample_chunk.sent_at)
        if advanced:
            self._gate = False
            if self.flight:
                self._start_timer(self.rtx_timer, self.rto.rto, "T3_START")
            else:
                self.rtx_timer.stop()
                if not out:
                    self._pending_rtx = False
        elif self.flight and not self.rtx_timer.running and self.rtx_timer.frozen is None:
            self._start_timer(self.rtx_timer, self.rto.rto, "T3_START")
        self.try_send()
        if self.state is SHUTDOWN_PENDING:
            self._maybe_send_shutdown()

    def _fast_retransmit(self, chunk):
        self.fast_retransmissions += 1
        self._log("FAST_RTX", chunk.tsn)
        if self.blocked or not self._emit_data(chunk, rtx=True):
            chunk.marked = True
            self._any_marked = True

    def update_rto(self, sample):
        r = self.rto
        p = self.params
        if r.srtt is None:
            r.srtt = sample
            r.rttvar = sample / 2
        else:
            r.rttvar = 0.75 * r.rttvar + 0.25 * abs(r.srtt - sample)
            r.srtt = 0.875 * r.srtt + 0.125 * sample
        rto = r.srtt + 4 * r.rttvar
        r.rto = min(max(rto, p.rto_min), p.rto_max)
        return r.rto

    def on_rto_expiry(self):
        first = self._first_in_flight()
        if first is None:
            return
        self._log("T3_EXPIRY", first.tsn)
        self._gate = True
        for c in self.outstanding.values():
            if c is not first and not c.gap_acked:
                c.marked = True
                self._any_marked = True
        if self.blocked:
            self._pending_rtx = True
            self._log("T3_DEFER", first.tsn)
            return
        p = self.params
        self.rto.rto = min(self.rto.rto * p.backoff_multiplier, p.rto_max)
        if not self._emit_data(first, rtx=True):
            self._pending_rtx = True
        self._start_timer(self.rtx_timer, self.rto.rto, "T3_START")

    # -- heartbeat -----------------------------------------------------

    def _on_heartbeat_timer(self):
        if self.state is not ESTABLISHED and self.state is not SHUTDOWN_PENDING:
            return
        interval = self.params.heartbeat_interval
        now = self.kernel._now
        if now - self.last_data_emit >= interval:
            self.heartbeats_sent += 1
            self._emit_ctl(FrameKind.HEARTBEAT, self.heartbeats_sent)
        self._start_timer(self.hb_timer, interval, "HB_TIMER")

    # -- teardown ------------------------------------------------------

    def shutdown(self):
        if self.state is not ESTABLISHED:
            return False
        self._set_state(SHUTDOWN_PENDING)
        self._maybe_send_shutdown()
        return True

    def _maybe_send_shutdown(self):
        if self.state is not SHUTDOWN_PENDING or self.send_queue or self.outstanding:
            return
        if self.blocked:
            self._shutdown_deferred = True
            return
        self._shutdown_deferred = False
        self.rtx_timer.stop()
        self.hb_timer.stop()
        self._emit_ctl(FrameKind.SHUTDOWN)
        self._set_state(SHUTDOWN_SENT)
        self.t2_value = self.rto.rto
        self._start_timer(self.t2_timer, self.t2_value, "T2_START")

    def on_shutdown_msg(self, kind):
        state = self.state
        if kind is FrameKind.SHUTDOWN:
            if state is SHUTDOWN_ACK_SENT:
                self._emit_ctl(FrameKind.SHUTDOWN_ACK)
            elif state in (ESTABLISHED, SHUTDOWN_PENDING, SHUTDOWN_SENT):
                self.rtx_timer.stop()
                self.hb_timer.stop()
                self.t2_timer.stop()
                self._emit_ctl(FrameKind.SHUTDOWN_ACK)
                self._set_state(SHUTDOWN_ACK_SENT)
                self.t2_attempts = 0
                self.t2_value = self.rto.rto
                self._start_timer(self.t2_timer, self.t2_value, "T2_START")
        elif kind is FrameKind.SHUTDOWN_ACK:
            if state is SHUTDOWN_SENT:
                self.t2_timer.stop()
                self._log("T2_CANCEL")
                self._emit_ctl(FrameKind.SHUTDOWN_COMPLETE)
                self._set_state(CLOSED)
            elif state is CLOSED:
                # our SHUTDOWN_COMPLETE was lost; the peer is still waiting
                self._emit_ctl(FrameKind.SHUTDOWN_COMPLETE)
        elif kind is FrameKind.SHUTDOWN_COMPLETE:
            if state is SHUTDOWN_ACK_SENT:
                self.t2_timer.stop()
                self._log("T2_CANCEL")
                self._set_state(CLOSED)

    def _on_t2_expiry(self):
        self._log("T2_EXPIRY", rto=self.t2_value)
        if self.blocked:
            self._t2_deferred = True
            self._log("T2_DEFER", rto=self.t2_value)
            return
        p = self.params
        if self.t2_attempts + 1 > p.max_retrans:
            self.t2_attempts += 1
            self._set_state(ABORTED)
            return
        self._resend_t2_message()
        self.t2_value = min(self.t2_value * p.backoff_multiplier, p.rto_max)
        self._start_timer(self.t2_timer, self.t2_value, "T2_START")

    def _resend_t2_message(self):
        self.t2_attempts += 1
        if self.state is SHUTDOWN_SENT:
            self._emit_ctl(FrameKind.SHUTDOWN)
        elif self.state is SHUTDOWN_ACK_SENT:
            self._emit_ctl(FrameKind.SHUTDOWN_ACK)

    # -- cross-layer ---------------------------------------------------

    def on_channel(self, state, t_actual=None):
        if not self.persistent:
            return
        if state is BAD:
            if self.blocked:
                return
            self.blocked = True
            self._log("FREEZE")
            self.rtx_timer.freeze()
            self.t2_timer.freeze()
            self.hb_timer.freeze()
            return
        if not self.blocked:
            return
        self.blocked = False
        self._log("THAW")
        held, self._held = self._held, []
        held.sort(key=lambda h: h[0] not in SHUTDOWN_FAMILY)
        if self._shutdown_deferred:
            self._maybe_send_shutdown()
        if self._t2_deferred:
            self._t2_deferred = False
            if self.state is SHUTDOWN_SENT or self.state is SHUTDOWN_ACK_SENT:
                self._resend_t2_message()
                self._start_timer(self.t2_timer, self.t2_value, "T2_START")
        for kind, tag, body in held:
            self._emit_ctl(kind, tag, body)
        self.rtx_timer.thaw()
        self.t2_timer.thaw()
        self.hb_timer.thaw()
        self.try_send()
