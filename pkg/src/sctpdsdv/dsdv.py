"""DSDV routing and the node's network layer.

Routes are ranked by destination sequence number first, hop count second.
Even sequence numbers are issued by the destination itself; a node that
loses a neighbor marks every route through it with the next odd number and
an infinite metric.  Periodic full dumps go out every ``periodic_interval``;
incremental updates carry only entries changed since the last
advertisement and wait for the settling time of the entries they carry.

In persistent mode the router stops all periodic and triggered activity
while the channel is observed Bad and resumes at the next Good report,
shifting neighbor liveness references by the length of the outage.
"""

import csv
import math
from collections import deque
from dataclasses import dataclass

from .errors import TopologyError
from .kernel import PRIO_ROUTING
from .link import BROADCAST, DEFAULT_SIZES, Frame, FrameKind
from .channel import BAD

INFINITE = math.inf


@dataclass
class DsdvParams:
    periodic_interval: float = 15.0
    settling_time: float = 6.0
    neighbor_timeout: float = 45.0


@dataclass
class RouteEntry:
    dest: int
    next_hop: int
    metric: float
    seqno: int
    installed_at: float = 0.0
    advertise_after: float = 0.0

    @property
    def broken(self):
        return self.metric == INFINITE


@dataclass(frozen=True)
class UpdateMessage:
    origin: int
    full_dump: bool
    items: tuple  # (dest, metric, seqno) triples


class RoutingTable:
    def __init__(self, owner):
        self.owner = owner
        self.entries = {owner: RouteEntry(owner, owner, 0, 0)}
        self.last_update_from = {}

    def __getitem__(self, dest):
        return self.entries[dest]

    def __contains__(self, dest):
        return dest in self.entries

    def hop_counts(self):
        return {d: e.metric for d, e in self.entries.items() if e.metric != INFINITE}

    def rows(self, t):
        return [(t, self.owner, e.dest, e.next_hop, e.metric, e.seqno)
                for _, e in sorted(self.entries.items())]

    def check(self, neighbors):
        """Raise AssertionError if a table invariant is broken."""
        me = self.entries[self.owner]
        assert me.metric == 0 and me.next_hop == self.owner, "bad self-entry"
        for e in self.entries.values():
            assert (e.seqno % 2 == 1) == (e.metric == INFINITE), f"parity broken: {e}"
            assert e.next_hop == self.owner or e.next_hop in neighbors, f"stray next hop: {e}"


def converged_entries(adjacency):
    """Per-node shortest-path tables (seqno 0), lowest-id next hop on ties."""
    tables = {}
    for src in sorted(adjacency):
        dist = {src: 0}
        first = {src: src}
        frontier = deque([src])
        while frontier:
            u = frontier.popleft()
            for v in sorted(adjacency[u]):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    first[v] = v if u == src else first[u]
                    frontier.append(v)
        tables[src] = {d: RouteEntry(d, first[d], dist[d], 0) for d in dist}
    return tables


def find_routing_loop(routers, dest):
    """Return a node cycle if following next hops toward ``dest`` revisits a node."""
    by_id = {r.node_id: r for r in routers}
    for start in by_id:
        seen = [start]
        node = start
        while node != dest:
            e = by_id[node].table.entries.get(dest)
            if e is None or e.metric == INFINITE:
                break
            node = e.next_hop
            if node in seen:
                return seen[seen.index(node):] + [node]
            seen.append(node)
    return None


def write_table_dump(path, routers, t):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "owner", "dest", "next_hop", "metric", "seqno"])
        for r in routers:
            for row in r.table.rows(t):
                w.writerow([f"{row[0]:.6f}", *row[1:4],
                            "inf" if row[4] == INFINITE else row[4], row[5]])


class DsdvRouter:
    def __init__(self, kernel, node_id, link, params=None, sizes=DEFAULT_SIZES):
        self.kernel = kernel
        self.node_id = node_id
        self.link = link
        self.params = params or DsdvParams()
        self.sizes = sizes
        self.neighbors = frozenset(link.neighbors(node_id))
        self.table = RoutingTable(node_id)
        self.persistent = False
        self.suspended = False
        self.upper = None
        self.route_listeners = []
        self.change_hooks = []
        self.updates_sent = []
        self.dropped_no_route = 0
        self._periodic = None
        self._periodic_at = None
        self._incr = None
        self._incr_at = None
        self._changed = set()
        self._expiry = {}
        self._bad_since = None
        self._held = []
        link.attach(node_id, self.receive)

    def __repr__(self):
        return f"DsdvRouter({self.node_id})"

    # -- setup ---------------------------------------------------------

    def install(self, entries):
        """Warm start from a precomputed table; all neighbors count as just heard."""
        t = self.kernel.now()
        for d, e in entries.items():
            self.table.entries[d] = RouteEntry(d, e.next_hop, e.metric, e.seqno, t, t)
        for nb in self.neighbors:
            self.table.last_update_from[nb] = t
            self._arm_expiry(nb, t + self.params.neighbor_timeout)

    def start(self, first_periodic_at=None):
        if first_periodic_at is None:
            first_periodic_at = self.kernel.now() + self.params.periodic_interval
        self._periodic_at = first_periodic_at
        self._periodic = self.kernel.schedule(
            first_periodic_at, PRIO_ROUTING, self.originate_periodic_update)

    # -- advertisements ------------------------------------------------

    def originate_periodic_update(self):
        t = self.kernel.now()
        self._periodic = None
        me = self.table.entries[self.node_id]
        me.seqno += 2
        entries = self.table.entries
        items = tuple((d, entries[d].metric, entries[d].seqno) for d in sorted(entries))
        self._changed.clear()
        self.kernel.cancel(self._incr)
        self._incr = self._incr_at = None
        msg = UpdateMessage(self.node_id, True, items)
        self._broadcast(msg)
        self._periodic_at = t + self.params.periodic_interval
        self._periodic = self.kernel.schedule(
            self._periodic_at, PRIO_ROUTING, self.originate_periodic_update)
        return msg

    def schedule_incremental(self, changed):
        if not changed:
            raise ValueError("schedule_incremental needs at least one changed destination")
        t = self.kernel.now()
        gate = max(self.table.entries[d].advertise_after for d in changed)
        if gate <= t:
            gate = t
        elif self._incr_at is not None and self._incr_at > gate:
            gate = self._incr_at
        self.kernel.cancel(self._incr)
        self._incr = None
        self._incr_at = gate
        if self.suspended:
            return gate
        if gate <= t:
            self._fire_incremental()
        else:
            self._incr = self.kernel.schedule(gate, PRIO_ROUTING, self._fire_incremental)
        return gate

    def _fire_incremental(self):
        self._incr = self._incr_at = None
        if not self._changed:
            return None
        entries = self.table.entries
        items = tuple((d, entries[d].metric, entries[d].seqno) for d in sorted(self._changed))
        self._changed.clear()
        msg = UpdateMessage(self.node_id, False, items)
        self._broadcast(msg)
        return msg

    def _broadcast(self, msg):
        size = self.sizes.frame_size(FrameKind.DSDV_UPDATE, len(msg.items))
        frame = Frame(self.node_id, BROADCAST, FrameKind.DSDV_UPDATE, 0, size, body=msg)
        self.updates_sent.append((self.kernel.now(), msg))
        return self.link.transmit(frame)

    # -- table maintenance ---------------------------------------------

    def process_update(self, msg, sender):
        if sender not in self.neighbors:
            raise TopologyError(f"node {self.node_id} got an update from non-neighbor {sender}")
        t = self.kernel.now()
        p = self.params
        self.table.last_update_from[sender] = t
        if sender not in self._expiry and not self.suspended:
            self._arm_expiry(sender, t + p.neighbor_timeout)
        entries = self.table.entries
        changed = set()
        significant = set()
        for dest, metric, seqno in msg.items:
            if dest == self.node_id:
                me = entries[dest]
                if seqno > me.seqno:
                    # somebody holds a newer broken marker for us; outbid it
                    me.seqno = seqno + 1 if seqno % 2 else seqno + 2
                    me.advertise_after = t
                    changed.add(dest)
                    significant.add(dest)
                continue
            cand = metric + 1
            cur = entries.get(dest)
            if cur is None:
                if cand == INFINITE:
                    continue
            elif seqno < cur.seqno or (seqno == cur.seqno and cand >= cur.metric):
                continue
            moved = cur is None or cur.next_hop != sender or cur.metric != cand
            settle = t if cand == INFINITE else t + p.settling_time
            if cur is None:
                entries[dest] = RouteEntry(dest, sender, cand, seqno, t, settle)
            else:
                cur.next_hop = sender
                cur.metric = cand
                cur.seqno = seqno
                if moved:
                    cur.installed_at = t
                    cur.advertise_after = settle
            changed.add(dest)
            if moved:
                significant.add(dest)
        if changed:
            self._changed |= changed
            for hook in self.change_hooks:
                hook(self)
        if significant:
            self.schedule_incremental(significant)
            self._notify_routes()
        return changed

    def expire_neighbor(self, neighbor):
        t = self.kernel.now()
        self.table.last_update_from.pop(neighbor, None)
        self.kernel.cancel(self._expiry.pop(neighbor, None))
        broken = []
        for e in self.table.entries.values():
            if e.next_hop == neighbor and e.dest != self.node_id and e.metric != INFINITE:
                e.metric = INFINITE
                e.seqno += 1
                e.installed_at = t
                e.advertise_after = t
                broken.append(e.dest)
        if broken:
            self._changed.update(broken)
            for hook in self.change_hooks:
                hook(self)
            self.schedule_incremental(broken)
            self._notify_routes()
        return broken

    def _arm_expiry(self, nb, at):
        self._expiry[nb] = self.kernel.schedule(at, PRIO_ROUTING, self._check_expiry, nb)

    def _check_expiry(self, nb):
        self._expiry.pop(nb, None)
        last = self.table.last_update_from.get(nb)
        if last is None:
            return
        due = last + self.params.neighbor_timeout
        if self.kernel.now() >= due:
            self.expire_neighbor(nb)
        else:
            self._arm_expiry(nb, due)

    def lookup_next_hop(self, dest):
        e = self.table.entries.get(dest)
        if e is None or e.metric == INFINITE:
            return None
        return e.next_hop

    def _notify_routes(self):
        for cb in self.route_listeners:
            cb()

    # -- cross-layer ---------------------------------------------------

    def on_channel(self, state, t_actual=None):
        if not self.persistent:
            return
        now = self.kernel.now()
        if state is BAD:
            if self.suspended:
                return
            self.suspended = True
            self._bad_since = now
            self.kernel.cancel(self._periodic)
            self._periodic = None
            self.kernel.cancel(self._incr)
            self._incr = None
            for h in self._expiry.values():
                self.kernel.cancel(h)
            self._expiry.clear()
            return
        if not self.suspended:
            return
        self.suspended = False
        outage = now - self._bad_since
        self._bad_since = None
        lud = self.table.last_update_from
        for nb in lud:
            lud[nb] += outage
        if self._periodic_at is not None:
            if self._periodic_at <= now:
                self.originate_periodic_update()
            else:
                self._periodic = self.kernel.schedule(
                    self._periodic_at, PRIO_ROUTING, self.originate_periodic_update)
        if self._incr_at is not None:
            if self._incr_at <= now:
                self._fire_incremental()
            else:
                self._incr = self.kernel.schedule(self._incr_at, PRIO_ROUTING,
                                                  self._fire_incremental)
        held, self._held = self._held, []
        for frame in held:
            self.forward(frame)
        timeout = self.params.neighbor_timeout
        for nb in sorted(lud):
            self._arm_expiry(nb, max(now, lud[nb] + timeout))

    # -- network layer -------------------------------------------------

    def send(self, kind, payload_bytes, total_bytes, dest, tag=None, body=None):
        """Route a transport frame; False when there is no route to ``dest``."""
        nh = self.lookup_next_hop(dest)
        if nh is None:
            return False
        frame = Frame(self.node_id, nh, kind, payload_bytes, total_bytes, tag,
                      self.node_id, dest, body)
        if self.suspended:
            self._held.append(frame)
            return True
        self.link.transmit(frame)
        return True

    def forward(self, frame):
        if self.suspended:
            self._held.append(frame)
            return
        nh = self.lookup_next_hop(frame.final_dst)
        if nh is None:
            self.dropped_no_route += 1
            return
        self.link.transmit(frame.hop(self.node_id, nh))

    def receive(self, frame):
        if frame.kind is FrameKind.DSDV_UPDATE:
            self.process_update(frame.body, frame.src)
        elif frame.final_dst == self.node_id:
            if self.upper is not None:
                self.upper(frame)
        else:
            self.forward(frame)
