"""Scripted conformance traces and a quick invariant sweep.

The trace builders here are shared by the ``selftest`` command and the test
suite; each returns the wired Simulation after running it.
"""

import random
from collections import deque

from .channel import BAD, GOOD, CutSchedule, build_cut_schedule
from .dsdv import find_routing_loop
from .harness import ScenarioConfig, Simulation
from .kernel import PRIO_APP

NO_CUTS = dict(racm__start=1e9)


def _schedule(transitions, horizon):
    return CutSchedule(0.0, tuple(transitions), float(horizon))


def unreachable_peer_trace(mode="traditional", horizon=1000.0, **overrides):
    """One DATA chunk at t=1 into a channel that is Bad from t=0.5 on."""
    cfg = ScenarioConfig(sim_end=horizon).replace(**overrides)
    sim = Simulation(cfg, mode, schedule=_schedule([(0.5, BAD)], horizon), trace=True)
    sim._cbr_stopped = True
    sim.kernel.schedule(1.0, PRIO_APP, sim.sender.submit_payload, cfg.segment_bytes)
    sim.run()
    return sim


def rto_sequence(sim):
    return [rto for _, ev, _, _, rto in sim.sender.trace if ev == "T3_START"]


def t2_abort_trace(horizon=2000.0, **overrides):
    """SHUTDOWN issued into a permanently Bad channel."""
    cfg = ScenarioConfig(sim_end=horizon).replace(**overrides)
    sim = Simulation(cfg, "traditional", schedule=_schedule([(0.5, BAD)], horizon),
                     trace=True)
    sim._cbr_stopped = True
    sim.kernel.schedule(1.0, PRIO_APP, sim.sender.shutdown)
    sim.run()
    return sim


def four_sack_trace(reports=4):
    """Lose TSN 2 with a 1 ms cut, then send ``reports`` more chunks.

    Runs to 0.95 s, before the 1 s retransmission timer could fire.
    """
    cfg = ScenarioConfig(sim_end=5.0)
    sim = Simulation(cfg, "traditional",
                     schedule=_schedule([(0.1, BAD), (0.101, GOOD)], 5.0), trace=True)
    sim._cbr_stopped = True
    for k in range(reports + 2):
        sim.kernel.schedule(k * 0.1, PRIO_APP, sim.sender.submit_payload, cfg.segment_bytes)
    sim.run(0.95)
    return sim


def shutdown_trace(lose=None, mode="traditional"):
    """Ten chunks, then shutdown at t=2; ``lose`` names a teardown frame to drop.

    The drop is a 5 ms cut placed right after the frame is emitted.
    """
    cut_at = {None: None, "SHUTDOWN_ACK": 2.0 + 0.0001, "SHUTDOWN_COMPLETE": 2.0 + 0.0003}
    t0 = cut_at[lose]
    transitions = [] if t0 is None else [(t0, BAD), (t0 + 0.005, GOOD)]
    cfg = ScenarioConfig(sim_end=60.0)
    sim = Simulation(cfg, mode, schedule=_schedule(transitions, 60.0), trace=True)
    sim._cbr_stopped = True
    for k in range(10):
        sim.kernel.schedule(k * 0.1, PRIO_APP, sim.sender.submit_payload, cfg.segment_bytes)
    sim.kernel.schedule(2.0, PRIO_APP, sim.sender.shutdown)
    sim.run()
    return sim


def dsdv_convergence(topology, until=None, **overrides):
    cfg = ScenarioConfig(topology=topology, sim_end=1000.0).replace(
        dsdv__warm_start=False, **NO_CUTS, **overrides)
    sim = Simulation(cfg, "traditional", traffic=False)
    sim.run(3 * cfg.dsdv.periodic if until is None else until)
    return sim


def bfs_hops(adjacency, src):
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adjacency[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


def _check(name, ok, detail=""):
    return name, bool(ok), detail


def run_selftest(out=print):
    checks = []

    sim = unreachable_peer_trace()
    seq = rto_sequence(sim)[:7]
    checks.append(_check("rto backoff 3,6,12,24,48,60,60", seq == [3, 6, 12, 24, 48, 60, 60],
                         str(seq)))
    sim = t2_abort_trace()
    expiries = sum(1 for _, ev, *_ in sim.sender.trace if ev == "T2_EXPIRY")
    checks.append(_check("T2 aborts on 11th expiry",
                         sim.sender.state.value == "ABORTED" and expiries == 11,
                         f"{sim.sender.state}, {expiries} expiries"))
    for n, want in ((4, 1), (3, 0)):
        sim = four_sack_trace(n)
        checks.append(_check(f"{n} gap reports -> {want} fast retransmission",
                             sim.sender.fast_retransmissions == want,
                             str(sim.sender.fast_retransmissions)))
    for lose in (None, "SHUTDOWN_ACK", "SHUTDOWN_COMPLETE"):
        sim = shutdown_trace(lose)
        s = [x.value for x in sim.sender.transitions()]
        r = [x.value for x in sim.receiver.transitions()]
        checks.append(_check(
            f"shutdown conformance (lose={lose})",
            s == ["ESTABLISHED", "SHUTDOWN_PENDING", "SHUTDOWN_SENT", "CLOSED"]
            and r == ["ESTABLISHED", "SHUTDOWN_ACK_SENT", "CLOSED"], f"{s} / {r}"))
    for topo in ("pair", "chain(3)", "chain(4)", "ring(4)"):
        sim = dsdv_convergence(topo)
        ok = all(r.table.hop_counts() == bfs_hops(sim.adjacency, r.node_id)
                 for r in sim.routers)
        checks.append(_check(f"dsdv matches BFS on {topo}", ok))

    rng = random.Random(7)
    for mode in ("traditional", "persistent"):
        cfg = ScenarioConfig(sim_end=600.0, topology="chain(3)")
        sched = build_cut_schedule(rng, 50.0, 20.0, 40.0, 600.0)
        sim = Simulation(cfg, mode, schedule=sched)
        loops = []
        for r in sim.routers:
            r.change_hooks.append(
                lambda _r: loops.extend(filter(None, (find_routing_loop(sim.routers, d)
                                                      for d in sim.adjacency))))
        sim.run()
        rec = sim.recorder
        checks.append(_check(f"{mode}: energy conserved, loop-free",
                             rec.total_lost_bits + rec.total_ok_bits == rec.total_bits
                             and not loops))

    failed = 0
    for name, ok, detail in checks:
        out(f"{'PASS' if ok else 'FAIL'}  {name}" + (f"  [{detail}]" if detail and not ok else ""))
        failed += not ok
    out(f"{len(checks) - failed}/{len(checks)} checks passed")
    return failed == 0
