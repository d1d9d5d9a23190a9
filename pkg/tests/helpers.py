import random

from sctpdsdv.channel import BAD, GOOD, CutSchedule, build_cut_schedule
from sctpdsdv.harness import ScenarioConfig, Simulation
from sctpdsdv.kernel import PRIO_APP
from sctpdsdv.link import FrameKind


class FakeRouter:
    """Network layer stand-in that records what the endpoint hands down."""

    def __init__(self, kernel, node_id=0, route=True):
        self.kernel = kernel
        self.node_id = node_id
        self.route = route
        self.upper = None
        self.route_listeners = []
        self.sent = []

    def lookup_next_hop(self, dest):
        return dest if self.route else None

    def send(self, kind, payload_bytes, total_bytes, dest, tag=None, body=None):
        if not self.route:
            return False
        self.sent.append((self.kernel.now(), kind, tag, body))
        return True

    def kinds(self, kind=None):
        return [s for s in self.sent if kind is None or s[1] is kind]

    def data_tsns(self):
        return [tag for _, kind, tag, _ in self.sent if kind is FrameKind.DATA]


DRAIN = 250.0


def fuzz_schedule(seed):
    """Short random cut timeline whose last interval is Good for DRAIN seconds."""
    rng = random.Random(seed)
    sched = build_cut_schedule(rng, rng.randint(5, 40), 3, 45, rng.randint(60, 220))
    tr = list(sched.transitions)
    if not tr:
        tr = [(30.0, BAD)]
    if tr[-1][1] is BAD:
        tr.append((tr[-1][0] + rng.randint(3, 45), GOOD))
    last_good = tr[-1][0]
    return CutSchedule(0.0, tuple(tr), last_good + DRAIN), last_good


def delivered_exactly_once(seed, mode, **overrides):
    """Run CBR until the final Good transition, then let the queue drain."""
    sched, last_good = fuzz_schedule(seed)
    cfg = ScenarioConfig(sim_end=sched.horizon).replace(**overrides)
    sim = Simulation(cfg, mode, schedule=sched)
    sim.kernel.schedule(last_good, PRIO_APP, setattr, sim, "_cbr_stopped", True)
    sim.run()
    s, r = sim.sender, sim.receiver
    return (r.delivered_ids == list(range(s._next_chunk_id))
            and r.delivered_bytes == s.submitted_bytes and not s.has_pending())
