import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sctpdsdv.channel import BAD, GOOD, CutSchedule, build_cut_schedule
from sctpdsdv.harness import ScenarioConfig, Simulation
from sctpdsdv.kernel import PRIO_APP, Kernel
from sctpdsdv.link import FrameKind
from sctpdsdv.sctp import (ABORTED, CLOSED, ESTABLISHED, SHUTDOWN_ACK_SENT, SHUTDOWN_SENT,
                           TRANSITIONS, Association, AssocState)
from sctpdsdv.selftest import (four_sack_trace, rto_sequence, shutdown_trace, t2_abort_trace,
                               unreachable_peer_trace)

from helpers import FakeRouter

DATA, SACK = FrameKind.DATA, FrameKind.SACK


def _events(assoc, name):
    return [(t, tsn, rto) for t, ev, _, tsn, rto in assoc.trace if ev == name]


def _cut_sim(mode, pairs, horizon=400.0, **overrides):
    cfg = ScenarioConfig(sim_end=horizon).replace(**overrides)
    sim = Simulation(cfg, mode, schedule=CutSchedule(0.0, tuple(pairs), horizon), trace=True,
                     log_emissions=True)
    sim._cbr_stopped = True
    return sim


def _submit(sim, t, nbytes=1500):
    sim.kernel.schedule(t, PRIO_APP, sim.sender.submit_payload, nbytes)


# -- sending -----------------------------------------------------------

def test_single_payload_goes_out_immediately(endpoint):
    k, router, a = endpoint()
    a.submit_payload(1500)
    assert router.data_tsns() == [1]
    assert a.flight == 1


def test_segmentation(endpoint):
    k, router, a = endpoint()
    a.submit_payload(4000)
    assert [c.nbytes for c in a.outstanding.values()] == [1500, 1500, 1000]


def test_window_limits_flight(endpoint):
    k, router, a = endpoint(window=4)
    for _ in range(6):
        a.submit_payload(1500)
    assert router.data_tsns() == [1, 2, 3, 4]
    assert len(a.send_queue) == 2
    a.submit_payload(1500)
    assert len(router.data_tsns()) == 4


def test_no_route_keeps_data_queued(endpoint):
    k, router, a = endpoint()
    router.route = False
    a.submit_payload(1500)
    assert a.flight == 0 and len(a.send_queue) == 1
    router.route = True
    for cb in router.route_listeners:
        cb()
    assert router.data_tsns() == [1]


def test_persistent_holds_data_until_good():
    sim = _cut_sim("persistent", [(200.0, BAD), (240.0, GOOD)])
    for t in (210.0, 211.0, 212.0):
        _submit(sim, t)
    sim.run()
    tx = _events(sim.sender, "DATA_TX")
    assert [t for t, _, _ in tx] == [240.0, 240.0, 240.0]
    assert sim.recorder.total_lost_bits == 0


def test_traditional_emits_into_bad():
    sim = _cut_sim("traditional", [(200.0, BAD), (240.0, GOOD)])
    _submit(sim, 210.0)
    sim.run()
    lost = [row for row in sim.link.log if row[3] == "DATA" and row[5] == "lost"]
    assert lost and lost[0][0] == 210.0


# -- receiving ---------------------------------------------------------

def _sacks(router):
    return [body for _, kind, _, body in router.sent if kind is SACK]


def test_sack_in_order(endpoint):
    k, router, a = endpoint()
    a.on_data(1, 0, 1500)
    assert _sacks(router) == [(1, ())]
    assert a.delivered_ids == [0]


def test_sack_reports_gap(endpoint):
    k, router, a = endpoint()
    a.on_data(1, 0, 1500)
    a.on_data(3, 2, 1500)
    assert _sacks(router)[-1] == (1, (3,))
    a.on_data(2, 1, 1500)
    assert _sacks(router)[-1] == (3, ())
    assert a.delivered_ids == [0, 1, 2]


def test_duplicate_is_sacked_not_redelivered(endpoint):
    k, router, a = endpoint()
    a.on_data(1, 0, 1500)
    a.on_data(1, 0, 1500)
    assert _sacks(router) == [(1, ()), (1, ())]
    assert a.delivered_ids == [0]


# -- acknowledgment ----------------------------------------------------

def test_full_ack_stops_timer(endpoint):
    k, router, a = endpoint()
    a.submit_payload(3000)
    assert a.rtx_timer.running
    k.run(0.2)
    a.on_sack(2, ())
    assert not a.rtx_timer.running
    assert a.flight == 0 and not a.outstanding


def test_gap_acked_chunks_leave_flight(endpoint):
    k, router, a = endpoint(window=2)
    for _ in range(3):
        a.submit_payload(1500)
    assert router.data_tsns() == [1, 2]
    a.on_sack(0, (2,))
    assert router.data_tsns() == [1, 2, 3]


def test_sack_beyond_next_tsn_aborts(endpoint):
    k, router, a = endpoint()
    a.submit_payload(1500)
    a.on_sack(5, ())
    assert a.state is ABORTED


@pytest.mark.parametrize("reports,expected", [(4, 1), (3, 0), (6, 1)])
def test_four_sack_rule(reports, expected):
    sim = four_sack_trace(reports)
    assert sim.sender.fast_retransmissions == expected
    fast = _events(sim.sender, "FAST_RTX")
    assert [tsn for _, tsn, _ in fast] == [2] * expected


def test_fast_retransmit_recovers_without_timeout():
    sim = four_sack_trace(4)
    sim.run(5.0)
    assert _events(sim.sender, "T3_EXPIRY") == []
    assert sim.receiver.delivered_ids == list(range(6))


# -- RTO ---------------------------------------------------------------

def test_rto_first_sample(endpoint):
    k, router, a = endpoint()
    assert a.update_rto(0.2) == 1.0
    assert (a.rto.srtt, a.rto.rttvar) == (0.2, 0.1)


def test_rto_second_sample(endpoint):
    k, router, a = endpoint()
    a.update_rto(0.2)
    assert a.update_rto(0.2) == 1.0
    assert a.rto.rttvar == pytest.approx(0.075)
    assert a.rto.srtt == pytest.approx(0.2)


def test_rto_clamped_at_max(endpoint):
    k, router, a = endpoint()
    a.rto.srtt, a.rto.rttvar = 15.0, 20.0
    # rttvar -> 15, srtt stays 15: 15 + 4*15 = 75
    assert a.update_rto(15.0) == 60.0


def test_rto_backoff_sequence():
    sim = unreachable_peer_trace()
    seq = rto_sequence(sim)
    assert seq[:7] == [3, 6, 12, 24, 48, 60, 60]
    assert all(b == min(a * 2, 60) for a, b in zip(seq, seq[1:]))


def test_karn_rule_skips_retransmitted_sample(endpoint):
    k, router, a = endpoint()
    a.submit_payload(1500)
    k.run(3.0)
    assert a.retransmissions == 1 and a.rto.rto == 6.0
    k.run(3.5)
    a.on_sack(1, ())
    assert a.rto.srtt is None
    assert a.rto.rto == 6.0


def test_expiry_marks_outstanding_and_gates_new_data(endpoint):
    k, router, a = endpoint()
    a.submit_payload(3000)
    k.run(3.0)
    assert router.data_tsns() == [1, 2, 1]
    a.submit_payload(1500)
    assert router.data_tsns() == [1, 2, 1]
    a.on_sack(1, ())
    assert router.data_tsns() == [1, 2, 1, 2, 3]


def test_persistent_expiry_in_good_backs_off(endpoint):
    k, router, a = endpoint()
    a.persistent = True
    a.submit_payload(1500)
    k.run(3.0)
    assert router.data_tsns() == [1, 1]
    assert a.rto.rto == 6.0


def test_persistent_expiry_in_bad_is_deferred(endpoint):
    k, router, a = endpoint()
    a.persistent = True
    k.run(199.0)
    a.submit_payload(1500)
    k.schedule(200.0, 1, a.on_channel, BAD, 200.0)
    k.schedule(205.0, 3, a.on_rto_expiry)
    k.schedule(240.0, 1, a.on_channel, GOOD, 240.0)
    k.run(239.0)
    assert router.data_tsns() == [1]
    assert _events(a, "T3_DEFER")[0][0] == 205.0
    k.run(240.0)
    assert [t for t, kind, *_ in router.kinds(DATA)] == [199.0, 240.0]
    assert a.rto.rto == 3.0


def test_frozen_timer_keeps_remaining_time(endpoint):
    k, router, a = endpoint()
    a.persistent = True
    k.run(199.0)
    a.submit_payload(1500)
    k.schedule(200.0, 1, a.on_channel, BAD, 200.0)
    k.schedule(240.0, 1, a.on_channel, GOOD, 240.0)
    k.run(300.0)
    assert _events(a, "T3_EXPIRY")[0][0] == 242.0


# -- teardown ----------------------------------------------------------

def test_shutdown_with_empty_queue(endpoint):
    k, router, a = endpoint()
    assert a.shutdown()
    assert router.kinds(FrameKind.SHUTDOWN)
    assert a.state is SHUTDOWN_SENT
    assert a.t2_timer.running


def test_shutdown_waits_for_outstanding(endpoint):
    k, router, a = endpoint()
    a.submit_payload(1500)
    a.shutdown()
    assert not router.kinds(FrameKind.SHUTDOWN)
    a.on_sack(1, ())
    assert router.kinds(FrameKind.SHUTDOWN)
    assert a.transitions() == [ESTABLISHED, AssocState.SHUTDOWN_PENDING, SHUTDOWN_SENT]


@pytest.mark.parametrize("lose", [None, "SHUTDOWN_ACK", "SHUTDOWN_COMPLETE"])
def test_shutdown_traces(lose):
    sim = shutdown_trace(lose)
    s, r = sim.sender, sim.receiver
    assert [x.value for x in s.transitions()] == [
        "ESTABLISHED", "SHUTDOWN_PENDING", "SHUTDOWN_SENT", "CLOSED"]
    assert [x.value for x in r.transitions()] == ["ESTABLISHED", "SHUTDOWN_ACK_SENT", "CLOSED"]
    assert len(s.delivered_ids) == 0 and r.delivered_ids == list(range(10))
    # sender cancels T2 on SHUTDOWN_ACK, receiver on SHUTDOWN_COMPLETE
    assert _events(s, "T2_CANCEL") and _events(r, "T2_CANCEL")
    assert not s.t2_timer.running and not r.t2_timer.running
    if lose is not None:
        assert sim.recorder.total_lost_bits == 40 * 8


def test_lost_shutdown_ack_doubles_t2():
    sim = shutdown_trace("SHUTDOWN_ACK")
    t2 = [rto for _, _, rto in _events(sim.sender, "T2_START")]
    assert len(t2) == 2 and t2[1] == 2 * t2[0]


def test_t2_abort_after_max_retrans():
    sim = t2_abort_trace()
    assert sim.sender.state is ABORTED
    assert len(_events(sim.sender, "T2_EXPIRY")) == 11


def test_shutdown_complete_ignored_when_established(endpoint):
    k, router, a = endpoint()
    a.on_shutdown_msg(FrameKind.SHUTDOWN_COMPLETE)
    assert a.state is ESTABLISHED
    assert a.transitions() == [ESTABLISHED]


def test_persistent_shutdown_waits_for_good():
    sim = _cut_sim("persistent", [(200.0, BAD), (240.0, GOOD)])
    sim.kernel.schedule(210.0, PRIO_APP, sim.sender.shutdown)
    sim.run()
    shut = [row for row in sim.link.log if row[3] == "SHUTDOWN"]
    assert [(row[0], row[5]) for row in shut] == [(240.0, "delivered")]
    assert sim.sender.state is CLOSED and sim.receiver.state is CLOSED


def test_held_shutdown_family_goes_first(endpoint):
    k, router, a = endpoint()
    a.persistent = True
    a.on_channel(BAD, 0.0)
    a.on_data(1, 0, 1500)
    a.on_shutdown_msg(FrameKind.SHUTDOWN)
    assert router.sent == []
    a.on_channel(GOOD, 0.0)
    assert [kind for _, kind, _, _ in router.sent] == [FrameKind.SHUTDOWN_ACK, SACK]
    assert a.state is SHUTDOWN_ACK_SENT


def test_traditional_ignores_channel(endpoint):
    k, router, a = endpoint()
    a.on_channel(BAD, 0.0)
    assert not a.blocked
    a.submit_payload(1500)
    assert router.data_tsns() == [1]


# -- heartbeat ---------------------------------------------------------

def test_idle_heartbeat_exchange():
    sim = _cut_sim("traditional", [], horizon=31.0)
    sim.run()
    hb = [row for row in sim.link.log if row[3].startswith("HEARTBEAT")]
    assert {row[3] for row in hb} == {"HEARTBEAT", "HEARTBEAT_ACK"}
    assert sim.sender.heartbeat_acks >= 1


def test_heartbeats_lost_in_long_cut_traditional():
    sim = _cut_sim("traditional", [(200.0, BAD), (300.0, GOOD)])
    sim.run()
    lost = [row for row in sim.link.log if row[3] == "HEARTBEAT" and row[5] == "lost"]
    assert lost


def test_heartbeats_held_in_long_cut_persistent():
    sim = _cut_sim("persistent", [(200.0, BAD), (300.0, GOOD)])
    sim.run()
    hb = [row[0] for row in sim.link.log if row[3] == "HEARTBEAT"]
    assert not [t for t in hb if 200.0 <= t < 300.0]
    assert [t for t in hb if t >= 300.0]
    assert sim.recorder.total_lost_bits == 0


def test_heartbeat_suppressed_by_recent_data():
    sim = _cut_sim("traditional", [], horizon=31.0)
    _submit(sim, 20.0)
    sim.run()
    assert not [row for row in sim.link.log if row[3] == "HEARTBEAT" and row[1] == 0]


# -- properties --------------------------------------------------------

_OPS = st.lists(st.sampled_from([
    "submit", "shutdown", "SHUTDOWN", "SHUTDOWN_ACK", "SHUTDOWN_COMPLETE",
    "expiry", "t2", "sack", "bad", "good", "advance"]), max_size=40)


@settings(max_examples=200, deadline=None)
@given(_OPS, st.booleans())
def test_state_machine_never_leaves_legal_moves(ops, persistent):
    k = Kernel()
    router = FakeRouter(k)
    a = Association(k, router, peer=1)
    a.persistent = persistent
    for op in ops:
        if op == "submit":
            a.submit_payload(1500)
        elif op == "shutdown":
            a.shutdown()
        elif op in ("SHUTDOWN", "SHUTDOWN_ACK", "SHUTDOWN_COMPLETE"):
            a.on_shutdown_msg(FrameKind(op))
        elif op == "expiry":
            a.on_rto_expiry()
        elif op == "t2" and a.t2_value is not None:
            a._on_t2_expiry()
        elif op == "sack" and a.next_tsn > 1:
            a.on_sack(a.next_tsn - 1, ())
        elif op == "bad":
            a.on_channel(BAD, k.now())
        elif op == "good":
            a.on_channel(GOOD, k.now())
        elif op == "advance":
            k.run(k.now() + 5.0)
        assert a.flight <= a.window
        assert a.cum_ack < a.next_tsn
        assert a.params.rto_min <= a.rto.rto <= a.params.rto_max
    for (_, prev), (_, nxt) in zip(a.state_history, a.state_history[1:]):
        assert nxt in TRANSITIONS[prev]


def test_persistent_zero_sctp_frames_in_bad():
    cfg = ScenarioConfig(sim_end=800.0)
    sched = build_cut_schedule(random.Random(3), 100.0, 20.0, 100.0, 800.0)
    sim = Simulation(cfg, "persistent", schedule=sched, log_emissions=True)
    sim.run()
    assert sim.link.log
    assert all(sched.state_at(row[0]) is GOOD for row in sim.link.log)
