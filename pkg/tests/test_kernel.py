import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sctpdsdv.kernel import Kernel, SchedulingError


def test_first_schedule_returns_live_handle():
    k = Kernel()
    h = k.schedule(0.0, 0, lambda: None)
    assert h.live
    assert len(k) == 1


def test_priority_then_insertion_order():
    k = Kernel()
    fired = []
    k.schedule(5.0, 1, fired.append, "b")
    k.schedule(5.0, 0, fired.append, "a")
    k.schedule(5.0, 1, fired.append, "c")
    k.run(10)
    assert fired == ["a", "b", "c"]


def test_cancel_semantics():
    k = Kernel()
    fired = []
    h = k.schedule(1.0, 0, fired.append, 1)
    assert k.cancel(h) is True
    assert k.cancel(h) is False
    done = k.schedule(2.0, 0, fired.append, 2)
    k.run(3)
    assert fired == [2]
    assert k.cancel(done) is False
    assert len(k) == 0


def test_run_empty_advances_clock():
    k = Kernel()
    assert k.now() == 0.0
    assert k.run(100) == 0
    assert k.now() == 100.0


def test_run_stops_at_until():
    k = Kernel()
    for t in (1, 2, 3):
        k.schedule(t, 0, lambda: None)
    assert k.run(2.5) == 2
    assert k.now() == 2.5
    assert len(k) == 1


def test_cascading_event_fires_in_same_run():
    k = Kernel()
    seen = []

    def parent():
        seen.append(k.now())
        k.schedule(1.5, 0, lambda: seen.append(k.now()))

    k.schedule(1.0, 0, parent)
    assert k.run(2) == 2
    assert seen == [1.0, 1.5]


def test_now_inside_action():
    k = Kernel()
    seen = []
    k.schedule(7.0, 0, lambda: seen.append(k.now()))
    k.run(200)
    assert seen == [7.0]
    assert k.now() == 200.0


def test_past_scheduling_rejected():
    k = Kernel()
    k.run(10)
    with pytest.raises(SchedulingError):
        k.schedule(9.0, 0, lambda: None)
    with pytest.raises(SchedulingError):
        k.run(5)


ops = st.lists(
    st.one_of(
        st.tuples(st.just("s"), st.integers(0, 20), st.integers(0, 5)),
        st.tuples(st.just("c"), st.integers(0, 50), st.just(0)),
    ),
    max_size=60,
)


def _replay(seq):
    k = Kernel()
    handles, fired, canceled = [], [], set()
    for op, a, b in seq:
        if op == "s":
            key = (a / 2, b, len(handles))
            handles.append(k.schedule(a / 2, b, fired.append, key))
        elif handles:
            h = handles[a % len(handles)]
            if k.cancel(h):
                canceled.add(h.id)
    k.run(100)
    return fired, canceled


@settings(max_examples=200, deadline=None)
@given(ops)
def test_fired_order_is_total_order(seq):
    fired, canceled = _replay(seq)
    assert fired == sorted(fired)
    assert not {key[2] for key in fired} & canceled
    assert _replay(seq) == (fired, canceled)
