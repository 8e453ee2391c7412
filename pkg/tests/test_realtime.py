import io
import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sspesq.mlp import MlpModel, forward
from sspesq.realtime import (ESTIMATES_HEADER, Estimator, InsufficientDataError, PacketEvent,
                             WindowStats, estimate_from_stats, parse_events, run_stream,
                             write_events)

F0 = MlpModel.random(0, 30, seed=10)
F1 = MlpModel.random(1, 30, seed=11)


def feed(est, seqs):
    for i, s in enumerate(seqs):
        est.ingest(PacketEvent(s % 65536, 20.0 * i))
    return est


def test_gap_detection():
    est = feed(Estimator(10, 0), [1, 2, 5, 6, 7, 8, 9, 10])
    assert list(est.window_bits()) == [0, 0, 1, 1, 0, 0, 0, 0, 0, 0]
    s = est.window_stats()
    assert (s.lr, s.mlbs, s.burst_count, s.loss_count, s.window_span) == (0.2, 2.0, 1, 2, 10)


def test_duplicates_are_idempotent():
    once = feed(Estimator(10, 0), [1, 2, 5, 6])
    twice = feed(Estimator(10, 0), [1, 2, 5, 5, 6])
    assert np.array_equal(once.window_bits(), twice.window_bits())
    assert twice.counters.duplicates == 1


def test_wraparound():
    est = feed(Estimator(10, 0), [65534, 65535, 0, 1])
    s = est.window_stats()
    assert s.loss_count == 0 and s.lr == 0 and s.mlbs is None and s.window_span == 4


def test_all_lost_but_ends():
    span = 10
    est = feed(Estimator(span, 0), [100, 100 + span - 1])
    s = est.window_stats()
    assert (s.burst_count, s.mlbs) == (1, span - 2)


def test_window_slides_and_excludes_horizon():
    est = Estimator(window_span=5, reorder_horizon=3)
    feed(est, [s for s in range(1, 21) if s not in (4, 14, 15)])
    # settled slots end at 20 - 3 = 17; window covers 13..17
    assert list(est.window_bits()) == [0, 1, 1, 0, 0]


def test_late_packet_not_credited():
    est = Estimator(window_span=20, reorder_horizon=2)
    feed(est, [1, 2, 4, 5, 6, 7, 8])
    est.ingest(PacketEvent(3, 0))   # 5 slots behind the newest, beyond the horizon
    assert est.counters.late_discards == 1
    assert est.window_bits()[2] == 1


def test_malformed_events_counted():
    est = Estimator(10, 0)
    est.ingest(PacketEvent(70000, 0))
    est.ingest(PacketEvent(-1, 0))
    assert est.counters.malformed == 2


def test_warmup():
    est = Estimator(400, 100)
    with pytest.raises(InsufficientDataError):
        est.window_stats()
    feed(est, range(50))
    with pytest.raises(InsufficientDataError):
        est.estimate(F0, F1, 1)


@given(st.integers(0, 65535), st.integers(20, 200), st.data())
@settings(max_examples=80, deadline=None)
def test_permutation_within_horizon(start, count, data):
    horizon = 8
    seqs = [start + i for i in range(count)]
    dropped = set(data.draw(st.lists(st.sampled_from(seqs[1:-1]), max_size=count // 3)))
    kept = [s for s in seqs if s not in dropped]
    # local shuffle: swap neighbours only, displacement stays below the horizon
    arrival = kept[:]
    for i in data.draw(st.lists(st.integers(0, len(arrival) - 2), max_size=30)):
        arrival[i], arrival[i + 1] = arrival[i + 1], arrival[i]
    ordered = feed(Estimator(64, horizon), kept)
    shuffled = feed(Estimator(64, horizon), arrival)
    try:
        expected = ordered.window_bits()
    except InsufficientDataError:
        return
    assert np.array_equal(shuffled.window_bits(), expected)
    assert shuffled.counters.late_discards == 0


def test_memory_bounded():
    est = Estimator(400, 100)
    size = est._ring.nbytes
    feed(est, range(200_000))
    assert est._ring.nbytes == size


def test_estimate_delegates_to_forward():
    est = feed(Estimator(10, 0), [1, 2, 5, 6, 7, 8, 9, 10])
    q = est.estimate(F0, F1, plc=1, now=5.0)
    assert q.mos == forward(F1, 20.0, 2.0)
    assert (q.model_plc, q.emitted_at, q.flags) == (1, 5.0, ())
    assert est.estimate(F0, F1, plc=0).mos == forward(F0, 20.0, 2.0)


def test_estimate_clamping_rules():
    zero = WindowStats(400, 0.0, None, 0, 0)
    q = estimate_from_stats(zero, F0, F1, 1)
    assert q.mos == forward(F1, 1, 1)
    assert set(q.flags) == {"lr_floor", "mlbs_undefined"}
    heavy = WindowStats(400, 0.5, 8.0, 200, 25)
    q = estimate_from_stats(heavy, F0, F1, 1)
    assert q.mos == forward(F1, 30, 6)
    assert set(q.flags) == {"lr_ceiling", "mlbs_ceiling"} and q.clamped
    exact = estimate_from_stats(WindowStats(400, 0.12, 2.0, 48, 24), F0, F1, 1)
    assert exact.mos == forward(F1, 12, 2) and not exact.clamped


def test_concurrent_reader_and_writer():
    est = Estimator(400, 10)
    errors = []

    def reader():
        for _ in range(200):
            try:
                est.window_stats()
            except InsufficientDataError:
                pass
            except Exception as exc:  # pragma: no cover
                errors.append(exc)

    t = threading.Thread(target=reader)
    t.start()
    feed(est, range(5000))
    t.join()
    assert not errors


def test_event_stream_cadence():
    events = [PacketEvent(i % 65536, 1000.0 + 20 * i) for i in range(526)]   # 10.5 s
    result = run_stream(events, F0, F1, plc=1)
    duration = events[-1].recv_time - events[0].recv_time
    assert len(result.lines) == int(duration // 1000) == 10
    assert result.lines[0].endswith("warmup")
    last = result.lines[-1].split(",")
    assert last[0] == "11000" and float(last[1]) == 0.0 and last[4] == "lr_floor|mlbs_undefined"


def test_event_file_format():
    buf = io.StringIO()
    write_events([PacketEvent(1, 0.0), PacketEvent(2, 20.5)], buf)
    text = buf.getvalue()
    assert text.splitlines()[0] == "# sspesq-events 1"
    parsed = list(parse_events(io.StringIO(text + "garbage\n")))
    assert parsed == [PacketEvent(1, 0.0), PacketEvent(2, 20.5)]
    assert ESTIMATES_HEADER.startswith("# sspesq-estimates")
