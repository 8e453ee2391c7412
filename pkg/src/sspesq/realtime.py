"""Receiver-side quality estimation from packet arrivals alone.

The estimator keeps a ring of received/lost flags indexed by extended
(unwrapped) sequence number. Loss statistics are computed over the newest
``window_span`` slots, leaving out the newest ``reorder_horizon`` slots whose
packets may still be in flight. A packet that shows up more than
``reorder_horizon`` slots behind the newest one is a late discard: it is
counted but its slot stays lost, as a dejitter buffer would have dropped it.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator, List, Optional, TextIO, Tuple

import numpy as np

from .gilbert import empirical_stats
from .mlp import LR_DOMAIN, MLBS_DOMAIN, MlpModel, forward

SEQ_MOD = 1 << 16
DEFAULT_WINDOW = 400
DEFAULT_HORIZON = 100
EVENTS_HEADER = "# sspesq-events 1"
ESTIMATES_HEADER = "# sspesq-estimates 1"


class InsufficientDataError(RuntimeError):
    """Not enough settled slots to compute window statistics yet."""


@dataclass(frozen=True)
class PacketEvent:
    seq: int
    recv_time: float  # ms


@dataclass(frozen=True)
class WindowStats:
    window_span: int
    lr: float
    mlbs: Optional[float]
    loss_count: int
    burst_count: int


@dataclass(frozen=True)
class QualityEstimate:
    stats: WindowStats
    mos: float
    model_plc: int
    emitted_at: Optional[float]
    flags: Tuple[str, ...] = ()

    @property
    def clamped(self) -> bool:
        return bool(self.flags)


@dataclass
class Counters:
    received: int = 0
    duplicates: int = 0
    late_discards: int = 0
    malformed: int = 0


class Estimator:
    """Sliding-window loss tracker for one flow.

    ``ingest`` and the read methods are serialized by an internal lock, so a
    receiving thread and a reporting thread may share one instance.
    """

    def __init__(self, window_span: int = DEFAULT_WINDOW, reorder_horizon: int = DEFAULT_HORIZON):
        if window_span < 1 or reorder_horizon < 0:
            raise ValueError("window_span must be >= 1 and reorder_horizon >= 0")
        if window_span + reorder_horizon >= SEQ_MOD // 2:
            raise ValueError("window too large for 16-bit sequence numbers")
        self.window_span = window_span
        self.reorder_horizon = reorder_horizon
        self._size = window_span + reorder_horizon
        self._ring = np.zeros(self._size, dtype=bool)
        self._first: Optional[int] = None   # lowest extended seq seen
        self._newest: Optional[int] = None  # highest extended seq seen
        self.counters = Counters()
        self._lock = threading.Lock()

    def _extend(self, seq: int) -> int:
        ref = self._newest
        delta = (seq - ref) % SEQ_MOD
        if delta >= SEQ_MOD // 2:
            delta -= SEQ_MOD
        return ref + delta

    def ingest(self, event: PacketEvent) -> "Estimator":
        with self._lock:
            seq = event.seq
            if not isinstance(seq, (int, np.integer)) or not 0 <= seq < SEQ_MOD:
                self.counters.malformed += 1
                return self
            if self._newest is None:
                self._first = self._newest = int(seq)
                self._ring[seq % self._size] = True
                self.counters.received += 1
                return self
            ext = self._extend(int(seq))
            if ext > self._newest:
                # newly opened slots start out lost
                gap = ext - self._newest
                if gap >= self._size:
                    self._ring[:] = False
                else:
                    idx = np.arange(self._newest + 1, ext + 1) % self._size
                    self._ring[idx] = False
                self._newest = ext
            elif ext < self._newest - self.reorder_horizon:
                self.counters.late_discards += 1
                return self
            if ext < self._first:
                self._first = ext
            slot = ext % self._size
            if self._ring[slot]:
                self.counters.duplicates += 1
            else:
                self._ring[slot] = True
                self.counters.received += 1
            return self

    def _window_bits(self) -> np.ndarray:
        if self._newest is None or self.counters.received < 2:
            raise InsufficientDataError("need at least two received packets")
        hi = self._newest - self.reorder_horizon
        lo = max(self._first, hi - self.window_span + 1, self._newest - self._size + 1)
        if hi < lo:
            raise InsufficientDataError("no settled slots outside the reorder horizon yet")
        idx = np.arange(lo, hi + 1) % self._size
        return (~self._ring[idx]).astype(np.uint8)

    def window_bits(self) -> np.ndarray:
        """Loss flags (1 = lost) of the settled window, oldest first."""
        with self._lock:
            return self._window_bits()

    def window_stats(self) -> WindowStats:
        with self._lock:
            bits = self._window_bits()
        s = empirical_stats(bits)
        return WindowStats(window_span=int(bits.size), lr=s.loss_rate, mlbs=s.mlbs,
                           loss_count=s.loss_count, burst_count=s.burst_count)

    def estimate(self, f0: MlpModel, f1: MlpModel, plc: int,
                 now: Optional[float] = None) -> QualityEstimate:
        stats = self.window_stats()
        return estimate_from_stats(stats, f0, f1, plc, now)


def estimate_from_stats(stats: WindowStats, f0: MlpModel, f1: MlpModel, plc: int,
                        now: Optional[float] = None) -> QualityEstimate:
    flags = []
    lr_pct = stats.lr * 100.0
    if lr_pct < LR_DOMAIN[0]:
        lr_pct = LR_DOMAIN[0]
        flags.append("lr_floor")
    elif lr_pct > LR_DOMAIN[1]:
        lr_pct = LR_DOMAIN[1]
        flags.append("lr_ceiling")
    mlbs = stats.mlbs
    if mlbs is None:
        # no bursts at all: treat as isolated losses
        mlbs = 1.0
        flags.append("mlbs_undefined")
    elif mlbs > MLBS_DOMAIN[1]:
        mlbs = MLBS_DOMAIN[1]
        flags.append("mlbs_ceiling")
    model = f1 if plc else f0
    return QualityEstimate(stats=stats, mos=forward(model, lr_pct, mlbs), model_plc=int(bool(plc)),
                           emitted_at=now, flags=tuple(flags))


# --------------------------------------------------------------------------
# line formats

def parse_events(lines: Iterable[str], counters: Optional[Counters] = None) -> Iterator[PacketEvent]:
    """Parse ``seq,recv_ms`` lines; comments and the header are skipped, bad lines counted."""
    for line in lines:
        line = line.strip()
        if not line or line.startswith("#") or line.startswith("seq"):
            continue
        try:
            seq_s, t_s = line.split(",")
            yield PacketEvent(int(seq_s), float(t_s))
        except ValueError:
            if counters is not None:
                counters.malformed += 1


def write_events(events: Iterable[PacketEvent], fh: TextIO) -> None:
    fh.write(EVENTS_HEADER + "\n")
    fh.write("seq,recv_ms\n")
    for ev in events:
        fh.write(f"{ev.seq},{ev.recv_time:g}\n")


def format_estimate(recv_ms: float, est: Optional[QualityEstimate]) -> str:
    if est is None:
        return f"{recv_ms:g},,,,warmup"
    mlbs = "" if est.stats.mlbs is None else f"{est.stats.mlbs:.6f}"
    return f"{recv_ms:g},{est.stats.lr:.6f},{mlbs},{est.mos:.6f},{'|'.join(est.flags)}"


@dataclass
class StreamResult:
    lines: List[str] = field(default_factory=list)
    counters: Counters = field(default_factory=Counters)


def run_stream(events: Iterable[PacketEvent], f0: MlpModel, f1: MlpModel, plc: int,
               window_span: int = DEFAULT_WINDOW, reorder_horizon: int = DEFAULT_HORIZON,
               period_ms: float = 1000.0) -> StreamResult:
    """Replay events and emit one estimate every ``period_ms`` of stream time.

    Boundaries fall at ``t0 + k * period_ms`` where ``t0`` is the first
    arrival; an estimate is emitted once all events before a boundary have
    been ingested, so a stream lasting ``D`` ms yields ``floor(D / period_ms)``
    lines. Windows still warming up produce a ``warmup`` line.
    """
    est = Estimator(window_span, reorder_horizon)
    out = StreamResult(counters=est.counters)
    t0 = None
    next_emit = None
    for ev in events:
        if t0 is None:
            t0 = ev.recv_time
            next_emit = t0 + period_ms
        while ev.recv_time >= next_emit:
            out.lines.append(_emit(est, f0, f1, plc, next_emit))
            next_emit += period_ms
        est.ingest(ev)
    return out


def _emit(est: Estimator, f0, f1, plc, now) -> str:
    try:
        return format_estimate(now, est.estimate(f0, f1, plc, now))
    except InsufficientDataError:
        return format_estimate(now, None)
