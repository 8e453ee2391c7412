"""Simplified Gilbert packet-loss model.

Two-state Markov chain where the bad state drops every packet and the good
state drops none. ``p`` is the good->bad transition probability per packet,
``q`` the bad->good one. With the loss probability in the bad state pinned at
1, the stationary loss rate is ``p / (p + q)`` and the mean burst length is
``1 / q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

SeedLike = Union[int, Sequence[int]]


def derive_seed(*keys: int) -> int:
    """Collapse a tuple of non-negative ints into one 63-bit seed."""
    state = np.random.SeedSequence([int(k) for k in keys]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def make_rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, (int, np.integer)):
        return np.random.default_rng(int(seed))
    return np.random.default_rng([int(s) for s in seed])


@dataclass(frozen=True)
class GilbertParams:
    p: float
    q: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must lie in [0, 1], got {self.p}")
        if not 0.0 < self.q <= 1.0:
            raise ValueError(f"q must lie in (0, 1], got {self.q}")

    @property
    def loss_rate(self) -> float:
        """Stationary probability of the bad state."""
        return self.p / (self.p + self.q)

    @property
    def mlbs(self) -> float:
        return 1.0 / self.q


@dataclass
class LossTrace:
    """A 0/1 loss sequence (1 = lost) with the metadata that produced it.

    ``lr`` is a fraction, ``mlbs`` and ``plc`` are the generating targets when
    the trace comes from a configuration; they stay ``None`` for raw draws.
    """

    bits: np.ndarray
    lr: Optional[float] = None
    mlbs: Optional[float] = None
    plc: Optional[int] = None
    seed: Optional[int] = None
    attempt: Optional[int] = None

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1 or bits.size < 1:
            raise ValueError("a loss trace needs at least one packet")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("loss trace entries must be 0 or 1")
        self.bits = bits.astype(np.uint8)

    def __len__(self):
        return int(self.bits.size)

    def __eq__(self, other):
        if not isinstance(other, LossTrace):
            return NotImplemented
        return (np.array_equal(self.bits, other.bits)
                and (self.lr, self.mlbs, self.plc, self.seed, self.attempt)
                == (other.lr, other.mlbs, other.plc, other.seed, other.attempt))

    def to_string(self) -> str:
        return self.bits.tobytes().translate(bytes.maketrans(b"\x00\x01", b"01")).decode()


@dataclass(frozen=True)
class BurstStats:
    loss_rate: float
    mlbs: Optional[float]
    burst_count: int
    loss_count: int
    n: int = field(default=0)


def params_from_config(lr: float, mlbs: float) -> GilbertParams:
    """Invert the stationary distribution: ``q = 1/mlbs``, ``p = lr*q/(1-lr)``."""
    if not 0.0 < lr < 1.0:
        raise ValueError(f"loss rate must lie in (0, 1), got {lr}")
    if not mlbs >= 1.0:
        raise ValueError(f"mean loss burst size must be >= 1, got {mlbs}")
    q = 1.0 / mlbs
    p = lr * q / (1.0 - lr)
    if p > 1.0:
        raise ValueError(
            f"infeasible pair lr={lr}, mlbs={mlbs}: good->bad probability {p:.4f} exceeds 1")
    return GilbertParams(p=p, q=q)


def _run_lengths(rng: np.random.Generator, prob: float, size: int, n: int) -> np.ndarray:
    # geometric sojourn times; a zero exit probability means the state is absorbing
    if prob == 0.0:
        return np.full(size, n + 1, dtype=np.int64)
    # anything past the trace end is equivalent; capping avoids cumsum overflow
    return np.minimum(rng.geometric(prob, size=size), n + 1).astype(np.int64)


def simulate(params: GilbertParams, n: int, seed: SeedLike) -> LossTrace:
    """Draw ``n`` packets from the chain, starting in its stationary distribution.

    Sojourn times in each state are geometric, so the trace is assembled from
    alternating run lengths rather than stepped packet by packet.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed)
    bad = bool(rng.random() < params.loss_rate)

    expected_cycle = (1.0 / params.p if params.p > 0 else float(n)) + 1.0 / params.q
    chunk = int(min(n, 2 * n / expected_cycle + 16))

    bits = np.zeros(n, dtype=np.uint8)
    pos = 0
    while pos < n:
        good_runs = _run_lengths(rng, params.p, chunk, n)
        bad_runs = _run_lengths(rng, params.q, chunk, n)
        runs = np.empty(2 * chunk, dtype=np.int64)
        if bad:
            runs[0::2], runs[1::2] = bad_runs, good_runs
        else:
            runs[0::2], runs[1::2] = good_runs, bad_runs
        ends = pos + np.cumsum(runs)
        starts = ends - runs
        used = int(np.searchsorted(ends, n, side="left")) + 1
        used = min(used, runs.size)
        # runs at odd offsets from the current state flip parity
        lossy = np.arange(used) % 2 == (0 if bad else 1)
        edges = np.zeros(n + 1, dtype=np.int64)
        np.add.at(edges, starts[:used][lossy], 1)
        np.add.at(edges, np.minimum(ends[:used][lossy], n), -1)
        bits |= (np.cumsum(edges[:n]) > 0).astype(np.uint8)
        pos = int(ends[used - 1])
        if used % 2 == 1:
            bad = not bad
    return LossTrace(bits=bits, seed=seed if isinstance(seed, (int, np.integer)) else None)


def empirical_stats(trace: Union[LossTrace, np.ndarray, Sequence[int]]) -> BurstStats:
    bits = trace.bits if isinstance(trace, LossTrace) else np.asarray(trace, dtype=np.uint8)
    n = int(bits.size)
    if n == 0:
        raise ValueError("empty trace")
    loss_count = int(bits.sum())
    # a burst starts wherever a 1 follows a 0 or the trace start
    starts = np.count_nonzero(np.diff(bits.astype(np.int8), prepend=0) == 1)
    burst_count = int(starts)
    mlbs = loss_count / burst_count if burst_count else None
    return BurstStats(loss_rate=loss_count / n, mlbs=mlbs, burst_count=burst_count,
                      loss_count=loss_count, n=n)


_HEADER_KEYS = ("lr", "mlbs", "plc", "n", "seed", "attempt")


def format_trace(trace: LossTrace) -> str:
    lines = []
    values = {"lr": trace.lr, "mlbs": trace.mlbs, "plc": trace.plc, "n": len(trace),
              "seed": trace.seed, "attempt": trace.attempt}
    for key in _HEADER_KEYS:
        if values[key] is not None:
            lines.append(f"# {key}={values[key]!r}")
    lines.append(trace.to_string())
    return "\n".join(lines) + "\n"


def parse_trace(text: str) -> LossTrace:
    meta = {}
    body = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if not sep:
                continue
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line.strip())
    if len(body) != 1:
        raise ValueError(f"expected exactly one bit line, found {len(body)}")
    raw = body[0]
    if set(raw) - {"0", "1"}:
        raise ValueError("bit line may only contain '0' and '1'")
    bits = np.frombuffer(raw.encode(), dtype=np.uint8) - ord("0")
    if "n" in meta and int(meta["n"]) != bits.size:
        raise ValueError(f"header says n={meta['n']} but bit line has {bits.size} packets")
    return LossTrace(
        bits=bits,
        lr=float(meta["lr"]) if "lr" in meta else None,
        mlbs=float(meta["mlbs"]) if "mlbs" in meta else None,
        plc=int(meta["plc"]) if "plc" in meta else None,
        seed=int(meta["seed"]) if "seed" in meta else None,
        attempt=int(meta["attempt"]) if "attempt" in meta else None,
    )


def write_trace(trace: LossTrace, path: Union[str, Path]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_trace(trace))


def read_trace(path: Union[str, Path]) -> LossTrace:
    with open(path) as fh:
        return parse_trace(fh.read())


def stationary_check(params: GilbertParams) -> tuple:
    """Analytic (loss rate, mean burst size) implied by ``params``."""
    return params.loss_rate, params.mlbs


__all__ = [
    "GilbertParams", "LossTrace", "BurstStats", "params_from_config", "simulate",
    "empirical_stats", "format_trace", "parse_trace", "write_trace", "read_trace",
    "derive_seed", "make_rng", "stationary_check",
]
