"""Large per-sample table and its compact per-configuration summary."""

from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

from .tracegen import NetworkConfig

SCORE_MIN = 1.0
SCORE_MAX = 4.5

LARGE_COLUMNS = ["plc", "lr_pct", "mlbs", "trace_id", "rep_id", "score"]
COMPACT_COLUMNS = ["plc", "lr_pct", "mlbs", "median", "mean", "variance", "count"]


@dataclass(frozen=True)
class SampleRecord:
    config: NetworkConfig
    trace_id: int
    rep_id: int
    score: float

    def __post_init__(self):
        if not SCORE_MIN <= self.score <= SCORE_MAX:
            raise ValueError(f"score {self.score} outside [{SCORE_MIN}, {SCORE_MAX}]")


@dataclass(frozen=True)
class ConfigStats:
    config: NetworkConfig
    median: float
    mean: float
    variance: float
    count: int


def median(values: Sequence[float]) -> float:
    """Minimizer of ``sum(|v - x|)``; the midpoint of the middle pair for even counts."""
    ordered = sorted(float(v) for v in values)
    k = len(ordered)
    if k == 0:
        raise ValueError("median of an empty sequence")
    mid = k // 2
    if k % 2:
        return ordered[mid]
    return (ordered[mid - 1] + ordered[mid]) / 2.0


def aggregate(records: Iterable[SampleRecord]) -> List[ConfigStats]:
    groups: Dict[NetworkConfig, List[float]] = defaultdict(list)
    for rec in records:
        groups[rec.config].append(rec.score)
    if not groups:
        raise ValueError("cannot aggregate an empty table")
    out = []
    for config in sorted(groups):
        # sort so the float sums do not depend on record order
        scores = sorted(groups[config])
        count = len(scores)
        mean = sum(scores) / count
        variance = sum((s - mean) ** 2 for s in scores) / count
        out.append(ConfigStats(config, median(scores), mean, variance, count))
    return out


def write_large_csv(records: Iterable[SampleRecord], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LARGE_COLUMNS)
        for r in records:
            c = r.config
            writer.writerow([c.plc, c.lr_pct, f"{c.mlbs:g}", r.trace_id, r.rep_id,
                             f"{r.score:.6f}"])


def read_large_csv(path: Union[str, Path]) -> List[SampleRecord]:
    configs: Dict[tuple, NetworkConfig] = {}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            key = (row["plc"], row["lr_pct"], row["mlbs"])
            config = configs.get(key)
            if config is None:
                config = configs[key] = NetworkConfig(int(key[0]), int(key[1]), float(key[2]))
            out.append(SampleRecord(config, int(row["trace_id"]), int(row["rep_id"]),
                                    float(row["score"])))
    return out


def write_compact_csv(stats: Iterable[ConfigStats], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COMPACT_COLUMNS)
        for s in stats:
            c = s.config
            writer.writerow([c.plc, c.lr_pct, f"{c.mlbs:g}", repr(s.median), repr(s.mean),
                             repr(s.variance), s.count])


def read_compact_csv(path: Union[str, Path]) -> List[ConfigStats]:
    with open(path, newline="") as fh:
        return [ConfigStats(NetworkConfig(int(row["plc"]), int(row["lr_pct"]), float(row["mlbs"])),
                            float(row["median"]), float(row["mean"]), float(row["variance"]),
                            int(row["count"]))
                for row in csv.DictReader(fh)]
