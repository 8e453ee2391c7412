"""Configuration grid, feasibility at finite trace length, verified traces."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Union

from .gilbert import LossTrace, derive_seed, empirical_stats, params_from_config, simulate

LR_GRID = tuple(range(1, 31))
MLBS_GRID = (1.0, 1.25, 1.5, 1.75, 2.0, 2.5, 3.0, 3.5, 4.0, 5.0, 6.0)
PLC_VALUES = (0, 1)
DEFAULT_PACKETS = 400
DEFAULT_TRACES_PER_CONFIG = 10

# slack for float comparisons at the exact tolerance boundary (e.g. 3/400 vs 0.75%)
_EPS = 1e-12


class TraceGenerationError(RuntimeError):
    """Raised when no acceptable trace was found within ``max_attempts``."""


@dataclass(frozen=True, order=True)
class NetworkConfig:
    plc: int
    lr_pct: int
    mlbs: float

    def __post_init__(self):
        if self.lr_pct not in LR_GRID:
            raise ValueError(f"lr_pct must be an integer in 1..30, got {self.lr_pct!r}")
        if float(self.mlbs) not in MLBS_GRID:
            raise ValueError(f"mlbs must be one of {MLBS_GRID}, got {self.mlbs!r}")
        if self.plc not in PLC_VALUES:
            raise ValueError(f"plc must be 0 or 1, got {self.plc!r}")
        object.__setattr__(self, "mlbs", float(self.mlbs))

    @property
    def lr(self) -> float:
        return self.lr_pct / 100.0

    @property
    def key(self) -> tuple:
        """Integer identity used for seed derivation (mlbs is a multiple of 1/4)."""
        return (self.plc, self.lr_pct, int(round(self.mlbs * 4)))

    @property
    def label(self) -> str:
        return f"{self.plc}_{self.lr_pct}_{self.mlbs:g}"


@dataclass(frozen=True)
class VerificationPolicy:
    rel_lr_tol: float = 0.25
    rel_mlbs_tol: float = 0.25
    max_attempts: int = 1000

    def __post_init__(self):
        if self.rel_lr_tol <= 0 or self.rel_mlbs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")

    def accepts(self, trace: LossTrace, config: NetworkConfig) -> bool:
        stats = empirical_stats(trace)
        if stats.mlbs is None:
            return False
        lr_ok = abs(stats.loss_rate - config.lr) <= self.rel_lr_tol * config.lr + _EPS
        mlbs_ok = abs(stats.mlbs - config.mlbs) <= self.rel_mlbs_tol * config.mlbs + _EPS
        return lr_ok and mlbs_ok


def feasible(config: NetworkConfig, n: int = DEFAULT_PACKETS) -> bool:
    """At least one mean-length burst and two expected bursts fit in ``n`` packets."""
    if n < 1:
        raise ValueError("n must be >= 1")
    # expected losses n*lr_pct/100, scaled by 100 to stay in exact arithmetic
    expected_losses_x100 = n * config.lr_pct
    return (expected_losses_x100 >= 100 * config.mlbs
            and expected_losses_x100 >= 200 * config.mlbs)


def config_grid(n: int = DEFAULT_PACKETS) -> List[NetworkConfig]:
    configs = [NetworkConfig(plc, lr, mlbs)
               for plc in PLC_VALUES for lr in LR_GRID for mlbs in MLBS_GRID]
    return sorted(c for c in configs if feasible(c, n))


def generate_verified(config: NetworkConfig, n: int = DEFAULT_PACKETS,
                      policy: VerificationPolicy = VerificationPolicy(),
                      seed: int = 0) -> LossTrace:
    """Draw traces until one matches the target loss rate and burst size.

    Attempt ``k`` (1-based) simulates with ``derive_seed(seed, k)``, so the
    accepted trace can be regenerated from the seed and attempt in its header.
    """
    if not feasible(config, n):
        raise ValueError(f"configuration {config} is infeasible at n={n}")
    params = params_from_config(config.lr, config.mlbs)
    for attempt in range(1, policy.max_attempts + 1):
        trace = simulate(params, n, derive_seed(seed, attempt))
        if policy.accepts(trace, config):
            return LossTrace(bits=trace.bits, lr=config.lr, mlbs=config.mlbs,
                             plc=config.plc, seed=seed, attempt=attempt)
    raise TraceGenerationError(
        f"no trace for {config} passed verification in {policy.max_attempts} attempts")


def trace_seed(master_seed: int, config: NetworkConfig, trace_index: int) -> int:
    return derive_seed(master_seed, *config.key, trace_index)


def generate_traces(config: NetworkConfig, count: int = DEFAULT_TRACES_PER_CONFIG,
                    n: int = DEFAULT_PACKETS, policy: VerificationPolicy = VerificationPolicy(),
                    master_seed: int = 0) -> List[LossTrace]:
    return [generate_verified(config, n, policy, trace_seed(master_seed, config, i))
            for i in range(count)]


def trace_count_for(config: NetworkConfig, base: int = DEFAULT_TRACES_PER_CONFIG,
                    multiplier: int = 1, heavy_lr_pct: int = 31) -> int:
    """Traces to draw for ``config``; configs at or above ``heavy_lr_pct`` get ``multiplier``x.

    The default threshold of 31 disables the boost.
    """
    if multiplier < 1:
        raise ValueError("multiplier must be >= 1")
    return base * multiplier if config.lr_pct >= heavy_lr_pct else base


def trace_filename(config: NetworkConfig, trace_index: int) -> str:
    return f"{config.label}_{trace_index}.trace"


def write_grid_csv(configs: Iterable[NetworkConfig], path: Union[str, Path]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["plc", "lr_pct", "mlbs"])
        for c in configs:
            writer.writerow([c.plc, c.lr_pct, f"{c.mlbs:g}"])


def read_grid_csv(path: Union[str, Path]) -> List[NetworkConfig]:
    with open(path, newline="") as fh:
        return [NetworkConfig(int(row["plc"]), int(row["lr_pct"]), float(row["mlbs"]))
                for row in csv.DictReader(fh)]
