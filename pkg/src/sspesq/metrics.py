"""Error of the trained networks against every individual oracle score."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Mapping, Sequence, Union

import numpy as np

from .mlp import MlpModel, predict
from .table import SampleRecord


@dataclass(frozen=True)
class PlcErrors:
    mse: float
    rmse: float
    mae: float
    n: int


@dataclass(frozen=True)
class MetricsReport:
    per_plc: Dict[int, PlcErrors]

    def __getitem__(self, plc: int) -> PlcErrors:
        return self.per_plc[plc]

    @property
    def total(self) -> int:
        return sum(e.n for e in self.per_plc.values())

    def to_text(self) -> str:
        lines = [f"{'network':<8}  {'MSE':>8}  {'sqrt(MSE)':>9}  {'MAE':>8}  {'N':>7}"]
        for plc, e in sorted(self.per_plc.items()):
            lines.append(f"{'f' + str(plc):<8}  {e.mse:8.3f}  {e.rmse:9.3f}  {e.mae:8.3f}  {e.n:7d}")
        return "\n".join(lines) + "\n"

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["network", "mse", "rmse", "mae", "n"])
            for plc, e in sorted(self.per_plc.items()):
                writer.writerow([f"f{plc}", f"{e.mse:.6f}", f"{e.rmse:.6f}", f"{e.mae:.6f}", e.n])


def full_table_errors(f0: MlpModel, f1: MlpModel, records: Sequence[SampleRecord]) -> MetricsReport:
    """MSE, its root and MAE per plc value, each record scored by the matching network."""
    models: Mapping[int, MlpModel] = {0: f0, 1: f1}
    if not records:
        raise ValueError("no records to evaluate")
    by_plc: Dict[int, list] = {}
    for rec in records:
        by_plc.setdefault(rec.config.plc, []).append(rec)
    out = {}
    for plc, recs in sorted(by_plc.items()):
        model = models.get(plc)
        if model is None:
            raise ValueError(f"records with plc={plc} but no model supplied for it")
        inputs = np.array([[r.config.lr_pct, r.config.mlbs] for r in recs], dtype=float)
        scores = np.array([r.score for r in recs])
        # sorting the residuals makes the sums independent of record order
        diff = np.sort(predict(model, inputs) - scores)
        mse = float(math.fsum(diff * diff) / diff.size)
        mae = float(math.fsum(np.abs(diff)) / diff.size)
        out[plc] = PlcErrors(mse, math.sqrt(mse), mae, diff.size)
    return MetricsReport(out)
