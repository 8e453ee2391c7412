"""``sspesq`` command line: run the pipeline stage by stage or end to end.

Every stage reads and writes files under ``--out-dir``::

    grid.csv            configurations kept at the chosen trace length
    traces/             one verified loss trace per file
    large.csv           one oracle score per (configuration, trace, repetition)
    compact.csv         per-configuration median, mean, variance, count
    f0.model, f1.model  trained networks
    training.csv        learning-phase errors per network
    report.csv/.txt     whole-table MSE, sqrt(MSE), MAE per network
    figures/            data behind the LR/MLBS scatter plots
    manifest.json       seed, tool version and the artifacts produced so far

All randomness derives from ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import __version__
from .gilbert import derive_seed, read_trace, write_trace
from .metrics import full_table_errors
from .mlp import (MlpModel, TrainingConfig, TrainingDivergedError, evaluate_error, hidden_sweep,
                  load_model, predict, save_model, train_pair)
from .oracle import (PESQ_COMMAND_ENV, ExternalPesqAdapterConfig, ExternalPesqOracle, OracleError,
                     SurrogateOracle, SurrogateParams, assess_traces, read_wav)
from .realtime import (DEFAULT_HORIZON, DEFAULT_WINDOW, ESTIMATES_HEADER, Counters, parse_events,
                       run_stream)
from .table import (ConfigStats, SampleRecord, aggregate, read_compact_csv, read_large_csv,
                    write_compact_csv, write_large_csv)
from .tracegen import (DEFAULT_PACKETS, DEFAULT_TRACES_PER_CONFIG, NetworkConfig,
                       TraceGenerationError, VerificationPolicy, config_grid, generate_traces,
                       read_grid_csv, trace_count_for, trace_filename, write_grid_csv)

log = logging.getLogger("sspesq")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING_INPUT = 3
EXIT_ORACLE = 4
EXIT_DIVERGED = 5
EXIT_TRACEGEN = 6

# sub-streams of the master seed
NOISE_STREAM = 1
INIT_STREAM = 2


class MissingInputError(FileNotFoundError):
    pass


@dataclass
class RunManifest:
    seed: int
    version: str = __version__
    artifacts: Dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, out_dir: Path, seed: int) -> "RunManifest":
        path = out_dir / "manifest.json"
        if path.exists():
            data = json.loads(path.read_text())
            if data.get("seed") == seed:
                return cls(seed=seed, artifacts=dict(data.get("artifacts", {})))
        return cls(seed=seed)

    def record(self, out_dir: Path, name: str, path: Path) -> None:
        self.artifacts[name] = str(Path(path).relative_to(out_dir))
        (out_dir / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


def _require(path: Path, produced_by: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"{path} not found; run '{produced_by}' first")
    return path


def _policy(args) -> VerificationPolicy:
    return VerificationPolicy(args.lr_tol, args.mlbs_tol, args.max_attempts)


def _training_config(args) -> TrainingConfig:
    return TrainingConfig(hidden_size=args.hidden, max_epochs=args.max_epochs,
                          seed=derive_seed(args.seed, INIT_STREAM))


# --------------------------------------------------------------------------
# stages

def cmd_grid(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    configs = config_grid(args.n_packets)
    if args.lr:
        configs = [c for c in configs if c.lr_pct in args.lr]
    if args.mlbs:
        configs = [c for c in configs if c.mlbs in args.mlbs]
    path = out / "grid.csv"
    write_grid_csv(configs, path)
    RunManifest.load(out, args.seed).record(out, "grid", path)
    log.info("%d configurations -> %s", len(configs), path)
    return EXIT_OK


def cmd_gen(args) -> int:
    out = Path(args.out_dir)
    configs = read_grid_csv(_require(out / "grid.csv", "grid"))
    tdir = out / "traces"
    tdir.mkdir(parents=True, exist_ok=True)
    policy = _policy(args)
    total = 0
    for config in configs:
        count = trace_count_for(config, args.traces_per_config, args.heavy_multiplier, args.heavy_lr)
        for i, trace in enumerate(generate_traces(config, count, args.n_packets, policy, args.seed)):
            write_trace(trace, tdir / trace_filename(config, i))
            total += 1
    RunManifest.load(out, args.seed).record(out, "traces", tdir)
    log.info("%d traces -> %s", total, tdir)
    return EXIT_OK


def _oracle(args):
    if args.oracle == "surrogate":
        return SurrogateOracle(SurrogateParams(noise_sigma=args.noise_sigma,
                                               seed=derive_seed(args.seed, NOISE_STREAM)))
    adapter = ExternalPesqAdapterConfig.from_env(score_pattern=args.score_pattern)
    if not args.reference_dir:
        raise MissingInputError("--reference-dir with 8 kHz mono wave files is required")
    refs = [read_wav(p) for p in sorted(Path(args.reference_dir).glob("*.wav"))]
    if not refs:
        raise MissingInputError(f"no .wav files in {args.reference_dir}")
    return ExternalPesqOracle(refs, adapter)


def _load_traces(tdir: Path, config: NetworkConfig):
    traces = []
    i = 0
    while (tdir / trace_filename(config, i)).exists():
        traces.append(read_trace(tdir / trace_filename(config, i)))
        i += 1
    if not traces:
        raise MissingInputError(f"no traces for {config} in {tdir}; run 'gen' first")
    return traces


def cmd_assess(args) -> int:
    out = Path(args.out_dir)
    configs = read_grid_csv(_require(out / "grid.csv", "grid"))
    tdir = _require(out / "traces", "gen")
    oracle = _oracle(args)
    records: List[SampleRecord] = []
    for config in configs:
        records.extend(assess_traces(config, _load_traces(tdir, config), oracle, args.reps_per_trace))
    path = out / "large.csv"
    write_large_csv(records, path)
    RunManifest.load(out, args.seed).record(out, "large_table", path)
    log.info("%d samples -> %s", len(records), path)
    return EXIT_OK


def cmd_aggregate(args) -> int:
    out = Path(args.out_dir)
    records = read_large_csv(_require(out / "large.csv", "assess"))
    stats = aggregate(records)
    path = out / "compact.csv"
    write_compact_csv(stats, path)
    RunManifest.load(out, args.seed).record(out, "compact_table", path)
    log.info("%d configurations -> %s", len(stats), path)
    return EXIT_OK


def cmd_train(args) -> int:
    out = Path(args.out_dir)
    stats = read_compact_csv(_require(out / "compact.csv", "aggregate"))
    tc = _training_config(args)
    manifest = RunManifest.load(out, args.seed)
    split_seed = args.seed if args.split_seed is None else args.split_seed
    if args.sweep:
        path = out / "hidden_sweep.csv"
        rows = hidden_sweep(stats, args.sweep, tc, split_seed)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["plc", "hidden", "training_error", "validation_error"])
            w.writerows([plc, h, f"{tr:.6f}", f"{va:.6f}"] for plc, h, tr, va in rows)
        manifest.record(out, "hidden_sweep", path)
    trained = train_pair(stats, tc, split_seed)
    summary = out / "training.csv"
    with open(summary, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["network", "training_error", "validation_error", "n_train", "n_validation",
                    "best_epoch", "epochs_run"])
        for plc, (model, history, data) in trained.items():
            model_path = out / f"f{plc}.model"
            save_model(model, model_path)
            manifest.record(out, f"model_f{plc}", model_path)
            w.writerow([f"f{plc}", f"{evaluate_error(model, data.train):.6f}",
                        f"{evaluate_error(model, data.validation):.6f}", len(data.train),
                        len(data.validation), history.best_epoch, len(history.train_error)])
            curve = out / f"history_f{plc}.csv"
            with open(curve, "w", newline="") as ch:
                cw = csv.writer(ch, lineterminator="\n")
                cw.writerow(["epoch", "training_error", "validation_error"])
                for e, (tr, va) in enumerate(zip(history.train_error, history.validation_error)):
                    cw.writerow([e, f"{tr:.8f}", f"{va:.8f}"])
            manifest.record(out, f"history_f{plc}", curve)
    manifest.record(out, "training_report", summary)
    log.info("trained %s", ", ".join(f"f{p}" for p in trained))
    return EXIT_OK


def _models(model_dir: Path) -> Dict[int, MlpModel]:
    return {plc: load_model(_require(model_dir / f"f{plc}.model", "train")) for plc in (0, 1)}


def cmd_eval(args) -> int:
    out = Path(args.out_dir)
    records = read_large_csv(_require(out / "large.csv", "assess"))
    models = _models(out)
    report = full_table_errors(models[0], models[1], records)
    manifest = RunManifest.load(out, args.seed)
    report.write_csv(out / "report.csv")
    (out / "report.txt").write_text(report.to_text())
    manifest.record(out, "report_csv", out / "report.csv")
    manifest.record(out, "report_txt", out / "report.txt")
    sys.stdout.write(report.to_text())
    return EXIT_OK


def _write_rows(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def export_figures(out: Path, stats: Sequence[ConfigStats], records: Sequence[SampleRecord],
                   models: Dict[int, MlpModel], lr_slice: int = 12, plc_slice: int = 1) -> List[Path]:
    fdir = out / "figures"
    fdir.mkdir(parents=True, exist_ok=True)
    written = []
    for plc, (lr_name, mlbs_name) in {0: ("fig1", "fig2"), 1: ("fig3", "fig4")}.items():
        rows = [s for s in stats if s.config.plc == plc]
        if not rows:
            continue
        preds = predict(models[plc], [[s.config.lr_pct, s.config.mlbs] for s in rows])
        points = [(s.config.lr_pct, s.config.mlbs, s.median, p) for s, p in zip(rows, preds)]
        by_lr = sorted(points, key=lambda r: (r[0], r[1]))
        by_mlbs = sorted(points, key=lambda r: (r[1], r[0]))
        p1 = fdir / f"{lr_name}_plc{plc}_vs_lr.csv"
        _write_rows(p1, ["lr_pct", "mlbs", "oracle_median", "prediction"],
                    [[lr, f"{m:g}", f"{med:.6f}", f"{pr:.6f}"] for lr, m, med, pr in by_lr])
        p2 = fdir / f"{mlbs_name}_plc{plc}_vs_mlbs.csv"
        _write_rows(p2, ["mlbs", "lr_pct", "oracle_median", "prediction"],
                    [[f"{m:g}", lr, f"{med:.6f}", f"{pr:.6f}"] for lr, m, med, pr in by_mlbs])
        written += [p1, p2]
    sliced = [r for r in records if r.config.lr_pct == lr_slice and r.config.plc == plc_slice]
    if sliced and plc_slice in models:
        model = models[plc_slice]
        mlbs_values = sorted({r.config.mlbs for r in sliced})
        est = dict(zip(mlbs_values, predict(model, [[lr_slice, m] for m in mlbs_values])))
        p5 = fdir / f"fig5_lr{lr_slice}_plc{plc_slice}.csv"
        _write_rows(p5, ["mlbs", "trace_id", "rep_id", "score", "estimate"],
                    [[f"{r.config.mlbs:g}", r.trace_id, r.rep_id, f"{r.score:.6f}",
                      f"{est[r.config.mlbs]:.6f}"]
                     for r in sorted(sliced, key=lambda r: (r.config.mlbs, r.trace_id, r.rep_id))])
        written.append(p5)
    return written


def cmd_export_figures(args) -> int:
    out = Path(args.out_dir)
    stats = read_compact_csv(_require(out / "compact.csv", "aggregate"))
    records = read_large_csv(_require(out / "large.csv", "assess"))
    paths = export_figures(out, stats, records, _models(out), args.fig5_lr, args.fig5_plc)
    manifest = RunManifest.load(out, args.seed)
    for p in paths:
        manifest.record(out, p.stem, p)
    return EXIT_OK


def cmd_estimate(args) -> int:
    out = Path(args.out_dir)
    models = _models(Path(args.models_dir) if args.models_dir else out)
    counters = Counters()
    src = sys.stdin if args.events == "-" else open(_require(Path(args.events), "an event capture"))
    try:
        result = run_stream(parse_events(src, counters), models[0], models[1], args.plc,
                            args.window, args.horizon, args.period_ms)
    finally:
        if src is not sys.stdin:
            src.close()
    text = "\n".join([ESTIMATES_HEADER, "recv_ms,lr,mlbs,mos,clamped_flags", *result.lines]) + "\n"
    if args.output and args.output != "-":
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    c = result.counters
    log.info("received=%d duplicates=%d late=%d malformed=%d", c.received, c.duplicates,
             c.late_discards, c.malformed + counters.malformed)
    return EXIT_OK


def cmd_pipeline(args) -> int:
    for stage in (cmd_grid, cmd_gen, cmd_assess, cmd_aggregate, cmd_train, cmd_eval,
                  cmd_export_figures):
        status = stage(args)
        if status != EXIT_OK:
            return status
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default="run", help="artifact directory (default: run)")
    common.add_argument("--seed", type=int, default=0, help="master seed")
    common.add_argument("--n-packets", type=int, default=DEFAULT_PACKETS)
    common.add_argument("--traces-per-config", type=int, default=DEFAULT_TRACES_PER_CONFIG)
    common.add_argument("--reps-per-trace", type=int, default=20)
    common.add_argument("--heavy-multiplier", type=int, default=1,
                        help="trace multiplier for configurations at or above --heavy-lr")
    common.add_argument("--heavy-lr", type=int, default=31)
    common.add_argument("--lr-tol", type=float, default=0.25)
    common.add_argument("--mlbs-tol", type=float, default=0.25)
    common.add_argument("--max-attempts", type=int, default=1000)
    common.add_argument("--oracle", choices=("surrogate", "external"), default="surrogate")
    common.add_argument("--noise-sigma", type=float, default=0.25)
    common.add_argument("--reference-dir", help="speech samples for --oracle external")
    common.add_argument("--score-pattern", help="regex with one group extracting the PESQ score")
    common.add_argument("--hidden", type=int, default=30)
    common.add_argument("--max-epochs", type=int, default=50_000)
    common.add_argument("--split-seed", type=int, default=None,
                        help="train/validation split seed (default: --seed)")
    common.add_argument("--sweep", type=int, nargs="*", default=None,
                        help="also report errors for these hidden-layer sizes")
    common.add_argument("--lr", type=int, nargs="*", default=None,
                        help="restrict the grid to these loss rates (percent)")
    common.add_argument("--mlbs", type=float, nargs="*", default=None,
                        help="restrict the grid to these burst sizes")
    common.add_argument("--fig5-lr", type=int, default=12)
    common.add_argument("--fig5-plc", type=int, choices=(0, 1), default=1)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="sspesq", description=f"Single-sided speech quality estimation pipeline. "
                                   f"External PESQ command template: ${PESQ_COMMAND_ENV}.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    stages = {
        "grid": (cmd_grid, "write the feasible configuration grid"),
        "gen": (cmd_gen, "generate verified loss traces"),
        "assess": (cmd_assess, "score every trace with the oracle"),
        "aggregate": (cmd_aggregate, "reduce the large table to per-configuration statistics"),
        "train": (cmd_train, "train f0 and f1"),
        "eval": (cmd_eval, "whole-table error report"),
        "export-figures": (cmd_export_figures, "write figure data CSVs"),
        "pipeline": (cmd_pipeline, "run every stage in order"),
    }
    for name, (func, text) in stages.items():
        p = sub.add_parser(name, parents=[common], help=text)
        p.set_defaults(func=func)
    p = sub.add_parser("estimate", parents=[common], help="real-time estimates from packet arrivals")
    p.add_argument("events", help="event file with 'seq,recv_ms' lines, or '-' for stdin")
    p.add_argument("--plc", type=int, choices=(0, 1), default=1)
    p.add_argument("--models-dir", help="directory holding f0.model and f1.model")
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    p.add_argument("--horizon", type=int, default=DEFAULT_HORIZON)
    p.add_argument("--period-ms", type=float, default=1000.0)
    p.add_argument("-o", "--output", help="output file (default: stdout)")
    p.set_defaults(func=cmd_estimate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except MissingInputError as exc:
        log.error("%s", exc)
        return EXIT_MISSING_INPUT
    except OracleError as exc:
        log.error("oracle failure: %s", exc)
        return EXIT_ORACLE
    except TrainingDivergedError as exc:
        log.error("training diverged: %s", exc)
        return EXIT_DIVERGED
    except TraceGenerationError as exc:
        log.error("%s", exc)
        return EXIT_TRACEGEN
    except ValueError as exc:
        log.error("invalid arguments: %s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

