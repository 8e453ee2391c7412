"""Full-reference quality oracles and batch scoring of verified traces.

Two oracles share one calling convention, ``assess(trace, config, trace_id,
rep_id) -> score in [1, 4.5]``:

* :class:`SurrogateOracle` is a closed-form stand-in with seeded Gaussian
  noise. It makes the whole pipeline runnable without speech material or a
  PESQ binary. It is a harness, not a model of PESQ.
* :class:`ExternalPesqOracle` degrades real 8 kHz speech frame by frame
  according to the trace, then runs an external PESQ command on the
  reference/degraded pair and parses the score it prints.
"""

from __future__ import annotations

import math
import os
import re
import shlex
import subprocess
import tempfile
import wave
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .gilbert import LossTrace, empirical_stats, make_rng
from .table import SCORE_MAX, SCORE_MIN, SampleRecord, aggregate
from .tracegen import (DEFAULT_PACKETS, DEFAULT_TRACES_PER_CONFIG, NetworkConfig,
                       TraceGenerationError, VerificationPolicy, generate_traces,
                       trace_count_for)

DEFAULT_REPS_PER_TRACE = 20
PESQ_COMMAND_ENV = "SSPESQ_PESQ_COMMAND"

_FLOAT_RE = re.compile(r"[-+]?(?:\d+\.\d*|\.\d+|\d+)(?:[eE][-+]?\d+)?")


class OracleError(RuntimeError):
    pass


class ExternalProcessError(OracleError):
    """The external command failed; ``output`` holds what it printed."""

    def __init__(self, message: str, returncode: Optional[int], output: str):
        super().__init__(f"{message}\n--- captured output ---\n{output}")
        self.returncode = returncode
        self.output = output


class OutputParseError(OracleError):
    pass


class AudioFormatError(OracleError):
    pass


class QualityOracle(Protocol):
    def assess(self, trace: LossTrace, config: NetworkConfig, trace_id: int,
               rep_id: int) -> float: ...


def clamp_score(x: float) -> float:
    return min(max(x, SCORE_MIN), SCORE_MAX)


# --------------------------------------------------------------------------
# surrogate

@dataclass(frozen=True)
class SurrogateParams:
    decay_noplc: float = 0.10
    decay_plc: float = 0.06
    burst_gain: float = 0.08
    noise_sigma: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.decay_noplc <= 0 or self.decay_plc <= 0:
            raise ValueError("decay constants must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")


def surrogate_base(loss_pct: float, mlbs: float, plc: int,
                   params: SurrogateParams = SurrogateParams()) -> float:
    """Noise-free surrogate score: ``1 + 3.5 * exp(-k * LR% * (1 + g * (MLBS - 1)))``."""
    k = params.decay_plc if plc else params.decay_noplc
    return 1.0 + 3.5 * math.exp(-k * loss_pct * (1.0 + params.burst_gain * (mlbs - 1.0)))


def surrogate_assess(trace: LossTrace, plc: int, params: SurrogateParams = SurrogateParams(),
                     key: Sequence[int] = ()) -> float:
    """Score ``trace`` from its own empirical statistics.

    ``key`` identifies the call; the noise draw is seeded from
    ``(params.seed, *key)`` so repeated calls with different keys redraw noise.
    """
    stats = empirical_stats(trace)
    em = stats.mlbs if stats.mlbs is not None else 1.0
    q = surrogate_base(100.0 * stats.loss_rate, em, plc, params)
    if params.noise_sigma > 0:
        q += params.noise_sigma * make_rng([params.seed, *key]).standard_normal()
    return clamp_score(q)


class SurrogateOracle:
    def __init__(self, params: SurrogateParams = SurrogateParams()):
        self.params = params

    def assess(self, trace, config, trace_id, rep_id):
        return surrogate_assess(trace, config.plc, self.params,
                                key=(*config.key, trace_id, rep_id))


# --------------------------------------------------------------------------
# external PESQ adapter

@dataclass(frozen=True)
class ExternalPesqAdapterConfig:
    """How to call the external tool.

    ``command`` is a shell-style template with exactly one ``{ref}`` and one
    ``{deg}`` placeholder. Without ``score_pattern`` the score is the last
    number on the last non-empty output line; with it, the first capture group
    of the last match in the whole output.
    """

    command: str
    score_pattern: Optional[str] = None
    sample_rate: int = 8000
    frame_length: int = 160
    timeout: Optional[float] = 120.0

    def __post_init__(self):
        for name in ("{ref}", "{deg}"):
            if self.command.count(name) != 1:
                raise ValueError(f"command template must contain {name} exactly once")

    @classmethod
    def from_env(cls, **kwargs) -> "ExternalPesqAdapterConfig":
        command = os.environ.get(PESQ_COMMAND_ENV)
        if not command:
            raise OracleError(f"environment variable {PESQ_COMMAND_ENV} is not set")
        return cls(command=command, **kwargs)


def read_wav(path: Union[str, Path], sample_rate: int = 8000) -> np.ndarray:
    with wave.open(str(path), "rb") as wf:
        if wf.getnchannels() != 1:
            raise AudioFormatError(f"{path}: expected mono, got {wf.getnchannels()} channels")
        if wf.getsampwidth() != 2:
            raise AudioFormatError(f"{path}: expected 16-bit samples")
        if wf.getframerate() != sample_rate:
            raise AudioFormatError(f"{path}: expected {sample_rate} Hz, got {wf.getframerate()}")
        return np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2").astype(np.int16)


def write_wav(path: Union[str, Path], samples: np.ndarray, sample_rate: int = 8000) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(sample_rate)
        wf.writeframes(np.asarray(samples, dtype="<i2").tobytes())


def _check_audio(audio: np.ndarray) -> np.ndarray:
    audio = np.asarray(audio)
    if audio.ndim != 1:
        raise AudioFormatError(f"reference audio must be mono (1-D), got shape {audio.shape}")
    if audio.dtype != np.int16:
        raise AudioFormatError(f"reference audio must be 16-bit PCM, got {audio.dtype}")
    if audio.size == 0:
        raise AudioFormatError("reference audio is empty")
    return audio


def degrade_audio(reference: np.ndarray, bits: np.ndarray, plc: int,
                  frame_length: int = 160) -> np.ndarray:
    """Drop frame ``i`` when ``bits[i] == 1``.

    Lost frames become silence without concealment, or repeat the last
    received frame with concealment (silence if nothing was received yet).
    """
    reference = _check_audio(reference)
    n_frames = -(-reference.size // frame_length)
    if len(bits) < n_frames:
        raise AudioFormatError(f"trace has {len(bits)} packets but audio needs {n_frames} frames")
    out = reference.copy()
    last: Optional[np.ndarray] = None
    for i in range(n_frames):
        lo, hi = i * frame_length, min((i + 1) * frame_length, reference.size)
        if bits[i]:
            if plc and last is not None:
                out[lo:hi] = last[:hi - lo]
            else:
                out[lo:hi] = 0
        else:
            last = reference[lo:lo + frame_length]
    return out


def parse_score(output: str, pattern: Optional[str] = None) -> float:
    if pattern is not None:
        matches = re.findall(pattern, output)
        if not matches:
            raise OutputParseError(f"pattern {pattern!r} not found in output:\n{output}")
        last = matches[-1]
        return float(last[0] if isinstance(last, tuple) else last)
    lines = [ln for ln in output.splitlines() if ln.strip()]
    if not lines:
        raise OutputParseError("external command produced no output")
    numbers = _FLOAT_RE.findall(lines[-1])
    if not numbers:
        raise OutputParseError(f"no number on final output line: {lines[-1]!r}")
    return float(numbers[-1])


def external_assess(reference_audio: np.ndarray, trace: LossTrace, plc: int,
                    adapter: ExternalPesqAdapterConfig,
                    workdir: Optional[Union[str, Path]] = None) -> float:
    """Degrade, write both wave files, run the tool and return its clamped score."""
    degraded = degrade_audio(reference_audio, trace.bits, plc, adapter.frame_length)
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        ref_path = Path(tmp) / "reference.wav"
        deg_path = Path(tmp) / "degraded.wav"
        write_wav(ref_path, reference_audio, adapter.sample_rate)
        write_wav(deg_path, degraded, adapter.sample_rate)
        argv = shlex.split(adapter.command.format(ref=shlex.quote(str(ref_path)),
                                                  deg=shlex.quote(str(deg_path))))
        try:
            proc = subprocess.run(argv, capture_output=True, text=True, timeout=adapter.timeout)
        except FileNotFoundError as exc:
            raise ExternalProcessError(f"cannot start {argv[0]!r}", None, str(exc)) from exc
        except subprocess.TimeoutExpired as exc:
            raise ExternalProcessError(f"timed out after {adapter.timeout}s", None,
                                       str(exc.output or "")) from exc
    output = proc.stdout + proc.stderr
    if proc.returncode != 0:
        raise ExternalProcessError(f"command exited with status {proc.returncode}",
                                   proc.returncode, output)
    return clamp_score(parse_score(proc.stdout, adapter.score_pattern))


class ExternalPesqOracle:
    """Uses ``references[rep_id % len(references)]`` as the speech sample."""

    def __init__(self, references: Sequence[np.ndarray], adapter: ExternalPesqAdapterConfig):
        if not references:
            raise ValueError("need at least one reference recording")
        self.references = [_check_audio(r) for r in references]
        self.adapter = adapter

    def assess(self, trace, config, trace_id, rep_id):
        ref = self.references[rep_id % len(self.references)]
        return external_assess(ref, trace, config.plc, self.adapter)


# --------------------------------------------------------------------------
# batch scoring

def assess_traces(config: NetworkConfig, traces: Sequence[LossTrace], oracle: QualityOracle,
                  reps_per_trace: int = DEFAULT_REPS_PER_TRACE) -> List[SampleRecord]:
    records = []
    for trace_id, trace in enumerate(traces):
        for rep_id in range(reps_per_trace):
            try:
                score = oracle.assess(trace, config, trace_id, rep_id)
            except OracleError as exc:
                raise OracleError(f"{config} trace {trace_id} rep {rep_id}: {exc}") from exc
            records.append(SampleRecord(config, trace_id, rep_id, score))
    return records


def batch_assess(configs: Sequence[NetworkConfig], traces_per_config: int = DEFAULT_TRACES_PER_CONFIG,
                 oracle: QualityOracle = None, seed: int = 0, *,
                 n: int = DEFAULT_PACKETS, policy: VerificationPolicy = VerificationPolicy(),
                 reps_per_trace: int = DEFAULT_REPS_PER_TRACE, heavy_multiplier: int = 1,
                 heavy_lr_pct: int = 31, max_workers: int = 1) -> List[SampleRecord]:
    """Generate verified traces for every configuration and score each one repeatedly.

    Output order is the input configuration order regardless of ``max_workers``.
    """
    if oracle is None:
        oracle = SurrogateOracle(SurrogateParams(seed=seed))

    def one(config: NetworkConfig) -> List[SampleRecord]:
        count = trace_count_for(config, traces_per_config, heavy_multiplier, heavy_lr_pct)
        try:
            traces = generate_traces(config, count, n, policy, seed)
        except (TraceGenerationError, ValueError) as exc:
            raise type(exc)(f"{config}: {exc}") from exc
        return assess_traces(config, traces, oracle, reps_per_trace)

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            chunks = list(pool.map(one, configs))
    else:
        chunks = [one(c) for c in configs]
    return [rec for chunk in chunks for rec in chunk]


def median_targets(configs: Sequence[NetworkConfig], params: SurrogateParams,
                   **kwargs) -> List[Tuple[NetworkConfig, float]]:
    """Surrogate batch reduced to ``(config, median)`` pairs."""
    records = batch_assess(configs, oracle=SurrogateOracle(params), seed=params.seed, **kwargs)
    return [(s.config, s.median) for s in aggregate(records)]
