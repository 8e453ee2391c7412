"""Two-input, one-output perceptron with a tanh hidden layer.

One network is trained per concealment setting on per-configuration median
scores. Inputs are (loss rate in percent, mean loss burst size), scaled to
[0, 1] over the domain [1, 30] x [1, 6]; the target is scaled from [1, 4.5]
to [0, 1]. Training minimizes mean squared error in the scaled target space
with full-batch gradient descent plus momentum and keeps the weights with the
best validation error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, List, Sequence, Tuple, Union

import numpy as np

from .table import SCORE_MAX, SCORE_MIN, ConfigStats
from .tracegen import NetworkConfig

LR_DOMAIN = (1.0, 30.0)
MLBS_DOMAIN = (1.0, 6.0)
DEFAULT_HIDDEN = 30
MODEL_FORMAT = "sspesq-mlp 1"

Pair = Tuple[NetworkConfig, float]


class DomainWarning(UserWarning):
    """An input fell outside [1, 30] x [1, 6] and was clamped."""


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class MlpModel:
    plc: int
    w_in: np.ndarray          # (hidden, 2)
    b_hidden: np.ndarray      # (hidden,)
    w_out: np.ndarray         # (hidden,)
    b_out: float
    input_offset: Tuple[float, float] = (0.0, 1.0)
    input_scale: Tuple[float, float] = (30.0, 5.0)
    target_offset: float = SCORE_MIN
    target_scale: float = SCORE_MAX - SCORE_MIN
    output_clamp: Tuple[float, float] = (SCORE_MIN, SCORE_MAX)

    def __post_init__(self):
        self.w_in = np.asarray(self.w_in)
        self.b_hidden = np.asarray(self.b_hidden)
        self.w_out = np.asarray(self.w_out)
        h = self.hidden_size
        if h < 1 or self.w_in.shape != (h, 2) or self.b_hidden.shape != (h,) \
                or self.w_out.shape != (h,):
            raise ValueError("inconsistent weight shapes")

    @property
    def hidden_size(self) -> int:
        return int(self.w_in.shape[0])

    @classmethod
    def zeros(cls, plc: int, hidden_size: int = DEFAULT_HIDDEN) -> "MlpModel":
        return cls(plc, np.zeros((hidden_size, 2)), np.zeros(hidden_size),
                   np.zeros(hidden_size), 0.0)

    @classmethod
    def random(cls, plc: int, hidden_size: int = DEFAULT_HIDDEN, seed: int = 0,
               init_range: float = 0.5) -> "MlpModel":
        rng = np.random.default_rng(seed)
        u = lambda *shape: rng.uniform(-init_range, init_range, size=shape)  # noqa: E731
        return cls(plc, u(hidden_size, 2), u(hidden_size), u(hidden_size), float(u(1)[0]))

    def astype(self, dtype) -> "MlpModel":
        return replace(self, w_in=self.w_in.astype(dtype), b_hidden=self.b_hidden.astype(dtype),
                       w_out=self.w_out.astype(dtype), b_out=np.asarray(self.b_out, dtype=dtype)[()])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w_in.ravel(), self.b_hidden, self.w_out,
                               np.atleast_1d(self.b_out)])

    def with_flat(self, vec: np.ndarray) -> "MlpModel":
        h = self.hidden_size
        vec = np.asarray(vec)
        return replace(self, w_in=vec[:2 * h].reshape(h, 2).copy(), b_hidden=vec[2 * h:3 * h].copy(),
                       w_out=vec[3 * h:4 * h].copy(), b_out=vec[4 * h][()])

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat())))


@dataclass
class Gradient:
    w_in: np.ndarray
    b_hidden: np.ndarray
    w_out: np.ndarray
    b_out: float

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w_in.ravel(), self.b_hidden, self.w_out,
                               np.atleast_1d(self.b_out)])


@dataclass(frozen=True)
class TrainingConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    max_epochs: int = 50_000
    patience: int = 500
    min_improvement: float = 1e-7
    seed: int = 0
    init_range: float = 0.5
    hidden_size: int = DEFAULT_HIDDEN

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be >= 1")


@dataclass
class DatasetSplit:
    train: List[Pair]
    validation: List[Pair]
    seed: int
    plc: int


@dataclass
class TrainingHistory:
    train_error: np.ndarray
    validation_error: np.ndarray
    best_epoch: int
    stopped_early: bool = field(default=False)

    @property
    def best_validation_error(self) -> float:
        return float(self.validation_error[self.best_epoch])

    @property
    def best_train_error(self) -> float:
        return float(self.train_error[self.best_epoch])


# --------------------------------------------------------------------------
# scaling and forward pass

def _as_inputs(lr_pct, mlbs) -> np.ndarray:
    return np.column_stack([np.atleast_1d(np.asarray(lr_pct, dtype=float)),
                            np.atleast_1d(np.asarray(mlbs, dtype=float))])


def clamp_inputs(inputs: np.ndarray, warn: bool = True) -> np.ndarray:
    lo = np.array([LR_DOMAIN[0], MLBS_DOMAIN[0]])
    hi = np.array([LR_DOMAIN[1], MLBS_DOMAIN[1]])
    clipped = np.clip(inputs, lo, hi)
    if warn and np.any(clipped != inputs):
        warnings.warn("inputs outside [1, 30] x [1, 6] were clamped", DomainWarning, stacklevel=3)
    return clipped


def normalize_inputs(model: MlpModel, inputs: np.ndarray) -> np.ndarray:
    offset = np.asarray(model.input_offset, dtype=model.w_in.dtype)
    scale = np.asarray(model.input_scale, dtype=model.w_in.dtype)
    return (np.asarray(inputs, dtype=model.w_in.dtype) - offset) / scale


def normalize_targets(model: MlpModel, scores) -> np.ndarray:
    return (np.asarray(scores, dtype=model.w_in.dtype) - model.target_offset) / model.target_scale


def raw_output(model: MlpModel, x_norm: np.ndarray) -> np.ndarray:
    """Network output in scaled target space, no clamping."""
    hidden = np.tanh(x_norm @ model.w_in.T + model.b_hidden)
    return hidden @ model.w_out + model.b_out


def predict(model: MlpModel, inputs: np.ndarray, warn: bool = True) -> np.ndarray:
    """Vectorized forward over an (N, 2) array of (lr_pct, mlbs)."""
    x = normalize_inputs(model, clamp_inputs(np.asarray(inputs, dtype=float), warn=warn))
    y = raw_output(model, x) * model.target_scale + model.target_offset
    return np.clip(y, *model.output_clamp)


def forward(model: MlpModel, lr_pct, mlbs):
    """Predicted score for one configuration, or an array for array inputs."""
    out = predict(model, _as_inputs(lr_pct, mlbs))
    if np.ndim(lr_pct) == 0 and np.ndim(mlbs) == 0:
        return float(out[0])
    return out


# --------------------------------------------------------------------------
# loss and backpropagation

def batch_loss(model: MlpModel, inputs: np.ndarray, scores: np.ndarray):
    """Mean squared error in scaled target space over raw (lr_pct, mlbs) inputs."""
    r = raw_output(model, normalize_inputs(model, inputs)) - normalize_targets(model, scores)
    return np.mean(r * r)


def _backprop(w_in, b_hidden, w_out, b_out, x, t):
    hidden = np.tanh(x @ w_in.T + b_hidden)
    r = hidden @ w_out + b_out - t
    k = x.shape[0]
    d_out = (2.0 / k) * r                                   # dL/dy per sample
    g_w_out = hidden.T @ d_out
    g_b_out = d_out.sum()
    d_hidden = np.outer(d_out, w_out) * (1.0 - hidden * hidden)
    g_w_in = d_hidden.T @ x
    g_b_hidden = d_hidden.sum(axis=0)
    return g_w_in, g_b_hidden, g_w_out, g_b_out, r


def gradient(model: MlpModel, inputs: np.ndarray, scores: np.ndarray) -> Gradient:
    """Exact gradient of :func:`batch_loss` with respect to every weight."""
    inputs = np.asarray(inputs)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("batch must be a non-empty (N, 2) array")
    x = normalize_inputs(model, inputs)
    t = normalize_targets(model, scores)
    g_w_in, g_b_hidden, g_w_out, g_b_out, _ = _backprop(
        model.w_in, model.b_hidden, model.w_out, model.b_out, x, t)
    return Gradient(g_w_in, g_b_hidden, g_w_out, g_b_out)


# --------------------------------------------------------------------------
# data handling, training, evaluation

def _pairs(table: Iterable[Union[ConfigStats, Pair]]) -> List[Pair]:
    out = []
    for item in table:
        if isinstance(item, ConfigStats):
            out.append((item.config, item.median))
        else:
            config, value = item
            out.append((config, float(value)))
    return out


def _arrays(pairs: Sequence[Pair]) -> Tuple[np.ndarray, np.ndarray]:
    inputs = np.array([[c.lr_pct, c.mlbs] for c, _ in pairs], dtype=float).reshape(-1, 2)
    targets = np.array([m for _, m in pairs], dtype=float)
    return inputs, targets


def split(table: Iterable[Union[ConfigStats, Pair]], ratio: float = 0.8,
          seed: int = 0) -> DatasetSplit:
    """Seeded uniform partition; the training side gets ``ceil(ratio * K)`` rows.

    The validation side always keeps at least one row when ``K >= 2``.
    """
    pairs = sorted(_pairs(table), key=lambda p: p[0])
    if not pairs:
        raise ValueError("cannot split an empty table")
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie strictly between 0 and 1")
    plcs = {c.plc for c, _ in pairs}
    if len(plcs) != 1:
        raise ValueError("split expects rows of a single plc value; filter the table first")
    k = len(pairs)
    n_train = math.ceil(ratio * k - 1e-9)
    # keep at least one validation row whenever there are two or more rows
    n_train = min(n_train, k - 1) if k > 1 else k
    order = np.random.default_rng(seed).permutation(k)
    train = [pairs[i] for i in sorted(order[:n_train])]
    validation = [pairs[i] for i in sorted(order[n_train:])]
    return DatasetSplit(train, validation, seed, plcs.pop())


def evaluate_error(model: MlpModel, pairs: Iterable[Union[ConfigStats, Pair]]) -> float:
    """Mean squared difference between clamped predictions and median scores."""
    pairs = _pairs(pairs)
    if not pairs:
        raise ValueError("cannot evaluate on an empty set")
    inputs, targets = _arrays(pairs)
    diff = predict(model, inputs) - targets
    return float(np.mean(diff * diff))


def train(data: DatasetSplit, tc: TrainingConfig = TrainingConfig()
          ) -> Tuple[MlpModel, TrainingHistory]:
    """Full-batch momentum descent with best-validation snapshotting.

    ``history`` entry ``e`` holds the errors (MOS^2, clamped predictions) of
    the weights after ``e`` updates. Training stops after ``tc.patience``
    epochs without a validation improvement larger than ``tc.min_improvement``.
    """
    if not data.train or not data.validation:
        raise ValueError("both training and validation sets must be non-empty")
    model = MlpModel.random(data.plc, tc.hidden_size, tc.seed, tc.init_range)
    x_tr_raw, y_tr = _arrays(data.train)
    x_va_raw, y_va = _arrays(data.validation)
    x_tr = normalize_inputs(model, clamp_inputs(x_tr_raw))
    x_va = normalize_inputs(model, clamp_inputs(x_va_raw))
    t_tr = normalize_targets(model, y_tr)
    lo, hi = model.output_clamp
    scale, offset = model.target_scale, model.target_offset

    w_in, b_hidden, w_out = model.w_in.copy(), model.b_hidden.copy(), model.w_out.copy()
    b_out = float(model.b_out)
    # overflow is caught below as a non-finite loss, not as a numpy warning
    with np.errstate(over="ignore", invalid="ignore"):
        best, train_err, val_err, stopped_early = _descend(
            tc, w_in, b_hidden, w_out, b_out, x_tr, t_tr, y_tr, x_va, y_va, lo, hi, scale, offset,
            data.plc)

    bw_in, bb_hidden, bw_out, bb_out = best[2]
    trained = replace(model, w_in=bw_in, b_hidden=bb_hidden, w_out=bw_out, b_out=float(bb_out))
    history = TrainingHistory(np.array(train_err), np.array(val_err), best[1], stopped_early)
    return trained, history


def _descend(tc, w_in, b_hidden, w_out, b_out, x_tr, t_tr, y_tr, x_va, y_va, lo, hi, scale,
             offset, plc):
    v_w_in, v_b_hidden, v_w_out, v_b_out = (np.zeros_like(w_in), np.zeros_like(b_hidden),
                                            np.zeros_like(w_out), 0.0)
    train_err, val_err = [], []
    best = (math.inf, 0, None)
    stopped_early = False
    lr, mu = tc.learning_rate, tc.momentum

    for epoch in range(tc.max_epochs + 1):
        g_w_in, g_b_hidden, g_w_out, g_b_out, r = _backprop(w_in, b_hidden, w_out, b_out, x_tr, t_tr)
        pred_tr = np.clip((r + t_tr) * scale + offset, lo, hi)
        e_tr = float(np.mean((pred_tr - y_tr) ** 2))
        pred_va = np.clip((np.tanh(x_va @ w_in.T + b_hidden) @ w_out + b_out) * scale + offset, lo, hi)
        e_va = float(np.mean((pred_va - y_va) ** 2))
        if not (math.isfinite(e_tr) and math.isfinite(e_va) and np.all(np.isfinite(r))):
            raise TrainingDivergedError(
                f"non-finite training loss at epoch {epoch} (plc={plc}, "
                f"learning_rate={lr}); lower the learning rate")
        train_err.append(e_tr)
        val_err.append(e_va)
        if e_va < best[0] - tc.min_improvement:
            best = (e_va, epoch, (w_in.copy(), b_hidden.copy(), w_out.copy(), b_out))
        elif epoch - best[1] >= tc.patience:
            stopped_early = True
            break
        if epoch == tc.max_epochs:
            break
        v_w_in = mu * v_w_in - lr * g_w_in
        v_b_hidden = mu * v_b_hidden - lr * g_b_hidden
        v_w_out = mu * v_w_out - lr * g_w_out
        v_b_out = mu * v_b_out - lr * g_b_out
        w_in = w_in + v_w_in
        b_hidden = b_hidden + v_b_hidden
        w_out = w_out + v_w_out
        b_out = b_out + v_b_out
    return best, train_err, val_err, stopped_early


def train_pair(table: Iterable[ConfigStats], tc: TrainingConfig = TrainingConfig(),
               split_seed: int = 0, ratio: float = 0.8) -> dict:
    """Train one network per plc value on disjoint slices of the compact table.

    Returns ``{plc: (model, history, split)}``.
    """
    table = list(table)
    out = {}
    for plc in sorted({s.config.plc for s in table}):
        data = split([s for s in table if s.config.plc == plc], ratio, split_seed)
        model, history = train(data, tc)
        out[plc] = (model, history, data)
    return out


def hidden_sweep(table: Iterable[ConfigStats], sizes: Sequence[int],
                 tc: TrainingConfig = TrainingConfig(), split_seed: int = 0):
    """Best (train, validation) error per hidden size for each plc value."""
    table = list(table)
    rows = []
    for h in sizes:
        for plc, (_, history, _) in train_pair(table, replace(tc, hidden_size=h), split_seed).items():
            rows.append((plc, h, history.best_train_error, history.best_validation_error))
    return rows


# --------------------------------------------------------------------------
# serialization

def format_model(model: MlpModel) -> str:
    """Line-oriented text; floats are written with ``repr`` so they round-trip exactly."""
    lines = [
        f"# {MODEL_FORMAT}",
        f"plc {model.plc}",
        f"hidden_size {model.hidden_size}",
        f"input_offset {float(model.input_offset[0])!r} {float(model.input_offset[1])!r}",
        f"input_scale {float(model.input_scale[0])!r} {float(model.input_scale[1])!r}",
        f"target_offset {float(model.target_offset)!r}",
        f"target_scale {float(model.target_scale)!r}",
        f"output_clamp {float(model.output_clamp[0])!r} {float(model.output_clamp[1])!r}",
        f"weights {4 * model.hidden_size + 1}",
    ]
    lines.extend(repr(float(w)) for w in model.flat())
    return "\n".join(lines) + "\n"


def parse_model(text: str) -> MlpModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != f"# {MODEL_FORMAT}":
        raise ValueError(f"not a model file (expected header '# {MODEL_FORMAT}')")
    header = {}
    i = 1
    while i < len(lines):
        key, _, rest = lines[i].partition(" ")
        header[key] = rest.split()
        i += 1
        if key == "weights":
            break
    count = int(header["weights"][0])
    values = np.array([float(v) for v in lines[i:]])
    if values.size != count:
        raise ValueError(f"expected {count} weights, found {values.size}")
    h = int(header["hidden_size"][0])
    if count != 4 * h + 1:
        raise ValueError("weight count does not match hidden_size")
    model = MlpModel(
        plc=int(header["plc"][0]),
        w_in=values[:2 * h].reshape(h, 2), b_hidden=values[2 * h:3 * h],
        w_out=values[3 * h:4 * h], b_out=float(values[4 * h]),
        input_offset=tuple(float(v) for v in header["input_offset"]),
        input_scale=tuple(float(v) for v in header["input_scale"]),
        target_offset=float(header["target_offset"][0]),
        target_scale=float(header["target_scale"][0]),
        output_clamp=tuple(float(v) for v in header["output_clamp"]),
    )
    if not model.all_finite():
        raise ValueError("model file contains non-finite weights")
    return model


def save_model(model: MlpModel, path: Union[str, Path]) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(format_model(model))


def load_model(path: Union[str, Path]) -> MlpModel:
    with open(path) as fh:
        return parse_model(fh.read())


__all__ = [
    "MlpModel", "Gradient", "TrainingConfig", "DatasetSplit", "TrainingHistory",
    "DomainWarning", "TrainingDivergedError", "forward", "predict", "gradient",
    "batch_loss", "split", "train", "train_pair", "evaluate_error", "hidden_sweep",
    "format_model", "parse_model", "save_model", "load_model", "raw_output",
]
