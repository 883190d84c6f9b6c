"""Data protocol, loss, optimizer and the seeded training loop."""

import csv
import logging
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import model as fm
from . import ops
from .errors import ConfigError, DataError, NumericError, ShapeError

log = logging.getLogger(__name__)

ROLES = ("train", "val", "test")


@dataclass
class RawDataset:
    values: np.ndarray          # (T, D)
    channel_names: list
    timestamps: list = None

    @property
    def length(self):
        return self.values.shape[0]

    @property
    def channels(self):
        return self.values.shape[1]


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def load_csv(path):
    """Read a header-first CSV; a non-numeric first column is taken as timestamps.

    Raises:
        DataError: on ragged rows or unparsable cells (with 1-based file row
            and column coordinates; the header is row 1).
    """
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise DataError(f"{path}: no data rows")
    has_time = not _is_number(body[0][0])
    width = len(header)
    values, stamps = [], []
    for i, row in enumerate(body, start=2):
        if len(row) != width:
            raise DataError(f"{path}: row {i} has {len(row)} fields, header has {width}")
        cells = row[1:] if has_time else row
        try:
            values.append([float(v) for v in cells])
        except ValueError:
            for j, v in enumerate(cells):
                if not _is_number(v):
                    col = j + (2 if has_time else 1)
                    raise DataError(f"{path}: cannot parse {v!r} at row {i}, column {col}") from None
        if has_time:
            stamps.append(row[0])
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        bad = np.argwhere(~np.isfinite(values))[0]
        raise DataError(f"{path}: non-finite value at row {bad[0] + 2}, column {bad[1] + 1 + has_time}")
    names = header[1:] if has_time else header
    return RawDataset(values, list(names), stamps if has_time else None)


@dataclass
class SplitDataset:
    """Standardized series with chronological 6:2:2 ranges.

    ``values`` is the whole series z-scored with train-range statistics;
    ``ranges[role]`` is a half-open ``(start, stop)`` index pair.
    """

    values: np.ndarray
    ranges: dict
    mean: np.ndarray
    std: np.ndarray
    channel_names: list = field(default_factory=list)

    @property
    def channels(self):
        return self.values.shape[1]


def split_and_normalize(raw, ratios=(6, 2, 2), eps=ops.EPS):
    values = raw.values if isinstance(raw, RawDataset) else np.asarray(raw, dtype=float)
    names = raw.channel_names if isinstance(raw, RawDataset) else [f"c{i}" for i in range(values.shape[1])]
    T = values.shape[0]
    if T < 10:
        raise DataError(f"need at least 10 time steps to split, got {T}")
    total = sum(ratios)
    a = math.floor(T * ratios[0] / total)
    b = math.floor(T * (ratios[0] + ratios[1]) / total)
    train = values[:a]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = std < eps
    if np.any(flat):
        warnings.warn(f"zero-variance training channels {np.flatnonzero(flat).tolist()}; std clamped to {eps}")
        std = np.where(flat, eps, std)
    ranges = {"train": (0, a), "val": (a, b), "test": (b, T)}
    return SplitDataset((values - mean) / std, ranges, mean, std, list(names))


def window_starts(split, role, lookback, horizon):
    """Target start indices of every window whose targets fit inside ``role``."""
    start, stop = split.ranges[role]
    first = max(start, lookback)
    last = stop - horizon
    if last < first:
        raise DataError(
            f"{role} range [{start}, {stop}) is too short for lookback={lookback}, horizon={horizon}")
    return np.arange(first, last + 1)


def gather_windows(values, starts, lookback, horizon):
    """Stack ``(inputs, targets)`` for the given target start indices."""
    idx_in = starts[:, None] + np.arange(-lookback, 0)[None, :]
    idx_out = starts[:, None] + np.arange(horizon)[None, :]
    return values[idx_in], values[idx_out]


def window_iter(split, role, lookback, horizon, seed=0, batch_size=32, epoch=0):
    """Yield ``(inputs, targets)`` batches of shape ``(b, L, D)`` / ``(b, H, D)``.

    Train windows are shuffled by a generator seeded with ``(seed, epoch)``;
    validation and test windows come in chronological order.
    """
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}")
    starts = window_starts(split, role, lookback, horizon)
    if role == "train":
        starts = np.random.default_rng([seed, epoch]).permutation(starts)
    for i in range(0, len(starts), batch_size):
        yield gather_windows(split.values, starts[i:i + batch_size], lookback, horizon)


def mse_loss(pred, target):
    """Mean squared error and its cotangent with respect to ``pred``."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.shape != target.shape:
        raise ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


@dataclass
class TrainConfig:
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    patience: int = None

    def __post_init__(self):
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate must be positive and weight_decay non-negative")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience must be positive when given")


class OptimizerState:
    """AdamW moments shaped like the parameters."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.step = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps


def adamw_step(params, grads, state, lr, weight_decay):
    """In-place AdamW update with decoupled weight decay."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for '{name}'", stage=f"grad:{name}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, theta in params.items():
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta *= 1.0 - lr * weight_decay
        theta -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def cosine_lr(epoch, total_epochs, base_lr):
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return max(0.0, 0.5 * base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)))


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_mse: list = field(default_factory=list)
    learning_rate: list = field(default_factory=list)
    selected_epoch: int = -1
    wall_time: float = field(default=0.0, compare=False)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_loss", "val_mse", "learning_rate", "selected"])
            for e, (tl, vm, lr) in enumerate(zip(self.train_loss, self.val_mse, self.learning_rate)):
                w.writerow([e, repr(tl), repr(vm), repr(lr), int(e == self.selected_epoch)])


def predict_windows(params, config, values, starts, chunk=512):
    """Forecasts for many windows, evaluated in fixed-size index-ordered chunks."""
    preds, targets = [], []
    for i in range(0, len(starts), chunk):
        xb, yb = gather_windows(values, starts[i:i + chunk], config.lookback, config.horizon)
        preds.append(fm.forward(xb, params, config))
        targets.append(yb)
    return np.concatenate(preds), np.concatenate(targets)


def validation_mse(params, config, split, role="val"):
    starts = window_starts(split, role, config.lookback, config.horizon)
    pred, target = predict_windows(params, config, split.values, starts)
    return float(np.mean((pred - target) ** 2))


def train(model_config, train_config, split, params=None):
    """Seeded epoch loop; returns the best-validation parameters and a report.

    Raises:
        NumericError: if the loss becomes non-finite (message carries the
            epoch and batch index).
    """
    if split.channels != model_config.channels:
        raise ConfigError(f"model expects {model_config.channels} channels, data has {split.channels}")
    tc = train_config
    params = fm.init_params(model_config, seed=tc.seed) if params is None else params.copy()
    state = OptimizerState(params)
    report = TrainReport()
    best, best_mse, since_best = params.copy(), math.inf, 0
    t0 = time.perf_counter()
    for epoch in range(tc.epochs):
        lr = cosine_lr(epoch, tc.epochs, tc.learning_rate)
        losses = []
        batches = window_iter(split, "train", model_config.lookback, model_config.horizon,
                              seed=tc.seed, batch_size=tc.batch_size, epoch=epoch)
        for b, (xb, yb) in enumerate(batches):
            try:
                pred, cache = fm.forward_with_cache(xb, params, model_config)
            except NumericError as exc:
                raise NumericError(f"divergence at epoch {epoch}, batch {b}: {exc}", stage=exc.stage) from exc
            loss, d_pred = mse_loss(pred, yb)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}", stage="loss")
            grads = fm.backward(cache, d_pred, params, model_config)
            adamw_step(params, grads, state, lr, tc.weight_decay)
            losses.append(loss)
        val = validation_mse(params, model_config, split)
        report.train_loss.append(float(np.mean(losses)))
        report.val_mse.append(val)
        report.learning_rate.append(lr)
        log.info("epoch %d lr %.3g train %.5f val %.5f", epoch, lr, report.train_loss[-1], val)
        if val < best_mse:
            best, best_mse, since_best = params.copy(), val, 0
            report.selected_epoch = epoch
        else:
            since_best += 1
            if tc.patience is not None and since_best >= tc.patience:
                break
    report.wall_time = time.perf_counter() - t0
    return best, report
