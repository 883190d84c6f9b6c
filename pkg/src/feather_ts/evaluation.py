"""Test-set metrics, multi-seed aggregation and report formatting."""

import csv
import io
import warnings
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .training import gather_windows, predict_windows, window_starts

CSV_HEADER = ("dataset", "horizon", "seed", "mse", "mae", "cor")


@dataclass(frozen=True)
class MetricsRow:
    dataset: str
    horizon: int
    seed: int
    mse: float
    mae: float
    cor: float


def _aligned(preds, targets):
    preds = np.asarray(preds, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if preds.shape != targets.shape:
        raise ShapeError(f"predictions {preds.shape} and targets {targets.shape} differ")
    return preds, targets


def metric_mse(preds, targets):
    preds, targets = _aligned(preds, targets)
    return float(np.mean((preds - targets) ** 2))


def metric_mae(preds, targets):
    preds, targets = _aligned(preds, targets)
    return float(np.mean(np.abs(preds - targets)))


def metric_cor(preds, targets):
    """Channel-averaged Pearson correlation over all (window, step) pairs.

    Channels where either side is constant are skipped with a warning.

    Raises:
        DataError: if every channel is degenerate.
    """
    preds, targets = _aligned(preds, targets)
    p = preds.reshape(-1, preds.shape[-1])
    t = targets.reshape(-1, targets.shape[-1])
    p = p - p.mean(axis=0)
    t = t - t.mean(axis=0)
    sp = np.sqrt((p ** 2).sum(axis=0))
    st = np.sqrt((t ** 2).sum(axis=0))
    ok = (sp > 0) & (st > 0)
    if not np.any(ok):
        raise DataError("correlation undefined: every channel has zero variance")
    if not np.all(ok):
        warnings.warn(f"skipping constant channels {np.flatnonzero(~ok).tolist()} in COR")
    r = (p[:, ok] * t[:, ok]).sum(axis=0) / (sp[ok] * st[ok])
    return float(np.mean(r))


def evaluate_predictor(predict, split, lookback, horizon, role="test", chunk=512):
    """Run ``predict(inputs) -> forecasts`` over every window of ``role``.

    Returns ``(mse, mae, cor)`` over all windows in chronological order.
    """
    starts = window_starts(split, role, lookback, horizon)
    preds, targets = [], []
    for i in range(0, len(starts), chunk):
        xb, yb = gather_windows(split.values, starts[i:i + chunk], lookback, horizon)
        preds.append(np.asarray(predict(xb), dtype=float))
        targets.append(yb)
    preds, targets = np.concatenate(preds), np.concatenate(targets)
    return metric_mse(preds, targets), metric_mae(preds, targets), metric_cor(preds, targets)


def evaluate(params, config, split, horizons=None, dataset="", seed=0, role="test"):
    """One :class:`MetricsRow` per requested horizon.

    A model forecasts a single horizon, so every requested horizon must equal
    ``config.horizon``.
    """
    horizons = [config.horizon] if horizons is None else list(horizons)
    for h in horizons:
        if h != config.horizon:
            raise ConfigError(f"model was built for horizon {config.horizon}, cannot evaluate horizon {h}")
    starts = window_starts(split, role, config.lookback, config.horizon)
    preds, targets = predict_windows(params, config, split.values, starts)
    row = MetricsRow(dataset, config.horizon, seed,
                     metric_mse(preds, targets), metric_mae(preds, targets), metric_cor(preds, targets))
    return [row for _ in horizons]


def seasonal_naive(period, horizon):
    """Forecaster that repeats the last ``period`` observed steps."""
    def predict(xb):
        last = xb[..., -period:, :]
        reps = -(-horizon // period)
        return np.concatenate([last] * reps, axis=-2)[..., :horizon, :]
    return predict


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class AggregateRow:
    dataset: str
    horizon: int
    variant: str
    n: int
    mse_mean: float
    mse_std: float
    mae_mean: float
    mae_std: float
    cor_mean: float
    cor_std: float
    rank: int = 1


def _min_ranks(values):
    order = sorted(values)
    return [order.index(v) + 1 for v in values]


def aggregate(rows):
    """Mean and population std over seeds per (dataset, horizon[, variant]).

    Args:
        rows: iterable of :class:`MetricsRow`, or of ``(variant, MetricsRow)``
            pairs when several model variants are ranked against each other
            (rank 1 = lowest mean MSE; ties share the better rank).
    """
    cells = {}
    for item in rows:
        variant, row = item if isinstance(item, tuple) else ("", item)
        cells.setdefault((row.dataset, row.horizon, variant), []).append(row)
    out = []
    for (ds, h, variant), group in cells.items():
        stats = {}
        for metric in ("mse", "mae", "cor"):
            vals = np.array([getattr(r, metric) for r in group])
            stats[f"{metric}_mean"] = float(vals.mean())
            stats[f"{metric}_std"] = float(vals.std())
        out.append(AggregateRow(ds, h, variant, len(group), **stats))
    ranked = []
    for key in dict.fromkeys((r.dataset, r.horizon) for r in out):
        group = [r for r in out if (r.dataset, r.horizon) == key]
        ranks = _min_ranks([r.mse_mean for r in group])
        ranked.extend(AggregateRow(**{**r.__dict__, "rank": k}) for r, k in zip(group, ranks))
    return ranked


# ---------------------------------------------------------------------------
# report emission


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value) if value != "" else "-"


def rows_to_csv(rows, path=None):
    """CSV text with a fixed header; optionally also written to ``path``."""
    if not rows:
        header = CSV_HEADER
    else:
        header = tuple(f.name for f in fields(rows[0]))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(getattr(r, h)) for h in header])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def rows_to_table(rows):
    """Aligned plain-text table with the same cell text as :func:`rows_to_csv`."""
    header = tuple(f.name for f in fields(rows[0])) if rows else CSV_HEADER
    cells = [list(header)] + [[_fmt(getattr(r, h)) for h in header] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def parse_table(text):
    """Inverse of :func:`rows_to_table`: list of dicts of strings."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = lines[0].split()
    return [dict(zip(header, ln.split())) for ln in lines[2:]]
