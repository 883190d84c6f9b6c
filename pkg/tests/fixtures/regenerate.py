"""Rebuild the toy checkpoint and its evaluation fixture.

The fixture is computed by an independent oracle: one window at a time through
``forward`` and metrics written out as explicit sums, without the library's
evaluation helpers. Run from the repository root.
"""

import csv
import math
import subprocess
import sys
from pathlib import Path

import numpy as np

from feather_ts import edge, model, training

ROOT = Path(__file__).resolve().parents[2]
CKPT = ROOT / "data" / "toy_model_seed0.fthr"
FIXTURE = Path(__file__).with_name("toy_eval.csv")


def oracle_metrics(params, config, split):
    start, stop = split.ranges["test"]
    L, H = config.lookback, config.horizon
    preds, targets = [], []
    for t in range(max(start, L), stop - H + 1):
        preds.append(model.forward(split.values[t - L:t], params, config))
        targets.append(split.values[t:t + H])
    p, y = np.array(preds), np.array(targets)
    n = p.size
    mse = sum(float(v) ** 2 for v in (p - y).ravel()) / n
    mae = sum(abs(float(v)) for v in (p - y).ravel()) / n
    cors = []
    for c in range(p.shape[-1]):
        a, b = p[..., c].ravel(), y[..., c].ravel()
        ma, mb = a.mean(), b.mean()
        num = sum((u - ma) * (v - mb) for u, v in zip(a, b))
        den = math.sqrt(sum((u - ma) ** 2 for u in a) * sum((v - mb) ** 2 for v in b))
        cors.append(num / den)
    return mse, mae, sum(cors) / len(cors)


if __name__ == "__main__":
    out = ROOT / "runs" / "fixture"
    subprocess.run([sys.executable, "-m", "feather_ts", "train", "--config", "data/toy_config.json",
                    "--out", str(out), "--seed", "0"], cwd=ROOT, check=True)
    CKPT.write_bytes((out / "model_seed0.fthr").read_bytes())
    params, config = edge.import_weights(CKPT)
    split = training.split_and_normalize(training.load_csv(ROOT / "data" / "toy_sinusoid.csv"))
    mse, mae, cor = oracle_metrics(params, config, split)
    with open(FIXTURE, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "horizon", "seed", "mse", "mae", "cor"])
        w.writerow(["toy_sinusoid", config.horizon, 0, f"{mse:.6f}", f"{mae:.6f}", f"{cor:.6f}"])
    print(FIXTURE.read_text())
