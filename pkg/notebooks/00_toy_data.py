"""Regenerate the shipped toy dataset ``data/toy_sinusoid.csv``.

Two noiseless channels sharing a 24-step period; the second is phase-shifted,
doubled and lifted by one. Run from the repository root: ``python notebooks/00_toy_data.py``.
"""

import csv
from pathlib import Path

import numpy as np

PERIOD, LENGTH = 24, 720
ROOT = Path(__file__).resolve().parents[1]


def toy_series(length=LENGTH, period=PERIOD):
    t = np.arange(length)
    w = 2 * np.pi * t / period
    return np.stack([np.sin(w), 2.0 * np.sin(w + 0.7) + 1.0], axis=1)


if __name__ == "__main__":
    values = toy_series()
    path = ROOT / "data" / "toy_sinusoid.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "wave", "shifted"])
        for i, row in enumerate(values):
            w.writerow([f"s{i}"] + [f"{v:.12f}" for v in row])
    print(f"wrote {path} ({len(values)} rows)")
