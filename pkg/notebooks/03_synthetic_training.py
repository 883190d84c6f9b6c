"""Train on the shipped toy sinusoid and compare against a seasonal-naive baseline.

Run from the repository root: ``python notebooks/03_synthetic_training.py``.
Takes well under a minute.
"""

from pathlib import Path

from feather_ts import evaluation as ev, model as fm, training as tr

ROOT = Path(__file__).resolve().parents[1]

raw = tr.load_csv(ROOT / "data" / "toy_sinusoid.csv")
split = tr.split_and_normalize(raw.values)
cfg = fm.ModelConfig(lookback=96, horizon=24, channels=raw.channels, period=24)
tc = tr.TrainConfig(learning_rate=0.01, epochs=30, seed=0)

params, report = tr.train(cfg, tc, split)
print(f"selected epoch {report.selected_epoch}, best val MSE {min(report.val_mse):.2e}")
for e in range(0, len(report.val_mse), 5):
    print(f"  epoch {e:2d} lr {report.learning_rate[e]:.4f} train {report.train_loss[e]:.4f} "
          f"val {report.val_mse[e]:.4f}")

rows = ev.evaluate(params, cfg, split, dataset="toy_sinusoid", seed=tc.seed)
print(ev.rows_to_table(rows))

# a noiseless periodic series is repeated exactly by the naive baseline
naive = ev.evaluate_predictor(ev.seasonal_naive(24, 24), split, 96, 24)
print("seasonal naive  mse %.6f  mae %.6f  cor %.6f" % naive)
