"""Walk one window through the forecaster stage by stage.

Prints the branch shapes, the gate weights and the parameter/MAC budgets for
the default configuration, then shows that rescaling the input rescales the
forecast. Run from the repository root: ``python notebooks/02_model_anatomy.py``.
"""

import numpy as np

from feather_ts import model as fm, ops

cfg = fm.ModelConfig(lookback=96, horizon=48, channels=2, period=24)
params = fm.init_params(cfg, seed=0)

t = np.arange(cfg.lookback)
x = np.stack([np.sin(2 * np.pi * t / 24), np.cos(2 * np.pi * t / 12)], axis=1)
xn, stats = ops.instance_normalize(x)

branches = fm.decompose(xn, params, cfg)
for name, h in branches.items():
    print(f"branch {name:5s} input {h.shape}, after kernel {fm.dtk_apply(h, params).shape}")

g = fm.gate(xn, params, cfg)
print("gate weights", np.round(g, 4), "sum", g.sum())

y = fm.forward(x, params, cfg)
print("forecast shape", y.shape)

counts = fm.count_params(cfg)
print("parameters", {k: v for k, v in counts.items()})
print("multiply-accumulates", fm.count_macs(cfg)["total"])

a, b = np.array([3.0, 0.5]), np.array([-1.0, 10.0])
gap = np.abs(fm.forward(a * x + b, params, cfg) - (a * y + b)).max()
print("affine equivariance gap", gap)
