"""Tour of the numerical building blocks.

Each op is paired with its hand-written gradient; this script checks a few of
them against finite differences and prints what the shapes look like.
Run from the repository root: ``python notebooks/01_core_ops.py``.
"""

import numpy as np

from feather_ts import ops

rng = np.random.default_rng(0)

# Instance normalization: every channel of a window ends up zero-mean, unit-std.
x = rng.normal(3.0, 2.0, size=(32, 3))
xn, stats = ops.instance_normalize(x)
print("normalized mean", np.round(xn.mean(axis=0), 12), "std", np.round(xn.std(axis=0), 12))
print("round trip error", np.abs(ops.instance_denormalize(xn, stats) - x).max())

# Causal depthwise convolution: the last tap multiplies the current sample,
# so a unit impulse at t=0 shows the kernel reversed in time.
impulse = np.zeros((6, 1))
impulse[0] = 1.0
taps = np.array([[0.2, 0.3, 0.5]])
print("impulse response", ops.depthwise_conv_causal(impulse, taps)[:, 0])

# Pool then upsample gives a smoothed, same-length copy.
ramp = np.arange(16, dtype=float)[:, None]
coarse = ops.avg_pool_downsample(ramp, 4)
print("pooled ramp", coarse[:, 0], "-> back up", np.round(ops.linear_upsample(coarse, 16)[:, 0], 3))

# Spectrum magnitude and its gradient, checked by central differences.
sig = rng.normal(size=(12, 2))
d_mag = rng.normal(size=ops.rfft_magnitude(sig).shape)
analytic = ops.rfft_magnitude_vjp(sig, d_mag)
numeric = np.zeros_like(sig)
h = 1e-6
for idx in np.ndindex(sig.shape):
    e = np.zeros_like(sig)
    e[idx] = h
    numeric[idx] = np.sum((ops.rfft_magnitude(sig + e) - ops.rfft_magnitude(sig - e)) * d_mag) / (2 * h)
print("rfft magnitude gradient max error", np.abs(analytic - numeric).max())
