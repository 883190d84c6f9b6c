"""The forecaster: configuration, parameters, forward/backward, and accounting.

Pipeline for one window ``x`` of shape ``(L, D)``:

1. instance-normalize ``x``;
2. split it into frequency branches (point / high / mid / low);
3. run every branch through one shared projection -> causal depthwise
   conv -> back-projection block (the "temporal kernel");
4. weight the branches with a softmax gate driven by the input's spectrum;
5. map the fused sequence to the horizon with the period-aligned head;
6. undo the normalization.

All arrays carry optional leading batch axes, so ``x`` may be ``(N, L, D)``.
"""

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import ops
from .errors import ConfigError, NumericError, ShapeError, UsageError

BRANCH_ORDER = ("point", "high", "mid", "low")
BRANCH_KERNELS = {"point": 1, "high": 3, "mid": 5}
ACTIVE_BRANCHES = {
    2: ("point", "low"),
    3: ("point", "mid", "low"),
    4: ("point", "high", "mid", "low"),
}
GATING_MODES = ("full", "softmax_fixed", "uniform", "none")
HEAD_MODES = ("spk", "linear")


@dataclass(frozen=True)
class ModelConfig:
    lookback: int = 96
    horizon: int = 96
    channels: int = 7
    branches: int = 4
    period: int = 24
    latent_width: int = 4
    dtk_kernel: int = 3
    slide_kernel: int = 3
    gate_kernel: int = 5
    pool_stride: int = 4
    gating_mode: str = "full"
    head_mode: str = "spk"
    dtk_enabled: bool = True
    seed: int = 0

    def __post_init__(self):
        for name in ("lookback", "horizon", "channels", "period", "latent_width",
                     "dtk_kernel", "slide_kernel", "gate_kernel", "pool_stride"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.lookback < 2:
            raise ConfigError("lookback must be at least 2")
        if self.branches not in ACTIVE_BRANCHES:
            raise ConfigError(f"branches must be one of 2, 3, 4, got {self.branches!r}")
        if self.gating_mode not in GATING_MODES:
            raise ConfigError(f"gating_mode must be one of {GATING_MODES}, got {self.gating_mode!r}")
        if self.head_mode not in HEAD_MODES:
            raise ConfigError(f"head_mode must be one of {HEAD_MODES}, got {self.head_mode!r}")
        if not isinstance(self.dtk_enabled, (bool, np.bool_)):
            raise ConfigError("dtk_enabled must be a boolean")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")

    @property
    def active_branches(self):
        return ACTIVE_BRANCHES[self.branches]

    @property
    def cycles_in(self):
        """n: number of (possibly padded) input cycles."""
        return -(-self.lookback // self.period)

    @property
    def cycles_out(self):
        """m: number of (possibly padded) output cycles."""
        return -(-self.horizon // self.period)

    @property
    def spectrum_length(self):
        return self.lookback // 2 + 1

    def replace(self, **changes):
        return replace(self, **changes)


# Per-dataset architecture presets. Hourly data uses a one-day period; the
# 10-minute Weather data would use 144 steps, capped at the lookback.
DATASET_PRESETS = {
    "ETTh1": {"channels": 7, "period": 24},
    "ETTh2": {"channels": 7, "period": 24},
    "Weather": {"channels": 21, "period": 144},
}


def preset_config(dataset, lookback=96, horizon=96, **overrides):
    """Default :class:`ModelConfig` for a named dataset."""
    try:
        preset = dict(DATASET_PRESETS[dataset])
    except KeyError:
        raise ConfigError(f"no preset for dataset {dataset!r}; known: {sorted(DATASET_PRESETS)}") from None
    preset["period"] = min(preset["period"], lookback)
    preset.update(overrides)
    return ModelConfig(lookback=lookback, horizon=horizon, **preset)


def _array_field():
    return field(default=None)


@dataclass(eq=False)
class FeatherParams:
    """Trainable tensors. Field order is the canonical serialization order.

    Fields that the configuration does not use stay ``None``.
    """

    point_kernel: np.ndarray = _array_field()   # (D, 1)
    high_kernel: np.ndarray = _array_field()    # (D, 3), B == 4
    mid_kernel: np.ndarray = _array_field()     # (D, 5), B >= 3
    dtk_w_in: np.ndarray = _array_field()       # (D, S)
    dtk_kernel: np.ndarray = _array_field()     # (S, k_temp)
    dtk_w_out: np.ndarray = _array_field()      # (S, D)
    gate_conv: np.ndarray = _array_field()      # (gate_kernel, B), full gating
    gate_bias: np.ndarray = _array_field()      # (B,), full gating
    gate_logits: np.ndarray = _array_field()    # (B,), softmax_fixed gating
    spk_slide: np.ndarray = _array_field()      # (1, k_slide), shared over channels
    spk_w: np.ndarray = _array_field()          # (n, m)
    linear_w: np.ndarray = _array_field()       # (L, H), linear head

    def items(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if value is not None:
                yield f.name, value

    def names(self):
        return [name for name, _ in self.items()]

    @property
    def size(self):
        return sum(v.size for _, v in self.items())

    def map(self, fn):
        return FeatherParams(**{name: fn(v) for name, v in self.items()})

    def copy(self):
        return self.map(np.array)

    def zeros_like(self):
        return self.map(np.zeros_like)

    def flatten(self):
        return np.concatenate([v.ravel() for _, v in self.items()]) if self.size else np.zeros(0)

    @classmethod
    def from_flat(cls, config, vector):
        vector = np.asarray(vector, dtype=float).ravel()
        shapes = param_shapes(config)
        total = sum(math.prod(s) for s in shapes.values())
        if vector.size != total:
            raise ShapeError(f"expected {total} parameter entries, got {vector.size}")
        out, pos = {}, 0
        for name, shape in shapes.items():
            n = math.prod(shape)
            out[name] = vector[pos:pos + n].reshape(shape).copy()
            pos += n
        return cls(**out)

    def allclose(self, other, **kw):
        if self.names() != other.names():
            return False
        return all(np.allclose(a, b, **kw) for (_, a), (_, b) in zip(self.items(), other.items()))

    def array_equal(self, other):
        if self.names() != other.names():
            return False
        return all(np.array_equal(a, b) for (_, a), (_, b) in zip(self.items(), other.items()))


def param_shapes(config):
    """Ordered ``{field: shape}`` of every tensor the configuration uses."""
    c = config
    shapes = {"point_kernel": (c.channels, 1)}
    if c.branches == 4:
        shapes["high_kernel"] = (c.channels, 3)
    if c.branches >= 3:
        shapes["mid_kernel"] = (c.channels, 5)
    if c.dtk_enabled:
        shapes["dtk_w_in"] = (c.channels, c.latent_width)
        shapes["dtk_kernel"] = (c.latent_width, c.dtk_kernel)
        shapes["dtk_w_out"] = (c.latent_width, c.channels)
    if c.gating_mode == "full":
        shapes["gate_conv"] = (c.gate_kernel, c.branches)
        shapes["gate_bias"] = (c.branches,)
    elif c.gating_mode == "softmax_fixed":
        shapes["gate_logits"] = (c.branches,)
    if c.head_mode == "spk":
        shapes["spk_slide"] = (1, c.slide_kernel)
        shapes["spk_w"] = (c.cycles_in, c.cycles_out)
    else:
        shapes["linear_w"] = (c.lookback, c.horizon)
    order = [f.name for f in fields(FeatherParams)]
    return {name: shapes[name] for name in order if name in shapes}


def init_params(config, seed=None):
    """Deterministic initialization that starts as a seasonal-naive forecaster.

    Decomposition filters are identity/box averages, the temporal kernel is a
    delta on the current sample, projections are Glorot-uniform, and the head
    maps every phase to the mean of its observed cycles.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    c = config
    p = {}
    p["point_kernel"] = np.ones((c.channels, 1))
    if c.branches == 4:
        p["high_kernel"] = np.full((c.channels, 3), 1.0 / 3.0)
    if c.branches >= 3:
        p["mid_kernel"] = np.full((c.channels, 5), 1.0 / 5.0)
    if c.dtk_enabled:
        bound = math.sqrt(6.0 / (c.channels + c.latent_width))
        p["dtk_w_in"] = rng.uniform(-bound, bound, (c.channels, c.latent_width))
        kernel = np.zeros((c.latent_width, c.dtk_kernel))
        kernel[:, -1] = 1.0
        p["dtk_kernel"] = kernel
        p["dtk_w_out"] = rng.uniform(-bound, bound, (c.latent_width, c.channels))
    if c.gating_mode == "full":
        p["gate_conv"] = rng.uniform(-0.1, 0.1, (c.gate_kernel, c.branches))
        p["gate_bias"] = np.zeros(c.branches)
    elif c.gating_mode == "softmax_fixed":
        p["gate_logits"] = np.zeros(c.branches)
    n, m = c.cycles_in, c.cycles_out
    if c.head_mode == "spk":
        p["spk_slide"] = np.zeros((1, c.slide_kernel))
        p["spk_w"] = np.full((n, m), 1.0 / n)
    else:
        # same map as the cycle-mean head, written out over time steps
        lw = np.zeros((c.lookback, c.horizon))
        t_in = np.arange(c.lookback)[:, None]
        t_out = np.arange(c.horizon)[None, :]
        lw[(t_in % c.period) == (t_out % c.period)] = 1.0 / n
        p["linear_w"] = lw
    return FeatherParams(**p)


# ---------------------------------------------------------------------------
# pipeline stages


def _check_finite(arr, stage):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"non-finite values produced at stage '{stage}'", stage=stage)


def _branch_input(x_norm, name, params, config):
    if name == "low":
        return ops.linear_upsample(ops.avg_pool_downsample(x_norm, config.pool_stride), config.lookback)
    return ops.depthwise_conv_causal(x_norm, getattr(params, f"{name}_kernel"))


def decompose(x_norm, params, config):
    """Time-aligned branch views of the normalized window, keyed by branch name."""
    x_norm = np.asarray(x_norm, dtype=float)
    if x_norm.shape[-2:] != (config.lookback, config.channels):
        raise ShapeError(f"expected (..., {config.lookback}, {config.channels}), got {x_norm.shape}")
    return {name: _branch_input(x_norm, name, params, config) for name in config.active_branches}


def _dtk_forward(h, params):
    z = ops.linear_map(h, params.dtk_w_in)
    u = ops.depthwise_conv_causal(z, params.dtk_kernel)
    return z, u, ops.linear_map(u, params.dtk_w_out)


def dtk_apply(h, params):
    """Shared temporal kernel: project to S channels, causal conv, project back."""
    return _dtk_forward(h, params)[2]


def _gate_forward(x_norm, params, config):
    """Returns ``(g, aux)`` where ``aux`` holds what the backward pass needs."""
    batch = x_norm.shape[:-2]
    b = config.branches
    mode = config.gating_mode
    if mode == "uniform":
        return np.full(batch + (b,), 1.0 / b), None
    if mode == "none":
        return np.ones(batch + (b,)), None
    if mode == "softmax_fixed":
        return np.broadcast_to(ops.softmax(params.gate_logits), batch + (b,)).copy(), None
    spectrum = ops.rfft_magnitude(x_norm).mean(axis=-1)               # (..., Lf)
    a = np.broadcast_to(spectrum[..., None], spectrum.shape + (b,))   # one input channel fanned to B outputs
    z = ops.depthwise_conv_causal(a, params.gate_conv.T)              # (..., Lf, B)
    logits = z.mean(axis=-2) + params.gate_bias
    return ops.softmax(logits), a


def gate(x_norm, params, config):
    """Branch weights, shape ``(..., B)``."""
    return _gate_forward(np.asarray(x_norm, dtype=float), params, config)[0]


def fuse(branches, g):
    """Weighted sum of branch outputs in canonical branch order."""
    names = [n for n in BRANCH_ORDER if n in branches]
    g = np.asarray(g, dtype=float)
    if g.shape[-1] != len(names):
        raise ShapeError(f"{len(names)} branches but {g.shape[-1]} weights")
    out = 0.0
    for i, name in enumerate(names):
        out = out + g[..., i, None, None] * branches[name]
    return out


def _phase_split(seq, period, cycles):
    """``(..., T, D) -> (..., cycles, P, D)`` after right zero-padding to ``cycles * P``."""
    pad = [(0, 0)] * seq.ndim
    pad[-2] = (0, cycles * period - seq.shape[-2])
    seq = np.pad(seq, pad)
    return seq.reshape(seq.shape[:-2] + (cycles, period, seq.shape[-1]))


def _head_forward(fused, params, config):
    if config.head_mode == "linear":
        return np.einsum("...ld,lh->...hd", fused, params.linear_w), None
    agg = fused + ops.depthwise_conv_causal(fused, params.spk_slide)
    cycles = _phase_split(agg, config.period, config.cycles_in)
    out = np.einsum("...ipd,ij->...jpd", cycles, params.spk_w)
    out = out.reshape(out.shape[:-3] + (-1, out.shape[-1]))
    return out[..., :config.horizon, :], cycles


def spk_apply(seq, params, config):
    """Period-aligned head: residual slide, per-phase cycle mapping, crop to ``H``.

    With ``head_mode == "linear"`` the whole head is one shared ``L x H`` map.
    """
    seq = np.asarray(seq, dtype=float)
    if seq.shape[-2] != config.lookback:
        raise ShapeError(f"head expects {config.lookback} steps, got {seq.shape[-2]}")
    return _head_forward(seq, params, config)[0]


# ---------------------------------------------------------------------------
# full model


@dataclass
class ForwardCache:
    x_norm: np.ndarray
    stats: ops.NormStats
    g: np.ndarray
    gate_input: np.ndarray
    branch_in: dict
    latent: dict
    branch_out: dict
    fused: np.ndarray
    head_cycles: np.ndarray
    y_norm: np.ndarray


def _as_batch(x, config):
    x = np.asarray(x, dtype=float)
    if x.shape[-2:] != (config.lookback, config.channels):
        raise ShapeError(
            f"expected input of shape (..., {config.lookback}, {config.channels}), got {x.shape}")
    return x


def _run(x, params, config, keep):
    x = _as_batch(x, config)
    x_norm, stats = ops.instance_normalize(x)
    g, gate_input = _gate_forward(x_norm, params, config)
    _check_finite(g, "gate")

    branch_in, latent, branch_out = {}, {}, {}
    fused = np.zeros_like(x_norm)
    for i, name in enumerate(config.active_branches):
        xb = _branch_input(x_norm, name, params, config)
        _check_finite(xb, f"decompose:{name}")
        if config.dtk_enabled:
            z, u, hb = _dtk_forward(xb, params)
            _check_finite(hb, f"dtk:{name}")
            if keep:
                latent[name] = (z, u)
        else:
            hb = xb
        if keep:
            branch_in[name], branch_out[name] = xb, hb
        fused += g[..., i, None, None] * hb

    y_norm, cycles = _head_forward(fused, params, config)
    _check_finite(y_norm, "head")
    y = ops.instance_denormalize(y_norm, stats)
    _check_finite(y, "denormalize")
    if not keep:
        return y, None
    return y, ForwardCache(x_norm, stats, g, gate_input, branch_in, latent, branch_out,
                           fused, cycles, y_norm)


def forward_with_cache(x, params, config):
    """Forecast plus the intermediates :func:`backward` needs."""
    return _run(x, params, config, keep=True)


def forward(x, params, config):
    """Forecast ``(..., H, D)`` in the units of ``x``.

    Raises:
        ShapeError: if ``x`` is not ``(..., L, D)``.
        NumericError: if any stage produces NaN/Inf (``exc.stage`` names it).
    """
    return _run(x, params, config, keep=False)[0]


def _flat_batch(arr, core=2):
    return arr.reshape((-1,) + arr.shape[arr.ndim - core:])


def backward(cache, d_y, params, config):
    """Parameter gradients of a scalar loss given ``d_y = dLoss/dy``.

    Raises:
        UsageError: if ``cache`` is missing.
    """
    if cache is None:
        raise UsageError("backward() needs the cache returned by forward_with_cache()")
    grads = params.zeros_like()
    batch_axes = tuple(range(cache.x_norm.ndim - 2))

    d_y_norm, _, _ = ops.instance_denormalize_vjp(cache.y_norm, cache.stats, d_y)

    if config.head_mode == "linear":
        grads.linear_w = np.einsum("bld,bhd->lh", _flat_batch(cache.fused), _flat_batch(d_y_norm))
        d_fused = np.einsum("...hd,lh->...ld", d_y_norm, params.linear_w)
    else:
        m, p = config.cycles_out, config.period
        d_full = np.zeros(d_y_norm.shape[:-2] + (m * p, d_y_norm.shape[-1]))
        d_full[..., :config.horizon, :] = d_y_norm
        d_out = d_full.reshape(d_full.shape[:-2] + (m, p, d_full.shape[-1]))
        grads.spk_w = np.einsum("bipd,bjpd->ij", _flat_batch(cache.head_cycles, 3), _flat_batch(d_out, 3))
        d_cycles = np.einsum("...jpd,ij->...ipd", d_out, params.spk_w)
        d_agg = d_cycles.reshape(d_cycles.shape[:-3] + (-1, d_cycles.shape[-1]))[..., :config.lookback, :]
        d_conv_in, grads.spk_slide = ops.depthwise_conv_causal_vjp(cache.fused, params.spk_slide, d_agg)
        d_fused = d_agg + d_conv_in

    d_g = np.zeros_like(cache.g)
    for i, name in enumerate(config.active_branches):
        hb = cache.branch_out[name]
        d_g[..., i] = (d_fused * hb).sum(axis=(-2, -1))
        d_hb = cache.g[..., i, None, None] * d_fused
        if config.dtk_enabled:
            z, u = cache.latent[name]
            d_u, dw_out = ops.linear_map_vjp(u, params.dtk_w_out, d_hb)
            d_z, dk = ops.depthwise_conv_causal_vjp(z, params.dtk_kernel, d_u)
            d_xb, dw_in = ops.linear_map_vjp(cache.branch_in[name], params.dtk_w_in, d_z)
            grads.dtk_w_out += dw_out
            grads.dtk_kernel += dk
            grads.dtk_w_in += dw_in
        else:
            d_xb = d_hb
        if name != "low":
            _, d_taps = ops.depthwise_conv_causal_vjp(cache.x_norm, getattr(params, f"{name}_kernel"), d_xb)
            setattr(grads, f"{name}_kernel", d_taps)

    if config.gating_mode == "full":
        d_logits = ops.softmax_vjp(cache.g, d_g)
        grads.gate_bias = d_logits.sum(axis=batch_axes) if batch_axes else d_logits
        lf = cache.gate_input.shape[-2]
        d_z = np.broadcast_to(d_logits[..., None, :] / lf, cache.gate_input.shape)
        _, d_taps = ops.depthwise_conv_causal_vjp(cache.gate_input, params.gate_conv.T, d_z)
        grads.gate_conv = d_taps.T
    elif config.gating_mode == "softmax_fixed":
        p = ops.softmax(params.gate_logits)
        d_p = d_g.sum(axis=batch_axes) if batch_axes else d_g
        grads.gate_logits = ops.softmax_vjp(p, d_p)
    return grads


# ---------------------------------------------------------------------------
# accounting


def count_params(config):
    """Closed-form trainable-parameter counts per component."""
    c = config
    decomposition = c.channels * (1 + (3 if c.branches == 4 else 0) + (5 if c.branches >= 3 else 0))
    dtk = 2 * c.channels * c.latent_width + c.latent_width * c.dtk_kernel if c.dtk_enabled else 0
    gate_count = {"full": c.gate_kernel * c.branches + c.branches,
                  "softmax_fixed": c.branches}.get(c.gating_mode, 0)
    if c.head_mode == "spk":
        head = c.slide_kernel + c.cycles_in * c.cycles_out
    else:
        head = c.lookback * c.horizon
    counts = {"decomposition": decomposition, "dtk": dtk, "gate": gate_count, "head": head}
    counts["total"] = sum(counts.values())
    return counts


def count_macs(config):
    """Closed-form multiply-accumulate counts for one batch-1 forward pass.

    Conventions: a k-tap conv over T steps and C channels costs ``T*C*k``; a
    projection costs ``T*C_in*C_out``; pooling costs one MAC per input sample
    and interpolation two per output sample; the real FFT of each channel costs
    ``2*L*log2(L)``; normalization costs ``2*L*D`` and denormalization ``H*D``.
    """
    c = config
    L, D, S, H = c.lookback, c.channels, c.latent_width, c.horizon
    stages = {"normalize": 2 * L * D}
    for name in c.active_branches:
        if name == "low":
            stages["branch_low"] = L * D + 2 * L * D
        else:
            stages[f"branch_{name}"] = L * D * BRANCH_KERNELS[name]
    stages["dtk"] = len(c.active_branches) * (2 * L * D * S + L * S * c.dtk_kernel) if c.dtk_enabled else 0
    if c.gating_mode == "full":
        lf = c.spectrum_length
        stages["gate"] = int(round(D * 2 * L * math.log2(L))) + lf * D + lf * c.branches * c.gate_kernel
    else:
        stages["gate"] = 0
    stages["fuse"] = len(c.active_branches) * L * D
    if c.head_mode == "spk":
        stages["head"] = L * D * c.slide_kernel + D * c.period * c.cycles_in * c.cycles_out
    else:
        stages["head"] = D * L * H
    stages["denormalize"] = H * D
    stages["total"] = sum(stages.values())
    return stages
