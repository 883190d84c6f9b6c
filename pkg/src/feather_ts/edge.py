"""Edge-deployability tooling: memory estimate, RAM budget verdicts, weight archive, timing.

The peak-activation estimate replays the buffer graph of :func:`feather_ts.model.forward`
for a single window. Every named stage buffer is allocated when its stage
runs and released right after the last stage that reads it. Causal
convolutions allocate a left-padded copy of their input and then a trimmed
output. Element-wise updates (gate scaling, accumulation, the head's
residual add) are assumed to happen in place. The input window is
released after normalization, and the forecast buffer stays live until
the end of the pass.
"""

import struct
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import model as fm
from .errors import (BadMagicError, ChecksumError, ConfigError, CountMismatchError,
                     UnsupportedVersionError)

DEFAULT_BUDGETS = (16384, 32768, 65536)
DEFAULT_OVERHEAD_BYTES = 4096

MAGIC = b"FTHR"
FORMAT_VERSION = 1
GATING_CODES = {"full": 0, "softmax_fixed": 1, "uniform": 2, "none": 3}
HEAD_CODES = {"spk": 0, "linear": 1}
_HEADER = struct.Struct("<4sH13I")
_CRC = struct.Struct("<I")


def _bytes_per_value(precision):
    if precision not in (32, 64):
        raise ConfigError(f"precision must be 32 or 64, got {precision!r}")
    return precision // 8


# ---------------------------------------------------------------------------
# peak activation estimate


@dataclass
class _Step:
    stage: str
    allocs: list = field(default_factory=list)   # (buffer, elements)
    reads: list = field(default_factory=list)


def buffer_schedule(config):
    """Ordered stages of one inference pass with the buffers each allocates and reads."""
    c = config
    L, D, S, H = c.lookback, c.channels, c.latent_width, c.horizon
    steps = [
        _Step("input", [("x", L * D)]),
        _Step("normalize", [("stats", 2 * D), ("x_norm", L * D)], ["x"]),
    ]
    if c.gating_mode == "full":
        lf = c.spectrum_length
        steps += [
            _Step("gate:rfft", [("spectrum", 2 * lf * D)], ["x_norm"]),
            _Step("gate:magnitude", [("magnitude", lf * D)], ["spectrum"]),
            _Step("gate:channel_mean", [("descriptor", lf)], ["magnitude"]),
            _Step("gate:pad", [("descriptor_pad", lf + c.gate_kernel - 1)], ["descriptor"]),
            _Step("gate:conv", [("gate_maps", lf * c.branches)], ["descriptor_pad"]),
            _Step("gate:softmax", [("g", c.branches)], ["gate_maps"]),
        ]
    else:
        steps.append(_Step("gate:weights", [("g", c.branches)]))
    steps.append(_Step("fuse:init", [("fused", L * D)]))

    for name in c.active_branches:
        xb = f"{name}:x"
        if name == "low":
            n_pool = -(-L // c.pool_stride)
            steps += [
                _Step("low:pool", [("low:pooled", n_pool * D)], ["x_norm"]),
                _Step("low:upsample", [(xb, L * D)], ["low:pooled"]),
            ]
        else:
            k = fm.BRANCH_KERNELS[name]
            if k > 1:
                steps += [
                    _Step(f"{name}:pad", [(f"{name}:pad", (L + k - 1) * D)], ["x_norm"]),
                    _Step(f"{name}:conv", [(xb, L * D)], [f"{name}:pad"]),
                ]
            else:
                steps.append(_Step(f"{name}:conv", [(xb, L * D)], ["x_norm"]))
        if c.dtk_enabled:
            conv_src = f"{name}:z"
            steps.append(_Step(f"{name}:dtk_in", [(f"{name}:z", L * S)], [xb]))
            if c.dtk_kernel > 1:
                conv_src = f"{name}:z_pad"
                steps.append(_Step(f"{name}:dtk_pad", [(conv_src, (L + c.dtk_kernel - 1) * S)],
                                   [f"{name}:z"]))
            steps += [
                _Step(f"{name}:dtk_conv", [(f"{name}:u", L * S)], [conv_src]),
                _Step(f"{name}:dtk_out", [(f"{name}:h", L * D)], [f"{name}:u"]),
                _Step(f"{name}:accumulate", [], [f"{name}:h", "g", "fused"]),
            ]
        else:
            steps.append(_Step(f"{name}:accumulate", [], [xb, "g", "fused"]))

    if c.head_mode == "spk":
        src = "fused"
        if c.slide_kernel > 1:
            steps.append(_Step("head:slide_pad", [("slide_pad", (L + c.slide_kernel - 1) * D)], ["fused"]))
            src = "slide_pad"
        steps += [
            _Step("head:slide_conv", [("agg", L * D)], [src]),
            _Step("head:residual", [], ["fused", "agg"]),
        ]
        l_pad = c.cycles_in * c.period
        phase_src = "agg"
        if l_pad > L:
            steps.append(_Step("head:phase_pad", [("agg_pad", l_pad * D)], ["agg"]))
            phase_src = "agg_pad"
        steps.append(_Step("head:phase_map", [("y_norm", c.cycles_out * c.period * D)], [phase_src]))
    else:
        steps.append(_Step("head:linear", [("y_norm", H * D)], ["fused"]))
    steps.append(_Step("denormalize", [("y", H * D)], ["y_norm", "stats"]))
    steps.append(_Step("output", [], ["y"]))
    return steps


@dataclass
class PeakEstimate:
    peak_bytes: int
    peak_stage: str
    live_at_peak: dict
    buffers: dict          # buffer -> bytes, every buffer ever allocated
    stage_bytes: list      # (stage, live bytes) in schedule order


def estimate_peak_activations(config, precision=32, batch=1):
    """Maximum simultaneously live activation bytes over one forward pass."""
    width = _bytes_per_value(precision) * batch
    steps = buffer_schedule(config)
    born, last, size = {}, {}, {}
    for i, st in enumerate(steps):
        for name, elems in st.allocs:
            born[name], last[name], size[name] = i, i, elems * width
        for name in st.reads:
            last[name] = i
    stage_bytes, peak, peak_i = [], -1, 0
    for i, st in enumerate(steps):
        live = sum(size[b] for b in size if born[b] <= i <= last[b])
        stage_bytes.append((st.stage, live))
        if live > peak:
            peak, peak_i = live, i
    live_at_peak = {b: size[b] for b in size if born[b] <= peak_i <= last[b]}
    return PeakEstimate(peak, steps[peak_i].stage, live_at_peak, size, stage_bytes)


@dataclass
class MemoryBudgetReport:
    precision: int
    param_bytes: int
    peak_activation_bytes: int
    runtime_overhead_bytes: int
    verdicts: dict
    peak_stage: str = ""

    @property
    def total_bytes(self):
        return self.param_bytes + self.peak_activation_bytes + self.runtime_overhead_bytes

    def rows(self):
        """``(budget, total, deployable)`` triples, budgets ascending."""
        return [(b, self.total_bytes, ok) for b, ok in sorted(self.verdicts.items())]


def budget_verdicts(param_bytes, peak_activation_bytes, budgets=DEFAULT_BUDGETS,
                    overhead_bytes=DEFAULT_OVERHEAD_BYTES, precision=32, peak_stage=""):
    """Deployable iff parameters + peak activations + overhead fit the budget."""
    if any(b <= 0 for b in budgets):
        raise ConfigError("budgets must be positive")
    total = param_bytes + peak_activation_bytes + overhead_bytes
    verdicts = {int(b): total <= b for b in budgets}
    return MemoryBudgetReport(precision, param_bytes, peak_activation_bytes, overhead_bytes,
                              verdicts, peak_stage)


def profile_memory(config, precision=32, budgets=DEFAULT_BUDGETS, overhead_bytes=DEFAULT_OVERHEAD_BYTES):
    """Parameter bytes + activation estimate + verdicts for one configuration."""
    param_bytes = fm.count_params(config)["total"] * _bytes_per_value(precision)
    est = estimate_peak_activations(config, precision)
    return budget_verdicts(param_bytes, est.peak_bytes, budgets, overhead_bytes, precision, est.peak_stage)


# ---------------------------------------------------------------------------
# weight archive


def _header_fields(config):
    c = config
    return (c.lookback, c.horizon, c.channels, c.branches, c.period, c.latent_width,
            c.dtk_kernel, c.slide_kernel, c.gate_kernel, c.pool_stride,
            GATING_CODES[c.gating_mode], HEAD_CODES[c.head_mode], int(c.dtk_enabled))


def encode_archive(params, config):
    """Serialize to bytes: header, float32 little-endian payload, CRC-32 trailer."""
    expected = fm.count_params(config)["total"]
    if params.size != expected:
        raise CountMismatchError(f"params hold {params.size} entries, config implies {expected}")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, *_header_fields(config))
    payload = params.flatten().astype("<f4").tobytes()
    crc = zlib.crc32(header + payload) & 0xFFFFFFFF
    return header + payload + _CRC.pack(crc)


def decode_archive(blob):
    """Inverse of :func:`encode_archive`. Returns ``(params, config)``.

    Raises:
        BadMagicError, UnsupportedVersionError, ChecksumError, CountMismatchError
    """
    if len(blob) < 4 or blob[:4] != MAGIC:
        raise BadMagicError("not a weight archive (bad magic bytes)")
    if len(blob) < _HEADER.size + _CRC.size:
        raise ChecksumError("archive truncated before end of header")
    magic, version, *vals = _HEADER.unpack_from(blob)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"archive version {version}, this reader supports {FORMAT_VERSION}")
    body, (crc,) = blob[:-_CRC.size], _CRC.unpack(blob[-_CRC.size:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise ChecksumError("archive CRC-32 mismatch")
    gating = {v: k for k, v in GATING_CODES.items()}
    heads = {v: k for k, v in HEAD_CODES.items()}
    try:
        config = fm.ModelConfig(
            lookback=vals[0], horizon=vals[1], channels=vals[2], branches=vals[3], period=vals[4],
            latent_width=vals[5], dtk_kernel=vals[6], slide_kernel=vals[7], gate_kernel=vals[8],
            pool_stride=vals[9], gating_mode=gating.get(vals[10], "?"), head_mode=heads.get(vals[11], "?"),
            dtk_enabled=bool(vals[12]))
    except ConfigError as exc:
        raise UnsupportedVersionError(f"archive header holds an invalid configuration: {exc}") from exc
    payload = body[_HEADER.size:]
    expected = fm.count_params(config)["total"]
    if len(payload) != 4 * expected:
        raise CountMismatchError(f"payload holds {len(payload) / 4:g} values, config implies {expected}")
    values = np.frombuffer(payload, dtype="<f4").astype(float)
    return fm.FeatherParams.from_flat(config, values), config


def export_weights(params, config, path):
    blob = encode_archive(params, config)
    with open(path, "wb") as fh:
        fh.write(blob)
    return len(blob)


def import_weights(path):
    with open(path, "rb") as fh:
        return decode_archive(fh.read())


def export_c_header(params, config, path, prefix="feather"):
    """Write the weights as ``static const float`` arrays plus config macros."""
    lines = ["/* generated weight tables; float32, row-major */", "#pragma once", ""]
    names = ("LOOKBACK", "HORIZON", "CHANNELS", "BRANCHES", "PERIOD", "LATENT", "DTK_KERNEL",
             "SLIDE_KERNEL", "GATE_KERNEL", "POOL_STRIDE", "GATING_MODE", "HEAD_MODE", "DTK_ENABLED")
    for n, v in zip(names, _header_fields(config)):
        lines.append(f"#define {prefix.upper()}_{n} {v}")
    lines.append("")
    for name, arr in params.items():
        vals = ", ".join(f"{v!r}f" for v in arr.astype(np.float32).ravel().tolist())
        dims = "".join(f"[{d}]" for d in arr.shape)
        lines.append(f"static const float {prefix}_{name}[{arr.size}] = {{{vals}}};  /* {dims} */")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# timing


@dataclass
class BenchResult:
    median_s: float
    p95_s: float
    repetitions: int
    macs: int

    @property
    def macs_per_second(self):
        return self.macs / self.median_s if self.median_s > 0 else float("inf")


def bench_inference(params, config, repetitions=100, warmup=10, seed=0):
    """Wall-clock statistics of batch-1 forward passes on a random window."""
    if repetitions < 30:
        raise ConfigError("repetitions must be at least 30")
    x = np.random.default_rng(seed).normal(size=(config.lookback, config.channels))
    for _ in range(warmup):
        fm.forward(x, params, config)
    times = np.empty(repetitions)
    for i in range(repetitions):
        t0 = time.perf_counter()
        fm.forward(x, params, config)
        times[i] = time.perf_counter() - t0
    return BenchResult(float(np.median(times)), float(np.percentile(times, 95)), repetitions,
                       fm.count_macs(config)["total"])
