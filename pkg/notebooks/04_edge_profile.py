"""Memory and latency budgets for microcontroller-sized targets.

Run from the repository root: ``python notebooks/04_edge_profile.py``.
"""

import tempfile
from pathlib import Path

from feather_ts import edge, model as fm

for name in ("ETTh1", "Weather"):
    cfg = fm.preset_config(name)
    report = edge.profile_memory(cfg)
    print(f"{name}: params {report.param_bytes} B, peak activations {report.peak_activation_bytes} B "
          f"at {report.peak_stage}, total {report.total_bytes} B")
    for budget, total, ok in report.rows():
        print(f"  {budget:6d} B budget -> {'fits' if ok else 'too large'}")

cfg = fm.preset_config("ETTh1")
params = fm.init_params(cfg, seed=0)
est = edge.estimate_peak_activations(cfg)
print("live buffers at peak:", ", ".join(sorted(est.live_at_peak)))

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "model.fthr"
    edge.export_weights(params, cfg, path)
    restored, cfg2 = edge.import_weights(path)
    # the payload is float32, so expect single-precision rounding only
    gap = max(abs(a - b).max() for (_, a), (_, b) in zip(restored.items(), params.items()))
    print(f"archive {path.stat().st_size} B, largest weight change {gap:.1e}")

bench = edge.bench_inference(params, cfg, repetitions=50)
print(f"batch-1 forward: median {bench.median_s * 1e3:.3f} ms, p95 {bench.p95_s * 1e3:.3f} ms, "
      f"{bench.macs} MACs")
