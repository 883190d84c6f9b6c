"""Command-line interface: ``feather {train,eval,predict,profile,export}``.

Exit codes: 0 success, 1 usage/configuration error, 2 data or archive
error, 3 numeric failure (divergence, NaN/Inf).
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import edge, evaluation, model as fm, training
from .errors import ArchiveError, ConfigError, DataError, NumericError, ShapeError

MODEL_KEYS = tuple(f.name for f in fields(fm.ModelConfig) if f.name != "seed")
TRAIN_KEYS = ("learning_rate", "weight_decay", "batch_size", "epochs", "patience")
RUN_KEYS = ("data", "out", "seeds", "dataset", "precision", "budgets", "overhead_bytes")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


@dataclass
class RunConfig:
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    data: str = None
    out: str = "runs"
    seeds: list = field(default_factory=lambda: [0])
    dataset: str = None
    precision: int = 32
    budgets: list = field(default_factory=lambda: list(edge.DEFAULT_BUDGETS))
    overhead_bytes: int = edge.DEFAULT_OVERHEAD_BYTES

    @classmethod
    def from_dict(cls, raw):
        unknown = sorted(set(raw) - set(MODEL_KEYS) - set(TRAIN_KEYS) - set(RUN_KEYS))
        if unknown:
            raise ConfigError(f"unknown configuration keys: {', '.join(unknown)}")
        run = cls(model={k: raw[k] for k in MODEL_KEYS if k in raw},
                  train={k: raw[k] for k in TRAIN_KEYS if k in raw},
                  **{k: raw[k] for k in RUN_KEYS if k in raw})
        run.validate()
        return run

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                raw = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"configuration file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: top level must be a JSON object")
        return cls.from_dict(raw)

    def validate(self):
        if not isinstance(self.seeds, list) or not self.seeds or not all(
                isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of non-negative integers")
        if self.precision not in (32, 64):
            raise ConfigError("precision must be 32 or 64")
        if not self.budgets or any(not isinstance(b, int) or b <= 0 for b in self.budgets):
            raise ConfigError("budgets must be positive integers")
        training.TrainConfig(**self.train)
        self.model_config(channels=self.model.get("channels", 1))

    def model_config(self, channels=None, seed=0):
        kw = dict(self.model)
        if channels is not None and "channels" not in kw:
            kw["channels"] = channels
        return fm.ModelConfig(seed=seed, **kw)

    def train_config(self, seed):
        return training.TrainConfig(seed=seed, **self.train)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    p = _Parser(prog="feather", description="Train, evaluate and profile the period-aware forecaster.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--data", help="CSV dataset or window")
        sp.add_argument("--out", help="output directory (or file for predict/export)")

    t = sub.add_parser("train", help="train one model per seed")
    common(t)
    t.add_argument("--seed", type=int, action="append", help="repeatable")
    t.add_argument("--horizon", type=int)
    t.add_argument("--epochs", type=int)

    e = sub.add_parser("eval", help="test-set metrics for a checkpoint")
    e.add_argument("checkpoint")
    common(e)
    e.add_argument("--horizon", type=int, action="append", help="repeatable")

    pr = sub.add_parser("predict", help="forecast from one L-row window")
    pr.add_argument("checkpoint")
    common(pr)

    f = sub.add_parser("profile", help="parameter, MAC and memory breakdown")
    f.add_argument("checkpoint", nargs="?")
    common(f)
    f.add_argument("--horizon", type=int)
    f.add_argument("--budget", type=int, action="append", help="bytes, repeatable")
    f.add_argument("--precision", type=int, choices=(32, 64))

    x = sub.add_parser("export", help="write checkpoint weights as a C header")
    x.add_argument("checkpoint")
    common(x)
    return p


# ---------------------------------------------------------------------------
# commands


def _run_config(args):
    run = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "data", None):
        run.data = args.data
    if getattr(args, "out", None):
        run.out = args.out
    if getattr(args, "seed", None):
        run.seeds = list(args.seed)
    h = getattr(args, "horizon", None)
    if isinstance(h, int):
        run.model["horizon"] = h
    if getattr(args, "epochs", None):
        run.train["epochs"] = args.epochs
    if getattr(args, "budget", None):
        run.budgets = list(args.budget)
    if getattr(args, "precision", None):
        run.precision = args.precision
    run.validate()
    return run


def _load_split(path):
    if not path:
        raise ConfigError("no dataset given (use --data or the 'data' config key)")
    if not os.path.exists(path):
        raise DataError(f"dataset not found: {path}")
    return training.split_and_normalize(training.load_csv(path))


def write_sidecar(path, model_config, train_config, dataset, selected_epoch):
    lines = [f"{k} = {v}" for k, v in vars(model_config).items()]
    lines += [f"{k} = {v}" for k, v in vars(train_config).items() if k != "seed"]
    lines += [f"dataset = {dataset}", f"selected_epoch = {selected_epoch}"]
    Path(path).write_text("\n".join(lines) + "\n")


def read_sidecar(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


def cmd_train(args):
    run = _run_config(args)
    split = _load_split(run.data)
    dataset = run.dataset or Path(run.data).stem
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    try:
        for seed in run.seeds:
            mc = run.model_config(channels=split.channels, seed=seed)
            tc = run.train_config(seed)
            params, report = training.train(mc, tc, split)
            stem = out / f"model_seed{seed}"
            for suffix in (".fthr", ".txt", ".csv"):
                written.append(stem.with_suffix(suffix))
            edge.export_weights(params, mc, stem.with_suffix(".fthr"))
            write_sidecar(stem.with_suffix(".txt"), mc, tc, dataset, report.selected_epoch)
            report.to_csv(stem.with_suffix(".csv"))
            best = report.val_mse[report.selected_epoch]
            print(f"seed {seed}: selected epoch {report.selected_epoch}, val MSE {best:.6f}")
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return EXIT_OK


def _checkpoint(path):
    if not os.path.exists(path):
        raise DataError(f"checkpoint not found: {path}")
    return edge.import_weights(path)


def cmd_eval(args):
    params, mc = _checkpoint(args.checkpoint)
    run = _run_config(argparse.Namespace(config=args.config, data=args.data, out=args.out))
    horizons = args.horizon or [mc.horizon]
    sidecar = Path(args.checkpoint).with_suffix(".txt")
    meta = read_sidecar(sidecar) if sidecar.exists() else {}
    split = _load_split(run.data)
    if split.channels != mc.channels:
        raise ConfigError(f"checkpoint expects {mc.channels} channels, dataset has {split.channels}")
    dataset = run.dataset or Path(run.data).stem
    rows = evaluation.evaluate(params, mc, split, horizons, dataset=dataset, seed=int(meta.get("seed", 0)))
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluation.rows_to_csv(rows, out_dir / f"{Path(args.checkpoint).stem}_metrics.csv")
    sys.stdout.write(evaluation.rows_to_table(rows))
    return EXIT_OK


def cmd_predict(args):
    params, mc = _checkpoint(args.checkpoint)
    if not args.data or not os.path.exists(args.data):
        raise DataError(f"input window not found: {args.data}")
    raw = training.load_csv(args.data)
    if raw.values.shape != (mc.lookback, mc.channels):
        raise ShapeError(
            f"input window must have exactly {mc.lookback} rows and {mc.channels} channels, "
            f"got {raw.values.shape[0]} rows and {raw.values.shape[1]} channels")
    forecast = fm.forward(raw.values, params, mc)
    lines = [",".join(raw.channel_names)]
    lines += [",".join(repr(float(v)) for v in row) for row in forecast]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def profile_rows(mc, run):
    counts = fm.count_params(mc)
    macs = fm.count_macs(mc)
    report = edge.profile_memory(mc, run.precision, run.budgets, run.overhead_bytes)
    rows = [("parameters", k, v) for k, v in counts.items()]
    rows += [("macs", k, v) for k, v in macs.items()]
    rows += [("memory", "param_bytes", report.param_bytes),
             ("memory", "peak_activation_bytes", report.peak_activation_bytes),
             ("memory", "runtime_overhead_bytes", report.runtime_overhead_bytes),
             ("memory", "total_bytes", report.total_bytes)]
    rows += [("verdict", str(b), "deployable" if ok else "not-deployable")
             for b, ok in sorted(report.verdicts.items())]
    return rows, report


def cmd_profile(args):
    run = _run_config(args)
    if args.checkpoint:
        _, mc = _checkpoint(args.checkpoint)
    else:
        mc = run.model_config()
    rows, report = profile_rows(mc, run)
    width = max(len(f"{s}.{k}") for s, k, _ in rows)
    for section, key, value in rows:
        label = "total parameters" if (section, key) == ("parameters", "total") else f"{section}.{key}"
        print(f"{label.ljust(width)}  {value}")
    print(f"peak stage: {report.peak_stage} ({run.precision}-bit)")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "profile.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["section", "key", "value"])
            w.writerows(rows)
    return EXIT_OK


def cmd_export(args):
    params, mc = _checkpoint(args.checkpoint)
    target = Path(args.out) if args.out else Path(args.checkpoint).with_suffix(".h")
    edge.export_c_header(params, mc, target)
    print(f"wrote {target}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "profile": cmd_profile, "export": cmd_export}


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError, ArchiveError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
