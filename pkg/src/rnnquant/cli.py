"""Command-line pipeline: train -> quantize -> retrain -> sensitivity -> eval,
plus capacity accounting.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric fault, 5 I/O.
Failures print one machine-parsable line: ``error: <category>: <message>``.
RNQ_THREADS caps worker parallelism for sensitivity sweeps.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import capacity_ratio, count_group_weights
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import (
    RunConfig,
    config_hash,
    emit_config,
    load_config,
    parse_bit_vector,
)
from .data import (
    load_char_corpus,
    load_frame_dataset,
    normalize_features,
    char_stream_source,
    frame_stream_source,
    synth_frame_task,
)
from .errors import (
    ArgumentError,
    CheckpointError,
    ConfigError,
    DataError,
    DegenerateWeightsError,
    IntegrityError,
    NumericFault,
    RnnQuantError,
    ShapeError,
)
from .network import NetworkParams, Topology, split_signal_specs
from .numerics import seeded_rng
from .quantizers import SignalQuantSpec
from .sensitivity import emit_report, full_signal_sweep, full_weight_sweep
from .training import (
    DualWeights,
    WindowSource,
    direct_quantize,
    evaluate_bpc,
    evaluate_fer,
    train,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_IO = 5


def worker_count() -> int:
    """Worker cap from RNQ_THREADS (default 1)."""
    try:
        return max(1, int(os.environ.get("RNQ_THREADS", "1")))
    except ValueError:
        return 1


class _Task:
    """Task-specific data plumbing shared by the subcommands."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        fractions = (cfg.train_fraction, cfg.valid_fraction, cfg.test_fraction)
        if cfg.task == "char-lm":
            if not cfg.data_path:
                raise DataError("char-lm needs data.path pointing at a text corpus")
            self.corpus = load_char_corpus(cfg.data_path, fractions)
            self.metric_name = "bpc"
        else:
            if cfg.data_path:
                ds = load_frame_dataset(cfg.data_path)
            else:
                ds = synth_frame_task(
                    cfg.synth_seed, classes=cfg.synth_classes,
                    feature_dim=cfg.synth_feature_dim,
                    n_sequences=cfg.synth_sequences,
                    splits=fractions,
                )
            self.dataset = ds if ds.feature_mean is not None else normalize_features(ds)
            self.metric_name = "fer"

    def topology(self) -> Topology:
        cfg = self.cfg
        if cfg.task == "char-lm":
            return Topology((256, *cfg.hidden_sizes, 256), "softmax")
        return Topology(
            (self.dataset.feature_dim, *cfg.hidden_sizes, self.dataset.n_classes),
            "softmax")

    def window_source(self) -> WindowSource:
        t = self.cfg.train
        if self.cfg.task == "char-lm":
            split = self.corpus.split("train")
            per_stream = (len(split) - 1) // t.streams
            return WindowSource(
                factory=lambda: char_stream_source(split, t.streams, t.forward_steps),
                windows_per_epoch=per_stream // t.forward_steps,
            )
        seqs = self.dataset.split("train")
        total = sum(len(l) for _, l in seqs)
        return WindowSource(
            factory=lambda: frame_stream_source(seqs, t.streams, t.forward_steps),
            windows_per_epoch=(total // t.streams) // t.forward_steps,
        )

    def metric(self, params: NetworkParams, split: str,
               signal_specs: dict = None) -> float:
        input_spec, layer_specs = split_signal_specs(
            self.topology(), signal_specs or {})
        if self.cfg.task == "char-lm":
            data = self.corpus.split(split)
            if len(data) < 2:
                raise DataError(f"{split} split is too small to evaluate")
            return evaluate_bpc(params, data, signal_specs=layer_specs,
                                input_spec=input_spec)
        seqs = self.dataset.split(split)
        if not seqs:
            raise DataError(f"{split} split holds no sequences")
        return evaluate_fer(params, seqs, signal_specs=layer_specs,
                            input_spec=input_spec)

    def valid_metric_fn(self, signal_specs: dict = None):
        return lambda params: self.metric(params, "valid", signal_specs)

    def signal_specs_from_bits(self, bits) -> dict:
        """Per-layer specs from the config/flag bit list."""
        if bits is None:
            return {}
        topo = self.topology()
        labels = topo.signal_layer_labels()
        if self.cfg.task == "char-lm":
            labels = labels[1:]  # one-hot input symbols are exact
        bits = list(bits)
        if len(bits) != len(labels):
            raise ConfigError(
                f"signal_bits needs {len(labels)} entries for {labels}, got {len(bits)}")
        specs = {}
        for label, b in zip(labels, bits):
            if label == "Input":
                specs[label] = SignalQuantSpec("linear", int(b),
                                               tuple(self.cfg.input_range))
            else:
                specs[label] = SignalQuantSpec("tanh", int(b))
        return specs


def _prepare_out(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved.cfg").write_text(emit_config(cfg))
    return out


def _merged_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "task", None):
        cfg.task = args.task
    if getattr(args, "data", None):
        cfg.data_path = str(args.data)
    if getattr(args, "out", None):
        cfg.output_dir = str(args.out)
    if getattr(args, "hidden_sizes", None):
        cfg.hidden_sizes = tuple(int(s) for s in args.hidden_sizes.split(","))
    if getattr(args, "weight_bits", None):
        cfg.weight_bits = parse_bit_vector(args.weight_bits)
    if getattr(args, "signal_bits", None):
        cfg.signal_bits = parse_bit_vector(args.signal_bits)
    if getattr(args, "seed", None) is not None:
        cfg.train = replace(cfg.train, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg.train = replace(cfg.train, max_epochs=args.epochs)
    return cfg.validate()


def _config_for_checkpoint(args, ckpt: Checkpoint) -> RunConfig:
    cfg = _merged_config(args)
    if ckpt.task and ckpt.task != cfg.task:
        cfg.task = ckpt.task
    cfg.hidden_sizes = tuple(ckpt.topology.hidden_sizes)
    return cfg.validate()


def cmd_train(args) -> int:
    cfg = _merged_config(args)
    task = _Task(cfg)
    out = _prepare_out(cfg)
    topo = task.topology()
    params = NetworkParams.initialize(topo, seeded_rng(cfg.train.seed))
    result = train(
        params, cfg.train, task.window_source(), task.valid_metric_fn(),
        log_path=out / "train_log.csv", config_hash=config_hash(cfg),
    )
    ckpt = Checkpoint(
        topology=topo, params=result.params, task=cfg.task,
        rng_seed=cfg.train.seed,
        log_tail=[row.as_csv() for row in result.log[-20:]],
    )
    save_checkpoint(ckpt, out / "float.rnq")
    status = "diverged; kept last good weights" if result.diverged else "ok"
    print(f"train {status}: best valid {task.metric_name} = {result.best_metric:.4f} "
          f"({result.epochs_run} epochs, checkpoint {out / 'float.rnq'})")
    return EXIT_NUMERIC if result.diverged else EXIT_OK


def cmd_quantize(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, ckpt)
    if cfg.weight_bits is None:
        raise ConfigError("quantize needs --weight-bits or [quantization] weight_bits")
    out = _prepare_out(cfg)
    dual, outcomes = direct_quantize(ckpt.params, list(cfg.weight_bits))
    labels = ckpt.topology.weight_group_labels()
    signal_specs = None
    if cfg.signal_bits is not None:
        signal_specs = _Task.signal_specs_from_bits(
            _DummyTask(cfg, ckpt.topology), cfg.signal_bits)
    report_path = out / "quant_report.csv"
    with open(report_path, "w", newline="") as fh:
        fh.write(f"# config_hash={config_hash(cfg)}\n")
        writer = csv.writer(fh)
        writer.writerow(["group", "bits", "levels", "step", "l2_error", "iterations"])
        for label, bits in zip(labels, cfg.weight_bits):
            oc = outcomes[label]
            writer.writerow([label, bits, oc.levels, repr(oc.step),
                             repr(oc.error), oc.iterations])
    quant_ckpt = Checkpoint(
        topology=ckpt.topology, params=dual.master,
        weight_specs=dual.specs, signal_specs=signal_specs,
        task=ckpt.task or cfg.task, rng_seed=ckpt.rng_seed,
    )
    save_checkpoint(quant_ckpt, out / "quantized.rnq")
    print(f"quantized {len(outcomes)} groups -> {out / 'quantized.rnq'}")
    for label, bits in zip(labels, cfg.weight_bits):
        oc = outcomes[label]
        print(f"  {label:>8}: {bits} bits, step={oc.step:.6g}, E={oc.error:.6g}")
    return EXIT_OK


class _DummyTask:
    """signal_specs_from_bits helper without loading any data."""

    def __init__(self, cfg: RunConfig, topology: Topology):
        self.cfg = cfg
        self._topology = topology

    def topology(self) -> Topology:
        return self._topology

    signal_specs_from_bits = _Task.signal_specs_from_bits


def cmd_retrain(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if not ckpt.is_quantized():
        raise CheckpointError("retrain needs a quantized (dual-weight) checkpoint")
    cfg = _config_for_checkpoint(args, ckpt)
    task = _Task(cfg)
    out = _prepare_out(cfg)
    dual = ckpt.dual()
    specs = ckpt.signal_specs or {}
    input_spec, layer_specs = split_signal_specs(ckpt.topology, specs)
    result = train(
        dual.master, cfg.train, task.window_source(),
        task.valid_metric_fn(specs), dual=dual,
        signal_specs=layer_specs, input_spec=input_spec,
        log_path=out / "retrain_log.csv", config_hash=config_hash(cfg),
    )
    retrained = Checkpoint(
        topology=ckpt.topology, params=result.dual.master,
        weight_specs=result.dual.specs, signal_specs=ckpt.signal_specs,
        task=ckpt.task or cfg.task, rng_seed=cfg.train.seed,
        log_tail=[row.as_csv() for row in result.log[-20:]],
    )
    save_checkpoint(retrained, out / "retrained.rnq")
    status = "diverged; kept last good weights" if result.diverged else "ok"
    print(f"retrain {status}: best valid {task.metric_name} = {result.best_metric:.4f} "
          f"-> {out / 'retrained.rnq'}")
    return EXIT_NUMERIC if result.diverged else EXIT_OK


def cmd_eval(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, ckpt)
    task = _Task(cfg)
    out = _prepare_out(cfg)
    params = ckpt.dual().shadow if ckpt.is_quantized() else ckpt.params
    metric = task.metric(params, args.split, ckpt.signal_specs)
    print(f"{task.metric_name} ({args.split}) = {metric:.4f}")
    log_path = out / "eval_log.csv"
    new = not log_path.exists()
    with open(log_path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(["checkpoint", "task", "split", "metric",
                             "value", "config_hash"])
        writer.writerow([str(args.checkpoint), cfg.task, args.split,
                         task.metric_name, repr(metric), config_hash(cfg)])
    return EXIT_OK


def cmd_sensitivity(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    cfg = _config_for_checkpoint(args, ckpt)
    task = _Task(cfg)
    out = _prepare_out(cfg)
    bits = [int(b) for b in args.bits.split(",")]
    groups = args.groups.split(",") if args.groups else None
    workers = worker_count()
    if args.axis == "weights":
        retrain_fn = None
        if args.mode == "retrain":
            budget = max(1, round(cfg.train.max_epochs * cfg.retrain_epoch_fraction))
            rcfg = replace(cfg.train, max_epochs=budget)

            def retrain_fn(dual: DualWeights) -> NetworkParams:
                res = train(dual.master, rcfg, task.window_source(),
                            task.valid_metric_fn(), dual=dual)
                return res.dual.shadow

        report = full_weight_sweep(
            ckpt.params, bits, lambda p: task.metric(p, args.split),
            mode=args.mode, retrain_fn=retrain_fn, groups=groups,
            max_workers=workers)
        base = out / "sensitivity_weights"
    else:
        def eval_fn(params, layer_specs, input_spec):
            if cfg.task == "char-lm":
                return evaluate_bpc(params, task.corpus.split(args.split),
                                    signal_specs=layer_specs, input_spec=input_spec)
            return evaluate_fer(params, task.dataset.split(args.split),
                                signal_specs=layer_specs, input_spec=input_spec)

        layers = groups
        if layers and cfg.task == "char-lm" and "Input" in layers:
            raise ConfigError("char-lm input symbols are exact; no Input signal sweep")
        if layers is None and cfg.task == "char-lm":
            layers = task.topology().signal_layer_labels()[1:]
        report = full_signal_sweep(
            ckpt.params, bits, eval_fn, layers=layers,
            input_range=cfg.input_range, max_workers=workers)
        base = out / "sensitivity_signals"
    csv_path, dat_path = emit_report(report, base, config_hash=config_hash(cfg))
    print(f"sensitivity sweep: {len(report.entries)} entries -> {csv_path}, {dat_path}")
    for entry in report.sorted_entries():
        print(f"  {entry.label:>8} @ {entry.bits:2d} bits: "
              f"{task.metric_name} = {entry.metric:.4f} ({entry.mode})")
    print(f"  float baseline: {report.float_baselines.get('float', float('nan')):.4f}")
    return EXIT_OK


def cmd_capacity(args) -> int:
    sizes = [int(s) for s in args.layer_sizes.replace("x", ",").split(",")]
    counts = count_group_weights(sizes)
    total = sum(counts.values())
    print(f"{'group':>8} {'weights':>12} {'bits':>5}")
    bits = None
    if args.weight_bits:
        bits = list(parse_bit_vector(args.weight_bits))
        if len(bits) != len(counts):
            raise ConfigError(
                f"expected {len(counts)} per-group bit-widths, got {len(bits)}")
    for i, (label, count) in enumerate(counts.items()):
        b = str(bits[i]) if bits else "-"
        print(f"{label:>8} {count:>12,} {b:>5}")
    print(f"{'total':>8} {total:>12,}")
    if bits:
        pct = capacity_ratio(list(counts.values()), bits, args.baseline_bits)
        print(f"capacity = {pct:.2f}% of the {args.baseline_bits}-bit baseline")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rnnquant",
        description="Fixed-point word-length optimization for LSTM networks.")
    parser.add_argument("--version", action="version", version=f"rnnquant {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, checkpoint=False):
        p.add_argument("--config", help="configuration file")
        p.add_argument("--data", help="override data path")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--task", choices=("char-lm", "frame-classify"))
        p.add_argument("--seed", type=int, help="override training seed")
        p.add_argument("--epochs", type=int, help="override max epochs")
        p.add_argument("--hidden-sizes", help="comma-separated LSTM sizes")
        if checkpoint:
            p.add_argument("--checkpoint", required=True, help="input checkpoint")

    p = sub.add_parser("train", help="floating-point training")
    common(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("quantize", help="direct quantization of a float checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--weight-bits", help="per-group bits, dash notation (3-2-2-2-2-2-2)")
    p.add_argument("--signal-bits", help="per-layer signal bits, dash notation")
    p.set_defaults(fn=cmd_quantize)

    p = sub.add_parser("retrain", help="quantization-aware retraining")
    common(p, checkpoint=True)
    p.set_defaults(fn=cmd_retrain)

    p = sub.add_parser("sensitivity", help="layerwise bit-width sweeps")
    common(p, checkpoint=True)
    p.add_argument("--axis", choices=("weights", "signals"), default="weights")
    p.add_argument("--bits", default="2,3,4,8,16", help="comma-separated bit list")
    p.add_argument("--groups", help="comma-separated subset of groups/layers")
    p.add_argument("--mode", choices=("direct", "retrain"), default="direct")
    p.add_argument("--split", default="valid", choices=("train", "valid", "test"))
    p.set_defaults(fn=cmd_sensitivity)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    common(p, checkpoint=True)
    p.add_argument("--split", default="test", choices=("train", "valid", "test"))
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("capacity", help="weight counts and capacity ratio")
    p.add_argument("--layer-sizes", required=True,
                   help="comma-separated sizes: input,hidden...,output")
    p.add_argument("--weight-bits", help="per-group bits, dash notation")
    p.add_argument("--baseline-bits", type=int, default=32)
    p.set_defaults(fn=cmd_capacity)
    return parser


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ArgumentError, ShapeError) as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericFault, DegenerateWeightsError, IntegrityError) as exc:
        print(f"error: numeric: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, OSError) as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return EXIT_IO
    except RnnQuantError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
