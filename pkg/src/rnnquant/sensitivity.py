"""Layerwise quantization sensitivity sweeps.

One weight group (or one signal layer) is quantized at a time while
everything else stays floating point, the network is evaluated per
bit-width, and the grid of results is written as CSV plus a
gnuplot-friendly data file. Entries are keyed, so parallel cell
evaluation cannot change the report.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DataError
from .network import NetworkParams, quantize_params, split_signal_specs
from .quantizers import SignalQuantSpec, WeightQuantSpec, bits_to_levels, optimize_step_size
from .training import DualWeights

BASELINE_BITS = 0  # sentinel bit-width marking a floating-point baseline row

WEIGHT_AXIS = "weight-group"
SIGNAL_AXIS = "signal-layer"


@dataclass(frozen=True)
class SweepEntry:
    label: str
    bits: int
    metric: float
    mode: str  # direct | retrain | float


@dataclass
class SensitivityReport:
    axis: str
    entries: list = field(default_factory=list)
    float_baselines: dict = field(default_factory=dict)

    def add(self, entry: SweepEntry) -> None:
        for have in self.entries:
            if (have.label, have.bits, have.mode) == (entry.label, entry.bits, entry.mode):
                raise ArgumentError(
                    f"duplicate sweep cell ({entry.label}, {entry.bits}, {entry.mode})")
        self.entries.append(entry)

    def sorted_entries(self) -> list:
        return sorted(self.entries, key=lambda e: (e.label, e.bits, e.mode))


def quantize_single_group(params: NetworkParams, group: str, bits: int) -> NetworkParams:
    """Copy of params with only one group quantized (optimal step)."""
    values = params.group_values(group)  # validates the label
    outcome = optimize_step_size(values, bits_to_levels(int(bits)))
    spec = WeightQuantSpec(levels=outcome.levels, step=outcome.step)
    return quantize_params(params, {group: spec})


def weight_group_sweep(params: NetworkParams, group: str, bits_list, evaluate_fn,
                       mode: str = "direct", retrain_fn=None,
                       max_workers: int = 1) -> list:
    """Evaluate one weight group across bit-widths.

    evaluate_fn(candidate_params) -> metric. In retrain mode, retrain_fn
    receives a DualWeights pair (only the swept group quantized) and must
    return the retrained quantized network to evaluate.
    """
    labels = params.topology.weight_group_labels()
    if group not in labels:
        raise ArgumentError(f"unknown weight group {group!r}, expected one of {labels}")
    bits_list = [int(b) for b in bits_list]
    if any(b < 2 for b in bits_list):
        raise ArgumentError("weight bit-widths must be >= 2")
    if mode not in ("direct", "retrain"):
        raise ArgumentError(f"unknown sweep mode {mode!r}")
    if mode == "retrain" and retrain_fn is None:
        raise ArgumentError("retrain mode needs a retrain_fn")

    def cell(bits: int) -> SweepEntry:
        if mode == "direct":
            candidate = quantize_single_group(params, group, bits)
        else:
            values = params.group_values(group)
            outcome = optimize_step_size(values, bits_to_levels(bits))
            specs = {lab: None for lab in labels}
            specs[group] = WeightQuantSpec(levels=outcome.levels, step=outcome.step)
            dual = DualWeights.from_master(params.copy(), specs)
            candidate = retrain_fn(dual)
        return SweepEntry(group, bits, float(evaluate_fn(candidate)), mode)

    return _run_cells(cell, bits_list, max_workers if mode == "direct" else 1)


def signal_layer_sweep(params: NetworkParams, layer: str, bits_list, evaluate_fn,
                       input_range=(-3.0, 3.0), max_workers: int = 1) -> list:
    """Evaluate one signal layer across bit-widths; all weights stay float.

    evaluate_fn(params, signal_specs, input_spec) -> metric, where the
    spec arguments are shaped for network.forward.
    """
    topo = params.topology
    labels = topo.signal_layer_labels()
    if layer not in labels:
        raise ArgumentError(f"unknown signal layer {layer!r}, expected one of {labels}")
    bits_list = [int(b) for b in bits_list]

    def cell(bits: int) -> SweepEntry:
        kind = "linear" if layer == "Input" else "tanh"
        rng = tuple(input_range) if kind == "linear" else None
        spec = SignalQuantSpec(kind, bits, rng)
        input_spec, layer_specs = split_signal_specs(topo, {layer: spec})
        return SweepEntry(layer, bits, float(evaluate_fn(params, layer_specs, input_spec)),
                          "direct")

    return _run_cells(cell, bits_list, max_workers)


def _run_cells(cell, bits_list, max_workers: int) -> list:
    if max_workers > 1 and len(bits_list) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            entries = list(pool.map(cell, bits_list))
    else:
        entries = [cell(b) for b in bits_list]
    return sorted(entries, key=lambda e: e.bits)


def full_weight_sweep(params: NetworkParams, bits_list, evaluate_fn,
                      mode: str = "direct", retrain_fn=None, groups=None,
                      float_baseline: float = None,
                      max_workers: int = 1) -> SensitivityReport:
    """Sweep every (or a chosen subset of) weight group(s) over bit-widths."""
    all_labels = params.topology.weight_group_labels()
    groups = list(groups) if groups else all_labels
    report = SensitivityReport(axis=WEIGHT_AXIS)
    if float_baseline is None:
        float_baseline = float(evaluate_fn(params))
    report.float_baselines["float"] = float(float_baseline)
    for group in groups:
        for entry in weight_group_sweep(params, group, bits_list, evaluate_fn,
                                        mode=mode, retrain_fn=retrain_fn,
                                        max_workers=max_workers):
            report.add(entry)
    return report


def full_signal_sweep(params: NetworkParams, bits_list, evaluate_fn,
                      layers=None, input_range=(-3.0, 3.0),
                      float_baseline: float = None,
                      max_workers: int = 1) -> SensitivityReport:
    """Sweep every (or a chosen subset of) signal layer(s) over bit-widths."""
    all_labels = params.topology.signal_layer_labels()
    layers = list(layers) if layers else all_labels
    report = SensitivityReport(axis=SIGNAL_AXIS)
    if float_baseline is None:
        float_baseline = float(evaluate_fn(params, None, None))
    report.float_baselines["float"] = float(float_baseline)
    for layer in layers:
        for entry in signal_layer_sweep(params, layer, bits_list, evaluate_fn,
                                        input_range=input_range,
                                        max_workers=max_workers):
            report.add(entry)
    return report


def emit_report(report: SensitivityReport, base_path, config_hash: str = None):
    """Write <base>.csv and <base>.dat; returns both paths.

    Baseline rows use the sentinel bit-width 0 with mode 'float'.
    """
    if not report.entries and not report.float_baselines:
        raise ArgumentError("refusing to emit an empty report")
    base = Path(base_path)
    base.parent.mkdir(parents=True, exist_ok=True)
    csv_path = base.with_suffix(".csv")
    dat_path = base.with_suffix(".dat")
    rows = [(e.label, e.bits, e.metric, e.mode) for e in report.sorted_entries()]
    rows += [(label, BASELINE_BITS, metric, "float")
             for label, metric in sorted(report.float_baselines.items())]
    try:
        with open(csv_path, "w", newline="") as fh:
            fh.write(f"# axis={report.axis}\n")
            if config_hash:
                fh.write(f"# config_hash={config_hash}\n")
            writer = csv.writer(fh)
            writer.writerow(["label", "bits", "metric", "mode"])
            for label, bits, metric, mode in rows:
                writer.writerow([label, bits, repr(float(metric)), mode])
        with open(dat_path, "w") as fh:
            fh.write(f"# axis={report.axis}\n")
            fh.write("# label bits metric mode (bits=0 marks float baselines)\n")
            for label, bits, metric, mode in rows:
                fh.write(f"{label} {bits} {float(metric)!r} {mode}\n")
    except OSError as exc:
        raise DataError(f"cannot write report to {base}: {exc}") from exc
    return csv_path, dat_path


def parse_report(csv_path) -> SensitivityReport:
    """Inverse of emit_report for the CSV file."""
    path = Path(csv_path)
    axis = WEIGHT_AXIS
    report = None
    try:
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read report {path}: {exc}") from exc
    body = []
    for line in lines:
        if line.startswith("# axis="):
            axis = line.split("=", 1)[1].strip()
        elif not line.startswith("#") and line.strip():
            body.append(line)
    report = SensitivityReport(axis=axis)
    for rec in csv.reader(body):
        if rec == ["label", "bits", "metric", "mode"]:
            continue
        label, bits, metric, mode = rec[0], int(rec[1]), float(rec[2]), rec[3]
        if bits == BASELINE_BITS:
            report.float_baselines[label] = metric
        else:
            report.add(SweepEntry(label, bits, metric, mode))
    return report
