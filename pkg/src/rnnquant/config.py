"""Run configuration: a small sectioned key = value format.

Grammar: ``[section]`` headers, ``key = value`` pairs, ``#`` comments
(full-line or trailing), blank lines ignored. Unknown sections or keys
fail with the nearest valid name; type errors carry the line number.
An empty document resolves to all defaults. emit_config renders a
resolved document that parses back to an equal RunConfig.
"""

from __future__ import annotations

import difflib
import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig

TASKS = ("char-lm", "frame-classify")


@dataclass
class RunConfig:
    """Everything a pipeline run needs, with desk-scale defaults."""

    task: str = "char-lm"
    output_dir: str = "runs/out"
    data_path: str = ""
    train_fraction: float = 0.9
    valid_fraction: float = 0.05
    test_fraction: float = 0.05
    synth_seed: int = 1234
    synth_classes: int = 10
    synth_feature_dim: int = 24
    synth_sequences: int = 120
    hidden_sizes: tuple = (64, 64)
    weight_bits: tuple = None
    signal_bits: tuple = None
    input_range: tuple = (-3.0, 3.0)
    retrain_epoch_fraction: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)

    @property
    def n_weight_groups(self) -> int:
        return 2 * len(self.hidden_sizes) + 1

    @property
    def n_signal_layers(self) -> int:
        # char-lm inputs are exact one-hot symbols, so only hidden layers
        # carry a signal quantizer; the frame task also quantizes Input
        k = len(self.hidden_sizes)
        return k if self.task == "char-lm" else k + 1

    def validate(self) -> "RunConfig":
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if not self.hidden_sizes or any(h < 1 for h in self.hidden_sizes):
            raise ConfigError(f"invalid hidden_sizes {self.hidden_sizes}")
        total = self.train_fraction + self.valid_fraction + self.test_fraction
        if self.train_fraction <= 0 or total > 1 + 1e-9:
            raise ConfigError("split fractions must be positive and sum to at most 1")
        if self.weight_bits is not None and len(self.weight_bits) != self.n_weight_groups:
            raise ConfigError(
                f"weight_bits needs {self.n_weight_groups} entries for "
                f"{len(self.hidden_sizes)} hidden layers, got {len(self.weight_bits)}")
        if self.signal_bits is not None and len(self.signal_bits) != self.n_signal_layers:
            raise ConfigError(
                f"signal_bits needs {self.n_signal_layers} entries for task "
                f"{self.task}, got {len(self.signal_bits)}")
        if not (0.0 < self.retrain_epoch_fraction <= 1.0):
            raise ConfigError("retrain_epoch_fraction must be in (0, 1]")
        return self


def parse_bit_vector(text: str):
    """Dash-notation bit vectors like '3-2-2-2-2-2-2' (commas also accepted)."""
    parts = text.replace(",", "-").split("-")
    try:
        return tuple(int(p) for p in parts if p != "")
    except ValueError as exc:
        raise ConfigError(f"invalid bit vector {text!r}") from exc


def _parse_int(v):
    return int(v, 0)


def _parse_float(v):
    return float(v)


def _parse_bool(v):
    low = v.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_str(v):
    return v.strip()


def _parse_int_tuple(v):
    return tuple(int(p) for p in v.replace(",", " ").replace("x", " ").split())


def _parse_float_pair(v):
    parts = [float(p) for p in v.replace(",", " ").split()]
    if len(parts) != 2:
        raise ValueError("expected two numbers")
    return tuple(parts)


def _parse_bits(v):
    if v.strip().lower() in ("", "none"):
        return None
    return parse_bit_vector(v)


def _fmt_plain(v):
    return repr(v) if isinstance(v, float) else str(v)


def _fmt_tuple(v):
    return " ".join(str(x) for x in v)


def _fmt_bits(v):
    return "none" if v is None else "-".join(str(b) for b in v)


def _fmt_pair(v):
    return f"{v[0]!r} {v[1]!r}"


# (section, key) -> (attribute path, parser, formatter, human type name)
_SCHEMA = {
    ("run", "task"): ("task", _parse_str, _fmt_plain, "task name"),
    ("run", "output_dir"): ("output_dir", _parse_str, _fmt_plain, "path"),
    ("data", "path"): ("data_path", _parse_str, _fmt_plain, "path"),
    ("data", "train_fraction"): ("train_fraction", _parse_float, _fmt_plain, "number"),
    ("data", "valid_fraction"): ("valid_fraction", _parse_float, _fmt_plain, "number"),
    ("data", "test_fraction"): ("test_fraction", _parse_float, _fmt_plain, "number"),
    ("data", "synth_seed"): ("synth_seed", _parse_int, _fmt_plain, "integer"),
    ("data", "synth_classes"): ("synth_classes", _parse_int, _fmt_plain, "integer"),
    ("data", "synth_feature_dim"): ("synth_feature_dim", _parse_int, _fmt_plain, "integer"),
    ("data", "synth_sequences"): ("synth_sequences", _parse_int, _fmt_plain, "integer"),
    ("topology", "hidden_sizes"): ("hidden_sizes", _parse_int_tuple, _fmt_tuple, "integer list"),
    ("quantization", "weight_bits"): ("weight_bits", _parse_bits, _fmt_bits, "bit vector"),
    ("quantization", "signal_bits"): ("signal_bits", _parse_bits, _fmt_bits, "bit vector"),
    ("quantization", "input_range"): ("input_range", _parse_float_pair, _fmt_pair, "two numbers"),
    ("quantization", "retrain_epoch_fraction"):
        ("retrain_epoch_fraction", _parse_float, _fmt_plain, "number"),
}

_TRAIN_PARSERS = {
    int: (_parse_int, "integer"),
    float: (_parse_float, "number"),
    bool: (_parse_bool, "boolean"),
}
for _f in fields(TrainConfig):
    _parser, _tname = _TRAIN_PARSERS[type(getattr(TrainConfig(), _f.name))]
    _SCHEMA[("train", _f.name)] = (f"train.{_f.name}", _parser, _fmt_plain, _tname)

_SECTIONS = sorted({section for section, _ in _SCHEMA})


def _suggest(name: str, candidates) -> str:
    close = difflib.get_close_matches(name, list(candidates), n=1)
    return f"; nearest valid key is {close[0]!r}" if close else ""


def _scan(text: str):
    """Yield (section, key, value, lineno) triples with comments stripped."""
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SECTIONS:
                raise ConfigError(
                    f"line {lineno}: unknown section [{section}]"
                    f"{_suggest(section, _SECTIONS)}")
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any [section]")
        key, _, value = line.partition("=")
        yield section, key.strip(), value.strip(), lineno


def parse_config(text: str) -> RunConfig:
    """Parse and fully validate a configuration document."""
    cfg = RunConfig()
    seen = set()
    for section, key, value, lineno in _scan(text):
        if (section, key) not in _SCHEMA:
            section_keys = [k for s, k in _SCHEMA if s == section]
            raise ConfigError(
                f"line {lineno}: unknown key {key!r} in section [{section}]"
                f"{_suggest(key, section_keys)}")
        if (section, key) in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in [{section}]")
        seen.add((section, key))
        attr, parser, _, tname = _SCHEMA[(section, key)]
        try:
            parsed = parser(value)
        except (ValueError, ConfigError) as exc:
            raise ConfigError(
                f"line {lineno}: key {key!r} expects a {tname}, got {value!r}") from exc
        if attr.startswith("train."):
            setattr(cfg.train, attr.split(".", 1)[1], parsed)
        else:
            setattr(cfg, attr, parsed)
    try:
        cfg.train = TrainConfig(**{f.name: getattr(cfg.train, f.name)
                                   for f in fields(TrainConfig)})
    except Exception as exc:
        raise ConfigError(f"invalid [train] settings: {exc}") from exc
    return cfg.validate()


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text)


def emit_config(cfg: RunConfig) -> str:
    """Render a resolved document; parse_config(emit_config(c)) == c."""
    lines = ["# resolved rnnquant configuration"]
    for section in _SECTIONS:
        lines.append(f"[{section}]")
        for (sec, key), (attr, _, fmt, _t) in _SCHEMA.items():
            if sec != section:
                continue
            if attr.startswith("train."):
                value = getattr(cfg.train, attr.split(".", 1)[1])
            else:
                value = getattr(cfg, attr)
            lines.append(f"{key} = {fmt(value)}")
        lines.append("")
    return "\n".join(lines)


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the resolved configuration."""
    return hashlib.sha256(emit_config(cfg).encode()).hexdigest()[:12]
