"""Versioned binary checkpoints.

Byte layout (little-endian):

    offset 0   magic 'RNQ1'
    offset 4   u32 format version
    offset 8   u64 descriptor length in bytes
    offset 16  descriptor: UTF-8 JSON (topology, array manifest, quant
               specs, optimizer hyper-parameters, RNG id + seed, task,
               training-log tail)
    ...        zero padding to the next 8-byte boundary
    ...        float64 arrays back to back, in manifest order
    last 8     blake2b-64 checksum of every preceding byte

The loader checks magic and version before touching the payload, then
verifies the checksum, then parses. Quantized shadows are not stored:
they are recomputed as Q(master) from the saved specs, which restores
them exactly.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .network import LstmLayerParams, NetworkParams, Topology
from .numerics import RNG_ALGORITHM
from .quantizers import SignalQuantSpec, WeightQuantSpec
from .training import DualWeights

MAGIC = b"RNQ1"
VERSION = 1


@dataclass
class Checkpoint:
    """In-memory view of a saved training state."""

    topology: Topology
    params: NetworkParams                 # floating-point master weights
    weight_specs: dict = None             # group label -> WeightQuantSpec | None
    signal_specs: dict = None             # layer label -> SignalQuantSpec | None
    optimizer_hyper: dict = None
    optimizer_state: dict = None          # name -> {sq_grad, sq_delta, velocity}
    rng_algorithm: str = RNG_ALGORITHM
    rng_seed: int = 0
    task: str = ""
    log_tail: list = field(default_factory=list)
    version: int = VERSION

    def dual(self) -> DualWeights:
        """Dual pair with the shadow recomputed under the stored specs."""
        if not self.weight_specs:
            raise CheckpointError("checkpoint carries no weight quantization specs")
        return DualWeights.from_master(self.params.copy(), dict(self.weight_specs))

    def is_quantized(self) -> bool:
        return bool(self.weight_specs) and any(
            s is not None for s in self.weight_specs.values())


def _weight_spec_json(specs: dict) -> dict:
    out = {}
    for label, spec in (specs or {}).items():
        out[label] = None if spec is None else {
            "levels": spec.levels, "step": spec.step, "bits": spec.bits}
    return out


def _weight_spec_load(doc: dict) -> dict:
    out = {}
    for label, spec in (doc or {}).items():
        out[label] = None if spec is None else WeightQuantSpec(
            levels=int(spec["levels"]), step=float(spec["step"]))
    return out


def _signal_spec_json(specs: dict) -> dict:
    out = {}
    for label, spec in (specs or {}).items():
        out[label] = None if spec is None else {
            "kind": spec.kind, "bits": spec.bits, "range": list(spec.value_range)}
    return out


def _signal_spec_load(doc: dict) -> dict:
    out = {}
    for label, spec in (doc or {}).items():
        out[label] = None if spec is None else SignalQuantSpec(
            kind=spec["kind"], bits=int(spec["bits"]),
            value_range=tuple(spec["range"]))
    return out


def _collect_arrays(ckpt: Checkpoint) -> list:
    arrays = [(f"master.{name}", arr) for name, arr in ckpt.params.named_arrays()]
    if ckpt.optimizer_state:
        for name in sorted(ckpt.optimizer_state):
            slot = ckpt.optimizer_state[name]
            for part in ("sq_grad", "sq_delta", "velocity"):
                arrays.append((f"optim.{name}.{part}", slot[part]))
    return arrays


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    arrays = _collect_arrays(ckpt)
    descriptor = {
        "format": "rnnquant-checkpoint",
        "version": VERSION,
        "task": ckpt.task,
        "topology": {
            "layer_sizes": list(ckpt.topology.layer_sizes),
            "output_kind": ckpt.topology.output_kind,
        },
        "gate_order": ["input", "forget", "cell", "output"],
        "rng": {"algorithm": ckpt.rng_algorithm, "seed": int(ckpt.rng_seed)},
        "weight_quant": _weight_spec_json(ckpt.weight_specs),
        "signal_quant": _signal_spec_json(ckpt.signal_specs),
        "optimizer": ckpt.optimizer_hyper or None,
        "log_tail": ckpt.log_tail[-20:],
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays],
    }
    desc = json.dumps(descriptor, sort_keys=True).encode("utf-8")
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    blob += struct.pack("<Q", len(desc))
    blob += desc
    blob += b"\0" * (-len(blob) % 8)
    for _, arr in arrays:
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += hashlib.blake2b(bytes(blob), digest_size=8).digest()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> Checkpoint:
    p = Path(path)
    try:
        blob = p.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {p}: {exc}") from exc
    if len(blob) < 24 or blob[:4] != MAGIC:
        raise CheckpointError(f"{p} is not an RNQ1 checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version > VERSION:
        raise CheckpointError(
            f"checkpoint version {version} is newer than supported {VERSION}")
    digest = hashlib.blake2b(blob[:-8], digest_size=8).digest()
    if digest != blob[-8:]:
        raise CheckpointError(f"{p} failed its checksum; file is corrupt or truncated")
    (desc_len,) = struct.unpack_from("<Q", blob, 8)
    desc_end = 16 + desc_len
    try:
        descriptor = json.loads(blob[16:desc_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{p} has an unreadable descriptor: {exc}") from exc
    offset = desc_end + (-desc_end % 8)

    values = {}
    for entry in descriptor["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
        values[entry["name"]] = arr.reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(blob) - 8:
        raise CheckpointError(f"{p} payload size disagrees with its manifest")

    topo = Topology(tuple(descriptor["topology"]["layer_sizes"]),
                    descriptor["topology"]["output_kind"])
    layers = []
    for i in range(1, topo.n_hidden + 1):
        layers.append(LstmLayerParams(
            values[f"master.L{i}.w_x"], values[f"master.L{i}.w_h"],
            values[f"master.L{i}.b"]))
    params = NetworkParams(topo, layers, values["master.out.w"], values["master.out.b"])

    opt_state = None
    opt_names = sorted({name[len("optim."):].rsplit(".", 1)[0]
                        for name in values if name.startswith("optim.")})
    if opt_names:
        opt_state = {
            name: {part: values[f"optim.{name}.{part}"]
                   for part in ("sq_grad", "sq_delta", "velocity")}
            for name in opt_names
        }
    return Checkpoint(
        topology=topo,
        params=params,
        weight_specs=_weight_spec_load(descriptor.get("weight_quant")) or None,
        signal_specs=_signal_spec_load(descriptor.get("signal_quant")) or None,
        optimizer_hyper=descriptor.get("optimizer"),
        optimizer_state=opt_state,
        rng_algorithm=descriptor["rng"]["algorithm"],
        rng_seed=int(descriptor["rng"]["seed"]),
        task=descriptor.get("task", ""),
        log_tail=descriptor.get("log_tail", []),
        version=version,
    )
