"""
checkpoint.py

Binary checkpoint container (little-endian):

    8 bytes   magic  b"DLGNCKPT"
    uint32    format version
    uint32    header length H
    H bytes   UTF-8 JSON header: run config, network config, seed, iteration,
              RNG stream states, Adam scalars, metrics rows, tensor directory
    ...       tensor payload, each tensor at its directory offset

Tensors: params_l{i}, adam_m_l{i}, adam_v_l{i} ('<f4') and wiring_l{i} ('<i8').
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from file_utils import atomic_write_bytes
from optim import AdamState

logger = logging.getLogger(__name__)

MAGIC = b"DLGNCKPT"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sII")


class CheckpointError(ValueError):
    """Unreadable checkpoint: bad magic, unsupported version or truncated payload."""


@dataclass
class Checkpoint:
    run_config: Dict
    network_config: Dict
    seed: int
    iteration: int
    params: List[np.ndarray]
    wiring: List[np.ndarray]
    adam: AdamState
    rng_states: Dict[str, Dict] = field(default_factory=dict)
    metrics_rows: List[Dict] = field(default_factory=list)
    dataset: Dict = field(default_factory=dict)


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def generator_state(rng: np.random.Generator) -> Dict:
    return _jsonable(rng.bit_generator.state)


def restore_generator(state: Dict) -> np.random.Generator:
    """Rebuild a Generator from a saved bit-generator state."""
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    tensors = []
    for layer, p in enumerate(ckpt.params):
        tensors.append((f"params_l{layer}", p, "<f4"))
    for layer, m in enumerate(ckpt.adam.m):
        tensors.append((f"adam_m_l{layer}", m, "<f4"))
    for layer, v in enumerate(ckpt.adam.v):
        tensors.append((f"adam_v_l{layer}", v, "<f4"))
    for layer, w in enumerate(ckpt.wiring):
        tensors.append((f"wiring_l{layer}", w, "<i8"))

    directory = []
    blobs = []
    offset = 0
    for name, array, dtype in tensors:
        blob = np.ascontiguousarray(array, dtype=dtype).tobytes()
        directory.append({"name": name, "dtype": dtype, "shape": list(array.shape),
                          "offset": offset, "nbytes": len(blob)})
        blobs.append(blob)
        offset += len(blob)

    header = {
        "run_config": ckpt.run_config,
        "network_config": ckpt.network_config,
        "seed": ckpt.seed,
        "iteration": ckpt.iteration,
        "rng_states": ckpt.rng_states,
        "adam": ckpt.adam.scalars(),
        "metrics_rows": ckpt.metrics_rows,
        "dataset": ckpt.dataset,
        "depth": len(ckpt.params),
        "tensors": directory,
    }
    header_bytes = json.dumps(_jsonable(header), sort_keys=True).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(header_bytes)) + header_bytes + b"".join(blobs)


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> Checkpoint:
    if len(data) < _PREAMBLE.size:
        raise CheckpointError(f"{source}: file too short for a checkpoint")
    magic, version, header_len = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}, not a DLGN checkpoint")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{source}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")

    body_start = _PREAMBLE.size + header_len
    if len(data) < body_start:
        raise CheckpointError(f"{source}: truncated header")
    try:
        header = json.loads(data[_PREAMBLE.size:body_start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{source}: corrupt header ({e})")

    arrays = {}
    for entry in header["tensors"]:
        start = body_start + entry["offset"]
        end = start + entry["nbytes"]
        if end > len(data):
            raise CheckpointError(f"{source}: truncated tensor {entry['name']}")
        dtype = np.dtype(entry["dtype"])
        native = np.float32 if dtype.kind == "f" else np.int64
        arrays[entry["name"]] = np.frombuffer(data[start:end], dtype=dtype).reshape(entry["shape"]).astype(native)

    depth = header["depth"]
    scalars = header["adam"]
    adam = AdamState(
        m=[arrays[f"adam_m_l{i}"] for i in range(depth)],
        v=[arrays[f"adam_v_l{i}"] for i in range(depth)],
        t=scalars["t"], lr=scalars["lr"], beta1=scalars["beta1"],
        beta2=scalars["beta2"], eps=scalars["eps"],
    )
    return Checkpoint(
        run_config=header["run_config"],
        network_config=header["network_config"],
        seed=header["seed"],
        iteration=header["iteration"],
        params=[arrays[f"params_l{i}"] for i in range(depth)],
        wiring=[arrays[f"wiring_l{i}"] for i in range(depth)],
        adam=adam,
        rng_states=header.get("rng_states", {}),
        metrics_rows=header.get("metrics_rows", []),
        dataset=header.get("dataset", {}),
    )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    atomic_write_bytes(path, encode_checkpoint(ckpt))
    logger.info(f"Saved checkpoint {path} (iteration {ckpt.iteration})")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"Checkpoint not found: {path}")
    return decode_checkpoint(path.read_bytes(), source=str(path))
