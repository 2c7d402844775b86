"""``.ampck`` checkpoints.

Layout::

    b"AMPCK\\0"           magic
    uint16 LE              format version
    uint64 LE              header length in bytes
    header                 UTF-8 JSON: manifest + tensor table (name, shape, offset)
    payload                little-endian float64 tensors, back to back
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import CheckpointError
from .network import AmpNet, ModelConfig
from .optim import Adam

MAGIC = b"AMPCK\x00"
VERSION = 1
_PREFIX = struct.Struct("<6sHQ")


@dataclass
class Checkpoint:
    manifest: dict
    tensors: dict = field(default_factory=dict)

    @property
    def kind(self) -> str:
        return self.manifest["kind"]

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(**self.manifest["model"])


def make_checkpoint(model: AmpNet, optimizer: Optional[Adam] = None, train_config: Optional[dict] = None,
                    epoch: int = 0, history=()) -> Checkpoint:
    manifest = {
        "kind": model.kind,
        "model": model.config.to_dict(),
        "train": train_config or {},
        "epoch": epoch,
        "history": [list(map(float, row)) for row in history],
        "adam": None,
    }
    tensors = {f"param/{k}": v for k, v in model.store.tensors().items()}
    if optimizer is not None:
        state = optimizer.state_dict()
        manifest["adam"] = {k: state[k] for k in ("t", "lr", "beta1", "beta2", "eps")}
        tensors.update(state["tensors"])
    return Checkpoint(manifest, tensors)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    table, chunks, offset = [], [], 0
    for name in sorted(ckpt.tensors):
        arr = np.asarray(ckpt.tensors[name], dtype="<f8")
        table.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    header = json.dumps({"manifest": ckpt.manifest, "tensors": table, "dtype": "<f8"},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        fh.write(header)
        for chunk in chunks:
            fh.write(chunk)


def load_checkpoint(path, expect_kind: Optional[str] = None) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _PREFIX.size:
        raise CheckpointError(f"{path}: truncated checkpoint (no header)")
    magic, version, hlen = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes {magic!r}, not an .ampck checkpoint")
    if version != VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, this build reads version {VERSION}")
    start = _PREFIX.size + hlen
    if len(raw) < start:
        raise CheckpointError(f"{path}: truncated checkpoint header")
    try:
        header = json.loads(raw[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header: {exc}") from exc

    payload = memoryview(raw)[start:]
    tensors, end = {}, 0
    for entry in header["tensors"]:
        count = int(np.prod(entry["shape"], dtype=np.int64))
        lo, hi = entry["offset"], entry["offset"] + 8 * count
        if hi > len(payload):
            raise CheckpointError(f"{path}: truncated payload while reading tensor {entry['name']}")
        tensors[entry["name"]] = np.frombuffer(payload[lo:hi], dtype="<f8").reshape(entry["shape"]).copy()
        end = max(end, hi)
    if end != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - end} unexpected trailing bytes")

    stray = [k for k in tensors if not k.startswith(("param/", "adam.m/", "adam.v/"))]
    if stray:
        raise CheckpointError(f"{path}: unknown tensor name {stray[0]!r}")
    ckpt = Checkpoint(header["manifest"], tensors)
    if expect_kind is not None and ckpt.kind != expect_kind:
        raise CheckpointError(f"{path}: checkpoint holds an {ckpt.kind} model, expected {expect_kind}")
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint, into: Optional[AmpNet] = None) -> AmpNet:
    """Rebuild the checkpointed model, or strictly load its tensors into ``into``."""
    model = into if into is not None else AmpNet(ckpt.model_config)
    params = {k[len("param/"):]: v for k, v in ckpt.tensors.items() if k.startswith("param/")}
    model.store.load_tensors(params)
    return model


def optimizer_from_checkpoint(ckpt: Checkpoint, model: AmpNet) -> Adam:
    meta = ckpt.manifest.get("adam")
    if meta is None:
        raise CheckpointError("checkpoint carries no optimizer state")
    opt = Adam(model.parameters(), lr=meta["lr"])
    adam = {k: v for k, v in ckpt.tensors.items() if k.startswith("adam.")}
    expected = {f"adam.{s}/{p.name}" for p in opt.params for s in "mv"}
    if set(adam) != expected:
        raise CheckpointError("optimizer moments do not match the model's trainable parameters")
    opt.load_state_dict({**meta, "tensors": adam})
    return opt
