"""Binary container for prompt checkpoints and backbone weights.

Layout (all integers little-endian)::

    magic          4 bytes   b"DPCK"
    format_version uint32
    header_len     uint64
    header         header_len bytes of UTF-8 JSON (sorted keys)
    n_arrays       uint32
    n_arrays times:
        name_len   uint16
        name       name_len bytes UTF-8
        dtype_tag  uint8     (see DTYPE_TAGS)
        ndim       uint8
        shape      ndim x uint64
        nbytes     uint64
        payload    nbytes bytes, C order, little-endian
    crc32          uint32 over every preceding byte
"""
from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict

import numpy as np
import torch

from .backbone import FrozenBackbone, ModelConfig
from .errors import CheckpointError, IncompatibleCheckpointError
from .prompts import PromptConfig
from .tasks.types import TaskSpec
from .training import PromptTuningModel, TrainState

MAGIC = b"DPCK"
FORMAT_VERSION = 1
DTYPE_TAGS = {1: "<f4", 2: "<f8", 3: "<i8", 4: "<i4", 5: "<f2", 6: "|u1", 7: "|b1"}
_TAG_OF = {np.dtype(v).str: k for k, v in DTYPE_TAGS.items()}


@dataclass
class CheckpointBlob:
    header: dict
    arrays: Dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def format_version(self) -> int:
        return self.header.get("format_version", FORMAT_VERSION)


def _to_numpy(t) -> np.ndarray:
    arr = t.detach().cpu().numpy() if isinstance(t, torch.Tensor) else np.asarray(t)
    return np.ascontiguousarray(arr.astype(arr.dtype.newbyteorder("<")))


def write_blob(path, blob: CheckpointBlob) -> int:
    """Serialise ``blob`` to ``path`` atomically; returns the file size."""
    header = dict(blob.header, format_version=FORMAT_VERSION)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<IQ", FORMAT_VERSION, len(head)), head, struct.pack("<I", len(blob.arrays))]
    for name, arr in blob.arrays.items():
        arr = _to_numpy(arr)
        tag = _TAG_OF.get(arr.dtype.str)
        if tag is None:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for array {name!r}")
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)) + encoded)
        parts.append(struct.pack("<BB", tag, arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        payload = arr.tobytes(order="C")
        parts.append(struct.pack("<Q", len(payload)) + payload)
    body = b"".join(parts)
    data = body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
    return len(data)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_blob(path) -> CheckpointBlob:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(data) < len(MAGIC) + 16 or data[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a deepprompt checkpoint")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")
    r = _Reader(body)
    r.take(4)
    version, head_len = r.unpack("<IQ")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    try:
        header = json.loads(r.take(head_len).decode("utf-8"))
        (n,) = r.unpack("<I")
        arrays = {}
        for _ in range(n):
            (name_len,) = r.unpack("<H")
            name = r.take(name_len).decode("utf-8")
            tag, ndim = r.unpack("<BB")
            shape = r.unpack(f"<{ndim}Q")
            (nbytes,) = r.unpack("<Q")
            dtype = np.dtype(DTYPE_TAGS[tag])
            arr = np.frombuffer(r.take(nbytes), dtype=dtype)
            arrays[name] = arr.reshape(shape).copy()
    except (KeyError, ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from exc
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after last array")
    return CheckpointBlob(header, arrays)


def save_checkpoint(state: TrainState, path, metrics=None) -> CheckpointBlob:
    """Write prompts and heads only; the backbone is referenced by hash."""
    model = state.model
    backbone = model.backbone
    header = {
        "kind": "prompt_checkpoint",
        "model_config_hash": backbone.config.config_hash(),
        "backbone_fingerprint": backbone.fingerprint(),
        "model_config": backbone.config.to_dict(),
        "prompt_config": model.prompt_config.to_dict(),
        "prompt_config_hash": _short_hash(model.prompt_config.to_json()),
        "tasks": {name: spec.to_dict() for name, spec in model.tasks.items()},
        "step": state.step,
        "metrics": metrics if metrics is not None else {"best": state.best_metric},
    }
    blob = CheckpointBlob(header, {k: _to_numpy(v) for k, v in model.trainable_state().items()})
    write_blob(path, blob)
    return blob


def _short_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def load_checkpoint(path, backbone: FrozenBackbone, strict: bool = True) -> TrainState:
    """Rebuild a :class:`TrainState` from ``path`` on top of ``backbone``.

    The backbone's config hash must match; with ``strict`` its weight
    fingerprint must match too.
    """
    blob = read_blob(path)
    header = blob.header
    if header.get("kind") != "prompt_checkpoint":
        raise CheckpointError(f"{path} holds a {header.get('kind')!r}, not a prompt checkpoint")
    expected = backbone.config.config_hash()
    if header["model_config_hash"] != expected:
        raise IncompatibleCheckpointError(expected, header["model_config_hash"])
    if strict and header.get("backbone_fingerprint") != backbone.fingerprint():
        raise IncompatibleCheckpointError(backbone.fingerprint(), header.get("backbone_fingerprint"),
                                          what="backbone weight fingerprint")
    prompt_config = PromptConfig.from_dict(header["prompt_config"])
    tasks = {name: TaskSpec.from_dict(d) for name, d in header["tasks"].items()}
    model = PromptTuningModel(backbone, prompt_config, tasks)
    params = dict(model.trainable_named_parameters())
    state = {}
    for name, arr in blob.arrays.items():
        if name not in params:
            raise CheckpointError(f"unexpected array {name!r} in checkpoint")
        state[name] = torch.from_numpy(arr).to(params[name].dtype)
    model.load_trainable_state(state)
    model.eval()
    return TrainState(model, step=header.get("step", 0), best_metric=header.get("metrics", {}).get("best"))


def save_backbone(backbone: FrozenBackbone, path) -> int:
    header = {
        "kind": "backbone",
        "model_config": backbone.config.to_dict(),
        "model_config_hash": backbone.config.config_hash(),
        "seed": backbone.seed,
        "init_std": backbone.init_std,
    }
    return write_blob(path, CheckpointBlob(header, {k: _to_numpy(v) for k, v in backbone.state_dict().items()}))


def load_backbone(path) -> FrozenBackbone:
    blob = read_blob(path)
    if blob.header.get("kind") != "backbone":
        raise CheckpointError(f"{path} holds a {blob.header.get('kind')!r}, not backbone weights")
    config = ModelConfig.from_dict(blob.header["model_config"])
    backbone = FrozenBackbone(config, seed=blob.header.get("seed", 0), init_std=blob.header.get("init_std", 0.02))
    current = backbone.state_dict()
    if set(current) != set(blob.arrays):
        raise CheckpointError(f"{path}: backbone array names do not match the architecture")
    with torch.no_grad():
        for name, tensor in current.items():
            tensor.copy_(torch.from_numpy(blob.arrays[name]))
    return backbone
