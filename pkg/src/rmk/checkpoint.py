"""Model checkpoints.

Layout, little-endian: magic ``RMKC``, u32 format version, u32 manifest
length, the manifest as UTF-8 JSON, then one block per parameter in
manifest order holding the raw float64 values.  The manifest records the
model hyperparameters, the relation inventory, the vocabulary tokens and
their digest, and each parameter's name and shape.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any

import numpy as np

from .knowledge import RelationIndex
from .model import ModelConfig, RMKModel
from .text import Vocabulary

MAGIC = b"RMKC"
VERSION = 1

# settings that change no parameter shapes and may differ between runs
_RUNTIME_KEYS = frozenset({"dropout", "mode", "gen_length_norm", "k_facts", "max_len", "freeze_embeddings"})


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: RMKModel, relations: RelationIndex, extra: dict[str, Any] | None = None) -> None:
    params = list(model.named_parameters())
    manifest = {
        "format": "rmk-checkpoint",
        "model": model.config.as_dict(),
        "relations": list(relations.names),
        "vocab": list(model.vocab.itos),
        "vocab_sha256": model.vocab.digest(),
        "parameters": [{"name": n, "shape": list(p.shape)} for n, p in params],
        "extra": extra or {},
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, len(blob)))
        fh.write(blob)
        for _, p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc.strerror}") from exc
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    manifest = json.loads(data[12 : 12 + n].decode("utf-8"))
    off = 12 + n
    arrays = {}
    for entry in manifest["parameters"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        if off + 8 * size > len(data):
            raise CheckpointError(f"{path}: truncated at parameter {entry['name']}")
        arrays[entry["name"]] = np.frombuffer(data, dtype="<f8", count=size, offset=off).reshape(entry["shape"]).copy()
        off += 8 * size
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")
    return manifest, arrays


def load_checkpoint(
    path: str | Path,
    config: ModelConfig | None = None,
    vocab: Vocabulary | None = None,
) -> tuple[RMKModel, RelationIndex, dict]:
    """Rebuild the model stored at ``path``.

    ``config`` and ``vocab``, when given, must agree with the manifest:
    every shape-determining hyperparameter and the vocabulary digest.
    Runtime-only settings (dropout, decoder mode, ...) are taken from
    ``config``.
    """
    manifest, arrays = read_checkpoint(path)
    stored = manifest["model"]
    if config is not None:
        mine = config.as_dict()
        diff = sorted(k for k in stored if k not in _RUNTIME_KEYS and stored[k] != mine.get(k))
        if diff:
            detail = ", ".join(f"{k}: checkpoint {stored[k]!r} vs config {mine.get(k)!r}" for k in diff)
            raise CheckpointError(f"manifest mismatch ({detail})")
        stored = {**stored, **{k: mine[k] for k in _RUNTIME_KEYS}}
    stored_vocab = Vocabulary(manifest["vocab"])
    if stored_vocab.digest() != manifest["vocab_sha256"]:
        raise CheckpointError("vocabulary digest does not match stored tokens")
    if vocab is not None and vocab.digest() != manifest["vocab_sha256"]:
        raise CheckpointError("vocabulary differs from the one the checkpoint was trained with")
    relations = RelationIndex(manifest["relations"][1:])
    model = RMKModel(ModelConfig(**stored), stored_vocab, len(relations))
    params = dict(model.named_parameters())
    if set(params) != set(arrays):
        raise CheckpointError("parameter names differ from the model definition")
    for name, p in params.items():
        if p.shape != arrays[name].shape:
            raise CheckpointError(f"parameter {name}: shape {arrays[name].shape} vs model {p.shape}")
        p.data = arrays[name]
    return model, relations, manifest
