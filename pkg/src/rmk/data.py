"""Dialog instances, the JSON Lines dataset format and the visual-feature
sidecar."""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

log = logging.getLogger(__name__)

FEATURE_MAGIC = b"RMKV"
FEATURE_VERSION = 1


class DatasetError(ValueError):
    """Schema violation; ``path`` locates the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class Round:
    question: str
    answer: str


@dataclass
class DialogInstance:
    image_id: str
    caption: str
    rounds: list[Round]
    question: str
    candidates: list[str]
    gt_index: int
    relevance: list[float] | None = None
    question_type: str | None = None

    @property
    def answer(self) -> str:
        return self.candidates[self.gt_index]

    def history_sentences(self) -> list[str]:
        """Caption as round 0, then one "question answer" sentence per round."""
        return [self.caption] + [f"{r.question} {r.answer}" for r in self.rounds]

    def to_json(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "image_id": self.image_id,
            "caption": self.caption,
            "rounds": [{"question": r.question, "answer": r.answer} for r in self.rounds],
            "question": self.question,
            "candidates": list(self.candidates),
            "gt_index": self.gt_index,
        }
        if self.relevance is not None:
            out["relevance"] = list(self.relevance)
        if self.question_type is not None:
            out["question_type"] = self.question_type
        return out


def _need(obj: dict, key: str, kind, path: str):
    if key not in obj:
        raise DatasetError(f"{path}.{key}", "missing required field")
    val = obj[key]
    if kind is float:
        ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    elif kind is int:
        ok = isinstance(val, int) and not isinstance(val, bool)
    else:
        ok = isinstance(val, kind)
    if not ok:
        raise DatasetError(f"{path}.{key}", f"expected {kind.__name__}, got {type(val).__name__}")
    return val


def instance_from_json(obj: Any, path: str = "$", n_candidates: int | None = None) -> DialogInstance:
    if not isinstance(obj, dict):
        raise DatasetError(path, "expected an object")
    image_id = _need(obj, "image_id", (str, int), path)
    caption = _need(obj, "caption", str, path)
    rounds_raw = _need(obj, "rounds", list, path)
    rounds = []
    for i, r in enumerate(rounds_raw):
        rp = f"{path}.rounds[{i}]"
        if not isinstance(r, dict):
            raise DatasetError(rp, "expected an object")
        rounds.append(Round(_need(r, "question", str, rp), _need(r, "answer", str, rp)))
    question = _need(obj, "question", str, path)
    candidates = _need(obj, "candidates", list, path)
    for i, c in enumerate(candidates):
        if not isinstance(c, str) or not c.strip():
            raise DatasetError(f"{path}.candidates[{i}]", "expected a non-empty string")
    if not candidates:
        raise DatasetError(f"{path}.candidates", "no candidates")
    if n_candidates is not None and len(candidates) != n_candidates:
        raise DatasetError(f"{path}.candidates", f"expected {n_candidates} candidates, got {len(candidates)}")
    gt = _need(obj, "gt_index", int, path)
    if not 0 <= gt < len(candidates):
        raise DatasetError(f"{path}.gt_index", f"{gt} out of range for {len(candidates)} candidates")
    relevance = None
    if obj.get("relevance") is not None:
        relevance = _need(obj, "relevance", list, path)
        if len(relevance) != len(candidates):
            raise DatasetError(f"{path}.relevance", "length differs from candidates")
        for i, v in enumerate(relevance):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not 0 <= v <= 1:
                raise DatasetError(f"{path}.relevance[{i}]", "relevance must be a number in [0, 1]")
        relevance = [float(v) for v in relevance]
    qtype = obj.get("question_type")
    return DialogInstance(str(image_id), caption, rounds, question, list(candidates), gt, relevance, qtype)


def load_dataset(path: str | Path, n_candidates: int | None = None) -> list[DialogInstance]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"line {lineno}", f"invalid JSON ({exc.msg})") from exc
            out.append(instance_from_json(obj, f"line {lineno}: $", n_candidates))
    if not out:
        log.warning("%s contains no dialog instances", path)
    return out


def save_dataset(path: str | Path, instances: Iterable[DialogInstance]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(json.dumps(inst.to_json(), sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# feature sidecar
# ---------------------------------------------------------------------------


@dataclass
class ImageFeatures:
    features: np.ndarray  # [N, d_v]
    concepts: list[str] = field(default_factory=list)


def save_features(path: str | Path, records: dict[str, ImageFeatures]) -> None:
    """Binary sidecar, little-endian throughout.

    Header: magic ``RMKV``, u32 version, u32 record count.  Each record:
    u32 id length + UTF-8 id, u32 N, u32 d_v, N*d_v float64, u32 concept
    count, then each concept as u32 length + UTF-8 bytes.  A ``.json``
    suffix writes ``{image_id: {"features": [[...]], "concepts": [...]}}``
    instead.
    """
    path = Path(path)
    if path.suffix == ".json":
        blob = {k: {"features": v.features.tolist(), "concepts": list(v.concepts)} for k, v in records.items()}
        path.write_text(json.dumps(blob, sort_keys=True), encoding="utf-8")
        return
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<II", FEATURE_VERSION, len(records)))
        for key in sorted(records):
            rec = records[key]
            feats = np.ascontiguousarray(rec.features, dtype="<f8")
            if feats.ndim != 2:
                raise ValueError(f"features for {key} must be [N, d_v]")
            kb = key.encode("utf-8")
            fh.write(struct.pack("<I", len(kb)) + kb)
            fh.write(struct.pack("<II", *feats.shape))
            fh.write(feats.tobytes())
            fh.write(struct.pack("<I", len(rec.concepts)))
            for c in rec.concepts:
                cb = c.encode("utf-8")
                fh.write(struct.pack("<I", len(cb)) + cb)


def load_features(path: str | Path) -> dict[str, ImageFeatures]:
    path = Path(path)
    if path.suffix == ".json":
        blob = json.loads(path.read_text(encoding="utf-8"))
        out = {}
        for k, v in blob.items():
            feats = np.asarray(v["features"], dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] < 1:
                raise DatasetError(f"$.{k}.features", "expected a non-empty [N, d_v] array")
            out[k] = ImageFeatures(feats, list(v.get("concepts", [])))
        return out
    data = path.read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise DatasetError(str(path), "not a feature file (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FEATURE_VERSION:
        raise DatasetError(str(path), f"unsupported feature file version {version}")
    off = 12
    out = {}
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            off += 4
            key = data[off : off + n].decode("utf-8")
            off += n
            N, d = struct.unpack_from("<II", data, off)
            off += 8
            feats = np.frombuffer(data, dtype="<f8", count=N * d, offset=off).reshape(N, d).astype(np.float64)
            off += 8 * N * d
            (nc,) = struct.unpack_from("<I", data, off)
            off += 4
            concepts = []
            for _ in range(nc):
                (m,) = struct.unpack_from("<I", data, off)
                off += 4
                concepts.append(data[off : off + m].decode("utf-8"))
                off += m
            out[key] = ImageFeatures(feats, concepts)
    except (struct.error, ValueError) as exc:
        raise DatasetError(str(path), f"truncated or corrupt record ({exc})") from exc
    return out


def corpus_tokens(instances: Sequence[DialogInstance], extra_texts: Iterable[str] = ()) -> list[list[str]]:
    from .text import tokenize

    docs = []
    for inst in instances:
        docs.extend(tokenize(s) for s in inst.history_sentences())
        docs.append(tokenize(inst.question))
        docs.extend(tokenize(c) for c in inst.candidates)
    docs.extend(tokenize(t) for t in extra_texts)
    return docs
