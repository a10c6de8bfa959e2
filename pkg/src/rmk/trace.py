"""Reasoning-path records: the attention weights behind one prediction."""
from __future__ import annotations

from typing import Any

import numpy as np

from .fusion import rank_candidates
from .model import Example, RMKModel, collate

TOP_N = 3

_PROB = {"type": "number", "minimum": 0.0, "maximum": 1.0}
_VEC = {"type": "array", "items": _PROB}
_MAT = {"type": "array", "items": _VEC}
_TOP = {
    "type": "array",
    "maxItems": TOP_N,
    "items": {
        "type": "object",
        "required": ["index", "text", "weight"],
        "properties": {"index": {"type": "integer", "minimum": 0}, "text": {"type": "string"}, "weight": _PROB},
    },
}
_STRUCTURE = {
    "type": "object",
    "required": ["items", "delta", "top"],
    "properties": {"items": {"type": "array", "items": {"type": "string"}}, "delta": _VEC, "top": _TOP},
}

TRACE_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["image_id", "question", "candidate_facts", "gamma", "delta", "eta", "structures", "predicted_answer", "gt_answer"],
    "properties": {
        "image_id": {"type": "string"},
        "question": {"type": "string"},
        "candidate_facts": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["text", "score"],
                "properties": {"text": {"type": "string"}, "score": {"type": "number"}},
            },
        },
        "gamma": {"type": "object", "additionalProperties": {"anyOf": [_MAT, {"type": "null"}]}},
        "delta": {"type": "object", "additionalProperties": {"anyOf": [_VEC, {"type": "null"}]}},
        "eta": {"type": "object", "additionalProperties": {"anyOf": [_VEC, {"type": "null"}]}},
        "structures": {"type": "object", "additionalProperties": _STRUCTURE},
        "decoder": {"enum": ["disc", "gen"]},
        "predicted_answer": {"type": "string"},
        "predicted_index": {"type": "integer", "minimum": 0},
        "gt_answer": {"type": "string"},
        "gt_index": {"type": "integer", "minimum": 0},
        "gt_rank": {"type": "integer", "minimum": 1},
    },
}


def _row(a: np.ndarray | None, n: int | None = None, m: int | None = None):
    if a is None:
        return None
    a = a[0]
    if a.ndim == 1:
        return [float(x) for x in a[:n]]
    return [[float(x) for x in r[:m]] for r in a[:n]]


def _top(weights: list[float], items: list[str]) -> list[dict]:
    order = np.argsort(-np.asarray(weights), kind="stable")[:TOP_N]
    return [{"index": int(i), "text": items[i], "weight": float(weights[i])} for i in order]


def build_trace(model: RMKModel, example: Example) -> dict[str, Any]:
    """Run one instance with dropout off and collect its attention record."""
    batch = collate([example], model.config.max_len)
    out = model.forward(batch, training=False)
    att = out.attention
    n_v = example.objects.shape[0]
    T = len(example.history)
    K = len(example.facts)
    M = len(example.layout.entities)
    sentences = [sf.fact.description() for sf in example.facts]
    entities = list(example.layout.entities)

    record: dict[str, Any] = {
        "image_id": example.instance.image_id,
        "question": example.instance.question,
        "candidate_facts": [{"text": t, "score": float(sf.score)} for t, sf in zip(sentences, example.facts)],
        "gamma": {
            "vision_from_facts": _row(att.get("gamma_vision_from_facts"), n_v, M),
            "facts_from_vision": _row(att.get("gamma_facts_from_vision"), M, n_v),
            "history_from_facts": _row(att.get("gamma_history_from_facts"), T, K),
            "facts_from_history": _row(att.get("gamma_facts_from_history"), K, T),
        },
        "delta": {"graph": _row(att.get("delta_graph"), M), "sentence": _row(att.get("delta_sentence"), K)},
        "eta": {"history": _row(att.get("eta_history"), T), "facts": _row(att.get("eta_facts"), K)},
        "structures": {},
    }
    if record["delta"]["sentence"] is not None:
        d = record["delta"]["sentence"]
        record["structures"]["sentence"] = {"items": sentences, "delta": d, "top": _top(d, sentences)}
    if record["delta"]["graph"] is not None:
        d = record["delta"]["graph"]
        record["structures"]["graph"] = {"items": entities, "delta": d, "top": _top(d, entities)}

    scores = out.disc_scores if out.disc_scores is not None else out.gen_scores
    ranks = rank_candidates(scores.data)[0]
    pred = int(np.argmin(ranks))
    cands = example.instance.candidates
    record.update(
        decoder="disc" if out.disc_scores is not None else "gen",
        predicted_answer=cands[pred],
        predicted_index=pred,
        gt_answer=cands[example.gt_index],
        gt_index=int(example.gt_index),
        gt_rank=int(ranks[example.gt_index]),
    )
    return record


def check_trace(record: dict[str, Any], tol: float = 1e-6) -> list[str]:
    """Normalisation and argmax-consistency problems in a trace (empty if fine)."""
    problems = []

    def check_vec(name, v):
        if v is None:
            return
        arr = np.asarray(v, dtype=np.float64)
        if (arr < 0).any():
            problems.append(f"{name}: negative weight")
        if abs(arr.sum() - 1.0) > tol:
            problems.append(f"{name}: sums to {arr.sum():.9f}")

    for group in ("delta", "eta"):
        for k, v in record[group].items():
            check_vec(f"{group}.{k}", v)
    for k, m in record["gamma"].items():
        for i, row in enumerate(m or []):
            check_vec(f"gamma.{k}[{i}]", row)
    for k, s in record["structures"].items():
        if s["top"] and s["top"][0]["index"] != int(np.argmax(s["delta"])):
            problems.append(f"structures.{k}: top fact is not argmax delta")
    return problems
