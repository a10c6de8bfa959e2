"""Small hand-written inputs used by the gradient checker, the test suite
and the walkthrough scripts."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .data import DialogInstance, ImageFeatures, Round
from .knowledge import FactTriple
from .model import Example, Featurizer, KnowledgeBase, ModelConfig
from .text import Vocabulary, build_vocabulary, tokenize

TINY_TRIPLES = [
    FactTriple("dog", "AtLocation", "park"),
    FactTriple("frisbee", "UsedFor", "playing"),
    FactTriple("dog", "CapableOf", "running"),
]


def tiny_instance() -> tuple[DialogInstance, ImageFeatures]:
    """Two detected objects, two history rounds, three candidate answers."""
    inst = DialogInstance(
        image_id="tiny-0",
        caption="a dog catches a frisbee",
        rounds=[Round("is it sunny?", "yes it is"), Round("what color is the dog?", "brown")],
        question="where is the dog?",
        candidates=["in the park", "on a boat", "no"],
        gt_index=0,
        relevance=[1.0, 0.0, 0.25],
    )
    feats = np.random.default_rng(7).standard_normal((2, 5))
    return inst, ImageFeatures(feats, ["dog", "frisbee"])


def tiny_vocabulary(instances=None) -> Vocabulary:
    instances = instances or [tiny_instance()[0]]
    docs = []
    for inst in instances:
        docs.extend(tokenize(s) for s in inst.history_sentences())
        docs.append(tokenize(inst.question))
        docs.extend(tokenize(c) for c in inst.candidates)
    docs.extend(tokenize(t.description()) for t in TINY_TRIPLES)
    return build_vocabulary(docs, min_freq=1)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d_emb=6, d_h=8, heads=2, d_v=5, k_facts=3, max_len=20, dropout=0.0, mode="both")
    base.update(overrides)
    return ModelConfig(**base)


def tiny_example(config: ModelConfig | None = None) -> tuple[Example, Vocabulary, KnowledgeBase]:
    """The 2-object / 2-round / 3-fact instance, featurised."""
    config = config or tiny_config()
    inst, feats = tiny_instance()
    if feats.features.shape[1] != config.d_v:
        rng = np.random.default_rng(7)
        feats = ImageFeatures(rng.standard_normal((2, config.d_v)), feats.concepts)
    vocab = tiny_vocabulary()
    kb = KnowledgeBase(TINY_TRIPLES)
    ex = Featurizer(vocab, kb, {inst.image_id: feats}, config)(inst)
    return ex, vocab, kb


def write_fixture_dataset(out_dir: str | Path, n_dialogs: int = 8, n_candidates: int = 10, seed: int = 0, d_v: int = 32) -> dict[str, Path]:
    """A small synthetic dataset on disk (dialogs, triples, features)."""
    from .synthetic import generate_synthetic_dataset

    ds = generate_synthetic_dataset(seed, n_dialogs, n_candidates=n_candidates, n_objects=4, d_v=d_v)
    return ds.write(out_dir)

