"""Glue from a run configuration to loaded data, a featuriser and a model."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .config import RunConfig
from .data import DatasetError, DialogInstance, ImageFeatures, corpus_tokens, load_dataset, load_features
from .knowledge import FactTriple, HashedWordVectors, load_triple_store, load_word_vectors
from .model import Example, Featurizer, KnowledgeBase, RMKModel
from .text import Vocabulary, build_vocabulary

log = logging.getLogger(__name__)


class DataError(Exception):
    """Unreadable or invalid input files."""


@dataclass
class Workspace:
    config: RunConfig
    train: list[DialogInstance]
    val: list[DialogInstance]
    triples: list[FactTriple]
    features: dict[str, ImageFeatures]
    kb: KnowledgeBase

    def featurizer(self, vocab: Vocabulary) -> Featurizer:
        return Featurizer(vocab, self.kb, self.features, self.config.model, self.config.data.n_objects)

    def build_vocabulary(self) -> Vocabulary:
        """Vocabulary over the training dialogs plus the fact descriptions."""
        corpus = corpus_tokens(self.train, [t.description() for t in self.triples])
        return build_vocabulary(corpus, self.config.data.min_freq)

    def new_model(self, vocab: Vocabulary) -> RMKModel:
        model = RMKModel(self.config.model, vocab, len(self.kb.relations), seed=self.config.seed)
        if self.config.paths.embeddings:
            path = _need_path(self.config.paths.embeddings, "paths.embeddings")
            try:
                hit = model.text.embedding.load_pretrained(path, vocab)
            except (OSError, ValueError) as exc:
                raise DataError(str(exc)) from exc
            log.info("initialised %d of %d embedding rows from %s", hit, len(vocab), path)
        return model


def _need_path(value: str, key: str) -> Path:
    if not value:
        raise DataError(f"config key {key} is not set")
    path = Path(value)
    if not path.is_file():
        raise DataError(f"{key}: file not found: {path}")
    return path


def load_workspace(cfg: RunConfig, need_dataset: bool = True) -> Workspace:
    try:
        triples = load_triple_store(_need_path(cfg.paths.triples, "paths.triples"))
        if not triples:
            raise DataError(f"triple store {cfg.paths.triples} is empty")
        vectors = load_word_vectors(cfg.paths.word_vectors) if cfg.paths.word_vectors else HashedWordVectors()
        kb = KnowledgeBase(triples, vectors)
        train: list[DialogInstance] = []
        val: list[DialogInstance] = []
        features: dict[str, ImageFeatures] = {}
        if need_dataset:
            train = load_dataset(_need_path(cfg.paths.dataset, "paths.dataset"), cfg.data.candidates)
            if cfg.paths.val_dataset:
                val = load_dataset(_need_path(cfg.paths.val_dataset, "paths.val_dataset"), cfg.data.candidates)
            features = load_features(_need_path(cfg.paths.features, "paths.features"))
    except (DatasetError, OSError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(str(exc)) from exc
    return Workspace(cfg, train, val, triples, features, kb)


def featurize(fz: Featurizer, instances: Sequence[DialogInstance]) -> list[Example]:
    try:
        return [fz(inst) for inst in instances]
    except (KeyError, ValueError) as exc:
        raise DataError(str(exc.args[0] if isinstance(exc, KeyError) else exc)) from exc
