"""Tokenisation, vocabulary, word embeddings and the LSTM sentence encoder."""
from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .numerics import Module, Tensor, ops

PAD, UNK, BOS = 0, 1, 2
RESERVED = ("<pad>", "<unk>", "<s>")

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


@dataclass
class Vocabulary:
    itos: list[str]
    stoi: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.itos[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, text: str | Sequence[str]) -> list[int]:
        tokens = tokenize(text) if isinstance(text, str) else text
        return [self.id(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> str:
        return " ".join(self.itos[i] for i in ids if i != PAD)

    def digest(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def build_vocabulary(corpus: Iterable[Sequence[str]], min_freq: int = 5) -> Vocabulary:
    """Keep tokens seen at least ``min_freq`` times.

    Ids after the reserved block follow descending frequency, ties broken
    lexicographically.
    """
    counts: Counter[str] = Counter()
    n_docs = 0
    for doc in corpus:
        n_docs += 1
        for tok in doc:
            if not tok:
                raise ValueError("empty token in corpus")
            counts[tok] += 1
    if n_docs == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq and t not in RESERVED),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(list(RESERVED) + kept)


def pad_or_truncate(tokens: Sequence[int], max_len: int = 20) -> list[int]:
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    tokens = list(tokens[:max_len])
    return tokens + [PAD] * (max_len - len(tokens))


def pad_batch(seqs: Sequence[Sequence[int]], max_len: int) -> np.ndarray:
    """Stack id lists into [S, L] with L the longest (clipped) sequence.

    Trailing all-PAD columns are dropped; they never change an encoding.
    """
    clipped = [list(s[:max_len]) for s in seqs]
    width = max([len(s) for s in clipped] + [1])
    out = np.zeros((len(clipped), width), dtype=np.int64)
    for i, s in enumerate(clipped):
        out[i, : len(s)] = s
    return out


class EmbeddingTable(Module):
    def __init__(self, vocab_size: int, d_emb: int, rng: np.random.Generator):
        self.weight = Tensor(rng.uniform(-0.08, 0.08, size=(vocab_size, d_emb)), requires_grad=True)

    @property
    def d_emb(self) -> int:
        return self.weight.shape[1]

    def __len__(self) -> int:
        return self.weight.shape[0]

    def __call__(self, ids) -> Tensor:
        return ops.embedding(self.weight, ids)

    def assign(self, vectors: Mapping[str, np.ndarray], vocab: Vocabulary) -> int:
        """Overwrite the rows of vocabulary tokens found in ``vectors``.

        Reserved tokens keep their rows.  Returns the number of rows replaced.
        """
        hit = 0
        for i, token in enumerate(vocab.itos):
            if i < len(RESERVED) or token not in vectors:
                continue
            vec = np.asarray(vectors[token], dtype=np.float64)
            if vec.shape != (self.d_emb,):
                raise ValueError(f"vector for {token!r} has shape {vec.shape}, expected ({self.d_emb},)")
            self.weight.data[i] = vec
            hit += 1
        return hit

    def load_pretrained(self, path: str | Path, vocab: Vocabulary) -> int:
        """Overwrite rows for tokens found in a word2vec-style text file.

        Returns the number of rows replaced.  A leading ``count dim`` header
        line is skipped when present.
        """
        found: dict[str, np.ndarray] = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                parts = line.rstrip().split()
                if not parts:
                    continue
                if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                    continue
                token, values = parts[0], parts[1:]
                if len(values) != self.d_emb:
                    raise ValueError(f"{path}:{lineno}: expected {self.d_emb} values, got {len(values)}")
                if token in vocab:
                    found[token] = np.array(values, dtype=np.float64)
        return self.assign(found, vocab)


class LSTMEncoder(Module):
    """Single-layer LSTM; gate blocks are laid out as (input, forget, cell, output)."""

    def __init__(self, d_in: int, d_h: int, rng: np.random.Generator):
        bound = 1.0 / np.sqrt(d_h)
        self.w_x = Tensor(rng.uniform(-bound, bound, (d_in, 4 * d_h)), requires_grad=True)
        self.w_h = Tensor(rng.uniform(-bound, bound, (d_h, 4 * d_h)), requires_grad=True)
        self.b = Tensor(rng.uniform(-bound, bound, (4 * d_h,)), requires_grad=True)
        self.d_in, self.d_h = d_in, d_h

    def step(self, x: Tensor, h: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
        d = self.d_h
        z = ops.add(ops.add(ops.matmul(x, self.w_x), ops.matmul(h, self.w_h)), self.b)
        i = ops.sigmoid(z[:, :d])
        f = ops.sigmoid(z[:, d : 2 * d])
        g = ops.tanh(z[:, 2 * d : 3 * d])
        o = ops.sigmoid(z[:, 3 * d :])
        c_new = ops.add(ops.mul(f, c), ops.mul(i, g))
        h_new = ops.mul(o, ops.tanh(c_new))
        return h_new, c_new

    def run(
        self,
        inputs: Tensor,
        mask: np.ndarray,
        h0: Tensor | None = None,
        keep_states: bool = False,
    ) -> tuple[Tensor, list[Tensor]]:
        """Unroll over ``inputs`` [S, L, d_in].

        Where ``mask`` [S, L] is false the previous state is carried through
        unchanged, so PAD positions never alter the result.  Returns the final
        hidden state and, when ``keep_states``, the per-step hidden states.
        """
        S, L = mask.shape
        d = self.d_h
        h = h0 if h0 is not None else Tensor(np.zeros((S, d)))
        c = Tensor(np.zeros((S, d)))
        states = []
        for t in range(L):
            m = mask[:, t]
            if not m.any():
                if keep_states:
                    states.append(h)
                continue
            h_new, c_new = self.step(inputs[:, t, :], h, c)
            if m.all():
                h, c = h_new, c_new
            else:
                keep = Tensor(np.repeat(m[:, None].astype(np.float64), d, axis=1))
                hold = Tensor(1.0 - keep.data)
                h = ops.add(ops.mul(keep, h_new), ops.mul(hold, h))
                c = ops.add(ops.mul(keep, c_new), ops.mul(hold, c))
            if keep_states:
                states.append(h)
        return h, states


class TextEncoder(Module):
    """Word embeddings plus the named LSTM encoders of the model.

    Roles: ``question``, ``history``, ``fact`` (descriptions and entity
    phrases) and ``answer`` (candidate answers).  With ``share=True`` every
    role uses one parameter set.
    """

    ROLES = ("question", "history", "fact", "answer")

    def __init__(self, vocab: Vocabulary, d_emb: int, d_h: int, rng: np.random.Generator, share: bool = False):
        self.vocab = vocab
        self.embedding = EmbeddingTable(len(vocab), d_emb, rng)
        if share:
            shared = LSTMEncoder(d_emb, d_h, rng)
            self.encoders = {"shared": shared}
            self._route = {role: "shared" for role in self.ROLES}
        else:
            self.encoders = {role: LSTMEncoder(d_emb, d_h, rng) for role in self.ROLES}
            self._route = {role: role for role in self.ROLES}
        self.d_h = d_h

    def encoder(self, role: str) -> LSTMEncoder:
        return self.encoders[self._route[role]]

    def encode_ids(self, ids: np.ndarray, role: str) -> Tensor:
        """Encode an [S, L] id matrix to [S, d_h] final non-PAD states.

        All-PAD rows encode to the zero vector.
        """
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2:
            raise ValueError(f"expected [S, L] ids, got shape {ids.shape}")
        if ids.size and ids.max() >= len(self.vocab):
            raise IndexError(f"token id {int(ids.max())} out of range for vocabulary of {len(self.vocab)}")
        mask = ids != PAD
        return self.encoder(role).run(self.embedding(ids), mask)[0]

    def encode_texts(self, texts: Sequence[str], role: str, max_len: int = 20) -> Tensor:
        ids = pad_batch([self.vocab.encode(t) for t in texts], max_len)
        return self.encode_ids(ids, role)


def encode_sequence(tokens: Sequence[int], table: EmbeddingTable, enc: LSTMEncoder) -> Tensor:
    """Encode a single id sequence to a [d_h] feature vector."""
    ids = np.asarray([list(tokens) or [PAD]], dtype=np.int64)
    if ids.max() >= len(table) or ids.min() < 0:
        raise IndexError("token id out of range")
    h, _ = enc.run(table(ids), ids != PAD)
    return ops.reshape(h, (enc.d_h,))
