"""Comment text as an averaged bag-of-words embedding.

The text side of a node's input is the mean of the embedding rows of its
first 100 tokens. The vocabulary keeps tokens seen at least ``min_count``
times (default 10) plus an unknown-word slot that absorbs the rest.
"""

from __future__ import annotations

import hashlib
import string
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

UNK_TOKEN = "<unk>"
MAX_COMMENT_TOKENS = 100
DEFAULT_MIN_COUNT = 10
DEFAULT_EMBEDDING_DIM = 100

_PUNCT = set(string.punctuation)


class TextFeatureError(ValueError):
    pass


def tokenize(text: str) -> list:
    """Lowercase whitespace tokenization with edge punctuation split off.

    Leading and trailing ASCII punctuation of each chunk becomes separate
    single-character tokens, in original order; interior punctuation is
    left alone ("don't" stays one token).
    """
    out = []
    for chunk in text.lower().split():
        lead = []
        while chunk and chunk[0] in _PUNCT:
            lead.append(chunk[0])
            chunk = chunk[1:]
        trail = []
        while chunk and chunk[-1] in _PUNCT:
            trail.append(chunk[-1])
            chunk = chunk[:-1]
        out.extend(lead)
        if chunk:
            out.append(chunk)
        out.extend(reversed(trail))
    return out


@dataclass(frozen=True)
class Vocabulary:
    token_to_index: dict
    unk_index: int
    min_count: int = DEFAULT_MIN_COUNT

    def __len__(self) -> int:
        return len(self.token_to_index)

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, self.unk_index)

    def indices(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.index(t) for t in tokens], dtype=np.int64)

    def to_lines(self) -> list:
        ordered = sorted(self.token_to_index, key=self.token_to_index.get)
        return ordered

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.to_lines():
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, min_count: int = DEFAULT_MIN_COUNT) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        if UNK_TOKEN not in tokens:
            raise TextFeatureError(f"vocabulary file {path} lacks {UNK_TOKEN}")
        return cls(
            token_to_index={t: k for k, t in enumerate(tokens)},
            unk_index=tokens.index(UNK_TOKEN),
            min_count=min_count,
        )

    def sha256(self) -> str:
        payload = "\n".join(self.to_lines()).encode("utf-8")
        return hashlib.sha256(payload).hexdigest()


def build_vocab(corpus: Iterable[str], min_count: int = DEFAULT_MIN_COUNT) -> Vocabulary:
    """Count tokens over the corpus and keep those at or above min_count.

    The unknown slot sits at index 0; kept tokens follow by descending
    count, ties alphabetical.
    """
    counts = Counter()
    for text in corpus:
        counts.update(tokenize(text))
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    mapping = {UNK_TOKEN: 0}
    for t in kept:
        mapping[t] = len(mapping)
    return Vocabulary(token_to_index=mapping, unk_index=0, min_count=min_count)


def init_embeddings(
    rng: np.random.Generator,
    vocab_size: int,
    dim: int = DEFAULT_EMBEDDING_DIM,
    scale: float = 0.08,
) -> np.ndarray:
    """Uniform [-scale, scale] embedding table, one row per vocab entry."""
    return rng.uniform(-scale, scale, size=(vocab_size, dim))


def embed_comment(tokens, table: np.ndarray, vocab: Vocabulary) -> np.ndarray:
    """Mean embedding of the first MAX_COMMENT_TOKENS tokens.

    Unknown tokens use the unk row; an empty token list yields zeros.
    """
    rows = vocab.indices(tokens[:MAX_COMMENT_TOKENS])
    if len(rows) == 0:
        return np.zeros(table.shape[1], dtype=np.float64)
    return table[rows].mean(axis=0)


def comment_rows(text: str, vocab: Vocabulary) -> np.ndarray:
    """Embedding-row indices of a comment, truncated; the training path
    keeps these so embedding gradients land on the right rows."""
    return vocab.indices(tokenize(text)[:MAX_COMMENT_TOKENS])


def load_pretrained(
    path,
    vocab: Vocabulary,
    dim: int = DEFAULT_EMBEDDING_DIM,
    rng: np.random.Generator | None = None,
    scale: float = 0.08,
) -> np.ndarray:
    """Load "token v1 ... vd" lines; rows absent from the file stay at
    their random initialization."""
    if rng is None:
        rng = np.random.default_rng(0)
    table = init_embeddings(rng, len(vocab), dim, scale)
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise TextFeatureError(
                    f"line {lineno}: expected {dim} values for {token!r}, got {len(values)}"
                )
            if token in vocab.token_to_index:
                table[vocab.token_to_index[token]] = np.array(values, dtype=np.float64)
    return table
