"""Whitespace tokenizer and learned instruction embeddings."""
from __future__ import annotations

import string
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import numerics as nx

PAD, UNK = 0, 1
_PUNCT = str.maketrans("", "", string.punctuation)


@dataclass(frozen=True)
class Vocab:
    tokens: tuple[str, ...]  # index == id; tokens[0] == "<pad>", tokens[1] == "<unk>"
    max_len: int = 16

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def id(self, word: str) -> int:
        return self._index.get(word, UNK)

    @classmethod
    def from_words(cls, words: Iterable[str], max_len: int = 16) -> "Vocab":
        uniq = sorted({w for w in words if w} - {"<pad>", "<unk>"})
        return cls(("<pad>", "<unk>", *uniq), max_len)

    def to_text(self) -> str:
        return "\n".join(self.tokens[2:]) + "\n"

    @classmethod
    def from_text(cls, text: str, max_len: int = 16) -> "Vocab":
        return cls.from_words(text.split(), max_len)


def normalize(text: str) -> list[str]:
    return [w for w in text.lower().translate(_PUNCT).split() if w]


def tokenize(text: str, vocab: Vocab) -> np.ndarray:
    ids = [vocab.id(w) for w in normalize(text)][: vocab.max_len]
    ids += [PAD] * (vocab.max_len - len(ids))
    return np.array(ids, dtype=np.int64)


def valid_length(ids: np.ndarray) -> int:
    nz = np.flatnonzero(np.asarray(ids) != PAD)
    return int(nz[-1]) + 1 if nz.size else 0


def embed(ids: np.ndarray, table: nx.Tensor, positional: nx.Tensor) -> nx.Tensor:
    """z_c[..., i, :] = table[ids[..., i]] + positional[i]."""
    ids = np.asarray(ids)
    n = ids.shape[-1]
    if n > positional.shape[0]:
        raise nx.ShapeError("embed", ids.shape, positional.shape)
    pos = nx.split(positional, [n, positional.shape[0] - n], axis=0)[0] if n < positional.shape[0] else positional
    return nx.embedding(table, ids) + pos
