"""Caption tokenization and the word vocabulary."""
from __future__ import annotations

import json
from collections import Counter
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>")


def tokenize(caption: str) -> list[str]:
    return caption.lower().split()


class Vocab:
    def __init__(self, tokens: Sequence[str], max_len: int = 16):
        self.itos = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ContractError("duplicate tokens in vocabulary")
        self.max_len = max_len

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos and self.max_len == other.max_len

    def tokens(self, caption: str) -> list[str]:
        """Lowercased tokens, truncated to ``max_len``, unknown words as <unk>."""
        return [t if t in self.stoi else SPECIALS[UNK] for t in tokenize(caption)[:self.max_len]]

    def encode(self, caption: str, eos: bool = True) -> list[int]:
        ids = [self.stoi.get(t, UNK) for t in tokenize(caption)[:self.max_len]]
        return ids + [EOS] if eos else ids

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            i = int(i)
            if i == EOS:
                break
            if i in (PAD, BOS):
                continue
            words.append(self.itos[i])
        return " ".join(words)

    def encode_batch(self, captions: Sequence[str]) -> np.ndarray:
        """(B, T) int array of caption ids + EOS, right-padded with PAD."""
        seqs = [self.encode(c) for c in captions]
        T = max(len(s) for s in seqs)
        out = np.full((len(seqs), T), PAD, dtype=np.int64)
        for i, s in enumerate(seqs):
            out[i, :len(s)] = s
        return out

    def to_json(self) -> str:
        return json.dumps({"max_len": self.max_len, "tokens": self.itos[len(SPECIALS):]})

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        obj = json.loads(text)
        return cls(obj["tokens"], obj["max_len"])

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())


def build_vocab(captions: Iterable[str], min_freq: int = 5, max_len: int = 16) -> Vocab:
    """Keep tokens seen at least ``min_freq`` times; order by count then spelling."""
    counts = Counter()
    n = 0
    for cap in captions:
        counts.update(tokenize(cap))
        n += 1
    if n == 0:
        raise ContractError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocab(kept, max_len)
