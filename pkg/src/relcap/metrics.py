"""CIDEr-D and corpus BLEU over token sequences.

Tokens may be strings or ints; both metrics only compare tokens for
equality, so any consistent relabeling leaves scores unchanged.
"""
from __future__ import annotations

import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Hashable, Sequence

from .errors import ContractError

Tokens = Sequence[Hashable]


class EmptyCandidateWarning(UserWarning):
    pass


def ngram_counts(tokens: Tokens, n: int = 4) -> Counter:
    tokens = tuple(tokens)
    out = Counter()
    for k in range(1, n + 1):
        for i in range(len(tokens) - k + 1):
            out[tokens[i:i + k]] += 1
    return out


@dataclass
class NgramStats:
    """Document frequencies of n-grams over a reference corpus (one document per image)."""

    df: Counter = field(default_factory=Counter)
    n_docs: int = 0
    n: int = 4

    @classmethod
    def from_references(cls, corpus: Sequence[Sequence[Tokens]], n: int = 4) -> "NgramStats":
        df = Counter()
        for refs in corpus:
            seen = set()
            for ref in refs:
                seen.update(ngram_counts(ref, n))
            df.update(seen)
        return cls(df, len(corpus), n)

    @property
    def log_docs(self) -> float:
        return math.log(float(self.n_docs)) if self.n_docs else 0.0


def _tfidf(counts: Counter, stats: NgramStats):
    vec = [dict() for _ in range(stats.n)]
    norm = [0.0] * stats.n
    for gram, tf in counts.items():
        w = tf * (stats.log_docs - math.log(max(1.0, stats.df.get(gram, 0.0))))
        vec[len(gram) - 1][gram] = w
        norm[len(gram) - 1] += w * w
    return vec, [math.sqrt(x) for x in norm]


def cider_d(candidate: Tokens, references: Sequence[Tokens], stats: NgramStats,
            sigma: float = 6.0) -> float:
    """CIDEr-D of one candidate: clipped tf-idf cosine per n-gram order with a
    gaussian length penalty, averaged over references and orders, times 10."""
    if not references:
        raise ContractError("cider_d needs at least one reference")
    if len(candidate) == 0:
        warnings.warn("empty candidate scores 0", EmptyCandidateWarning, stacklevel=2)
        return 0.0
    n = stats.n
    vc, nc = _tfidf(ngram_counts(candidate, n), stats)
    total = [0.0] * n
    for ref in references:
        vr, nr = _tfidf(ngram_counts(ref, n), stats)
        delta = float(len(candidate) - len(ref))
        penalty = math.exp(-(delta ** 2) / (2.0 * sigma ** 2))
        for k in range(n):
            val = 0.0
            for gram, w in vc[k].items():
                r = vr[k].get(gram, 0.0)
                val += min(w, r) * r
            if nc[k] != 0.0 and nr[k] != 0.0:
                val /= nc[k] * nr[k]
            total[k] += val * penalty
    return 10.0 * sum(total) / n / len(references)


def corpus_cider_d(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
                   stats: NgramStats | None = None, sigma: float = 6.0):
    """(mean score, per-image scores); document frequencies default to ``references``."""
    if len(candidates) != len(references):
        raise ContractError("candidates and references are not aligned")
    stats = stats or NgramStats.from_references(references)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EmptyCandidateWarning)
        scores = [cider_d(c, r, stats, sigma) for c, r in zip(candidates, references)]
    return (sum(scores) / len(scores) if scores else 0.0), scores


def bleu(candidates: Sequence[Tokens], references: Sequence[Sequence[Tokens]],
         max_n: int = 4) -> float:
    """Corpus BLEU: geometric mean of clipped n-gram precisions times the
    brevity penalty (closest reference length, shorter on ties). No smoothing."""
    if not candidates:
        raise ContractError("bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise ContractError("candidates and references are not aligned")
    matched = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, refs in zip(candidates, references):
        if not refs:
            raise ContractError("every candidate needs at least one reference")
        cand = tuple(cand)
        cc = ngram_counts(cand, max_n)
        best = Counter()
        for ref in refs:
            for gram, c in ngram_counts(ref, max_n).items():
                best[gram] = max(best[gram], c)
        for gram, c in cc.items():
            matched[len(gram) - 1] += min(c, best[gram])
            totals[len(gram) - 1] += c
        cand_len += len(cand)
        ref_len += min((abs(len(r) - len(cand)), len(r)) for r in refs)[1]
    if min(totals) == 0 or min(matched) == 0:
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, totals)) / max_n
    bp = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_p)
