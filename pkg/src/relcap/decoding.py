"""Greedy, sampled and beam-search decoding over an abstract step function.

A decoder here is anything with

* ``start(n)`` -> state for ``n`` parallel hypotheses,
* ``step(tokens, state)`` -> (log-probabilities of shape (n, V), new state),
* ``reorder(state, idx)`` -> state whose row i is row ``idx[i]`` of ``state``.

Sequences never contain BOS; EOS terminates a sequence and is kept in the
returned token list only via the ``eos`` flag of :class:`Hypothesis`.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

import numpy as np

from .errors import ContractError
from .vocab import BOS, EOS


class StepDecoder(Protocol):
    def start(self, n: int): ...
    def step(self, tokens: np.ndarray, state): ...
    def reorder(self, state, idx: np.ndarray): ...


@dataclass
class Hypothesis:
    tokens: list[int]
    score: float
    eos: bool


def _run(dec: StepDecoder, n: int, max_len: int, pick):
    state = dec.start(n)
    tokens = np.full(n, BOS, dtype=np.int64)
    out = [[] for _ in range(n)]
    scores = np.zeros(n)
    done = np.zeros(n, bool)
    ended = np.zeros(n, bool)
    for _ in range(max_len):
        logp, state = dec.step(tokens, state)
        tokens = pick(logp)
        for i in np.flatnonzero(~done):
            scores[i] += logp[i, tokens[i]]
            if tokens[i] == EOS:
                done[i] = ended[i] = True
            else:
                out[i].append(int(tokens[i]))
        if done.all():
            break
    return [Hypothesis(out[i], float(scores[i]), bool(ended[i])) for i in range(n)]


def greedy_decode(dec: StepDecoder, n: int, max_len: int) -> list[Hypothesis]:
    """Argmax decoding of ``n`` independent rows (ties go to the lowest id).

    A row that reaches ``max_len`` words stops without an EOS step.
    """
    return _run(dec, n, max_len, lambda logp: logp.argmax(axis=-1))


def sample_decode(dec: StepDecoder, n: int, max_len: int,
                  rng: np.random.Generator) -> list[Hypothesis]:
    """Multinomial sampling of ``n`` rows, scored by summed log-probabilities."""
    def pick(logp):
        p = np.exp(logp - logp.max(axis=-1, keepdims=True))
        cdf = np.cumsum(p, axis=-1)
        u = rng.random(len(logp)) * cdf[:, -1]
        return np.minimum((cdf < u[:, None]).sum(axis=-1), logp.shape[1] - 1)
    return _run(dec, n, max_len, pick)


def beam_search(dec: StepDecoder, beam: int = 3, max_len: int = 16) -> Hypothesis:
    """Length-capped beam search over summed log-probabilities for one input.

    The live beam is refilled from the best non-EOS extensions each step;
    EOS extensions that rank inside the top ``beam`` retire as finished.
    Search stops once no live hypothesis can beat the best finished one
    (scores only decrease) or when live hypotheses reach ``max_len`` tokens,
    at which point they count as finished.
    """
    if beam < 1:
        raise ContractError("beam must be >= 1")
    state = dec.start(beam)
    live_tokens = [[] for _ in range(beam)]
    live_scores = np.full(beam, -np.inf)
    live_scores[0] = 0.0
    prev = np.full(beam, BOS, dtype=np.int64)
    finished: list[Hypothesis] = []
    for _ in range(max_len):
        logp, state = dec.step(prev, state)
        V = logp.shape[1]
        total = live_scores[:, None] + logp
        flat = total.reshape(-1)
        order = np.argsort(-flat, kind="stable")
        order = order[np.isfinite(flat[order])]
        rows, cols = np.divmod(order, V)
        for r, c, s in zip(rows[:beam], cols[:beam], flat[order[:beam]]):
            if c == EOS:
                finished.append(Hypothesis(list(live_tokens[r]), float(s), True))
        keep = [(r, c, s) for r, c, s in zip(rows, cols, flat[order]) if c != EOS][:beam]
        if not keep:
            break
        best_finished = max((h.score for h in finished), default=-np.inf)
        if best_finished >= keep[0][2]:
            break
        idx = np.zeros(beam, dtype=np.int64)
        new_scores = np.full(beam, -np.inf)
        new_tokens = [[] for _ in range(beam)]
        prev = np.full(beam, EOS, dtype=np.int64)
        for j, (r, c, s) in enumerate(keep):
            idx[j] = r
            new_scores[j] = s
            new_tokens[j] = live_tokens[r] + [int(c)]
            prev[j] = c
        state = dec.reorder(state, idx)
        live_tokens, live_scores = new_tokens, new_scores
        if len(new_tokens[0]) == max_len:
            # reached the cap: remaining live hypotheses finish without EOS
            for j in range(len(keep)):
                finished.append(Hypothesis(live_tokens[j], float(live_scores[j]), False))
            break
    if not finished:
        j = int(np.argmax(live_scores))
        return Hypothesis(live_tokens[j], float(live_scores[j]), False)
    return max(finished, key=lambda h: h.score)
