"""Small hand-checkable models shared by several test modules."""
import itertools

import numpy as np

from relcap import numcore as nc
from relcap.decoding import Hypothesis
from relcap.numcore import ParamStore, Tape

WORDS = (4, 5, 6)   # three word ids after the specials


class TabularPolicy:
    """Two-token captions over three words: p(w1) * p(w2 | w1), no EOS.

    ``batch`` is just the number of rows.
    """

    def __init__(self, rng, scale=1.0):
        self.params = ParamStore()
        self.params.add("theta1", rng.normal(scale=scale, size=3))
        self.params.add("theta2", rng.normal(scale=scale, size=(3, 3)))

    def probs(self):
        p1 = _softmax(self.params["theta1"])
        p2 = _softmax(self.params["theta2"])
        return p1, p2

    def sample(self, batch, rng):
        p1, p2 = self.probs()
        a = rng.choice(3, size=batch, p=p1)
        u = rng.random(batch)
        b = (np.cumsum(p2[a], axis=1) < u[:, None]).sum(axis=1).clip(max=2)
        return [Hypothesis([WORDS[i], WORDS[j]], 0.0, False) for i, j in zip(a, b)]

    def greedy(self, batch):
        p1, p2 = self.probs()
        a = int(p1.argmax())
        b = int(p2[a].argmax())
        return [Hypothesis([WORDS[a], WORDS[b]], 0.0, False) for _ in range(batch)]

    def log_prob(self, tape: Tape, batch, hyps):
        idx = np.array([[WORDS.index(t) for t in h.tokens] for h in hyps])
        lp1 = nc.log_softmax(tape["theta1"])
        lp2 = nc.log_softmax(nc.take(tape["theta2"], idx[:, 0]))
        return nc.take(lp1, idx[:, 0]) + nc.index(lp2, (np.arange(len(idx)), idx[:, 1]))

    def sequences(self):
        return [[WORDS[i], WORDS[j]] for i, j in itertools.product(range(3), range(3))]

    def exact_scst_gradient(self, reward):
        """-grad E[r] by enumerating all nine captions."""
        seqs = self.sequences()
        hyps = [Hypothesis(s, 0.0, False) for s in seqs]
        self.params.zero_grads()
        tape = Tape(self.params)
        logp = self.log_prob(tape, len(seqs), hyps)
        weights = np.exp(logp.data) * np.array([reward(s) for s in seqs])
        tape.backward(-nc.sum(logp * weights))
        return {n: self.params.grads[n].copy() for n in self.params.names()}


def _softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
