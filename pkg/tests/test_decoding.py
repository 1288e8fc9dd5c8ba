import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relcap.decoding import Hypothesis, beam_search, greedy_decode, sample_decode
from relcap.errors import ContractError
from relcap.vocab import BOS, EOS, PAD


class RecurrentToy:
    """Random tanh recurrence over token embeddings; PAD and BOS are never emitted."""

    def __init__(self, rng, V, h=4, scale=2.0):
        self.E = rng.normal(size=(V, h)) * scale
        self.W = rng.normal(size=(h, h)) * scale / 2
        self.O = rng.normal(size=(V, h)) * scale
        self.h = h

    def start(self, n):
        return np.zeros((n, self.h))

    def step(self, tokens, state):
        state = np.tanh(state @ self.W.T + self.E[tokens])
        z = state @ self.O.T
        z[:, [PAD, BOS]] = -np.inf
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True)), state

    def reorder(self, state, idx):
        return state[idx]


class Scripted:
    """Emits ``seq`` then EOS with probability 1 - tiny at every step."""

    def __init__(self, seq, V=6):
        self.seq = list(seq) + [EOS]
        self.V = V

    def start(self, n):
        return np.zeros(n, dtype=int)

    def step(self, tokens, t):
        lp = np.full((len(t), self.V), np.log(1e-9))
        lp[:, [PAD, BOS]] = -np.inf
        for i, ti in enumerate(t):
            lp[i, self.seq[min(ti, len(self.seq) - 1)]] = np.log(1 - 1e-9 * (self.V - 3))
        return lp, t + 1

    def reorder(self, t, idx):
        return t[idx]


models = st.builds(lambda seed, V: RecurrentToy(np.random.default_rng(seed), V),
                   st.integers(0, 2**32 - 1), st.integers(4, 8))


def test_constant_model_gives_its_sequence():
    h = beam_search(Scripted([4, 5, 4]), beam=3, max_len=16)
    assert h.tokens == [4, 5, 4] and h.eos
    g = greedy_decode(Scripted([4, 5, 4]), 2, 16)
    assert all(x.tokens == [4, 5, 4] and x.eos for x in g)


def test_length_cap_without_eos():
    h = beam_search(Scripted([4] * 30), beam=2, max_len=5)
    assert h.tokens == [4] * 5 and not h.eos
    g = greedy_decode(Scripted([4] * 30), 1, 5)[0]
    assert g.tokens == [4] * 5 and not g.eos


def test_beam_must_be_positive():
    with pytest.raises(ContractError):
        beam_search(Scripted([4]), beam=0)


@given(models, st.integers(1, 6))
def test_beam_one_equals_greedy(model, max_len):
    b = beam_search(model, 1, max_len)
    g = greedy_decode(model, 1, max_len)[0]
    assert b.tokens == g.tokens and b.eos == g.eos
    assert b.score == pytest.approx(g.score, abs=1e-12)


@given(models, st.integers(1, 6))
def test_beam_three_scores_at_least_beam_one(model, max_len):
    assert beam_search(model, 3, max_len).score >= beam_search(model, 1, max_len).score - 1e-12


@given(models, st.integers(1, 5))
def test_beam_score_is_sum_of_step_logprobs(model, max_len):
    h = beam_search(model, 3, max_len)
    state = model.start(1)
    tok = np.array([BOS])
    total = 0.0
    for t in h.tokens + ([EOS] if h.eos else []):
        lp, state = model.step(tok, state)
        total += lp[0, t]
        tok = np.array([t])
    assert total == pytest.approx(h.score, abs=1e-9)


def test_sampling_is_seeded_and_follows_distribution():
    model = RecurrentToy(np.random.default_rng(0), 5, scale=0.5)
    a = sample_decode(model, 4, 6, np.random.default_rng(7))
    b = sample_decode(model, 4, 6, np.random.default_rng(7))
    assert [h.tokens for h in a] == [h.tokens for h in b]
    # first-token frequencies match the first-step distribution
    n = 20_000
    hyps = sample_decode(model, n, 1, np.random.default_rng(1))
    lp, _ = model.step(np.full(1, BOS), model.start(1))
    first = np.array([h.tokens[0] if h.tokens else EOS for h in hyps])
    freq = np.bincount(first, minlength=5) / n
    np.testing.assert_allclose(freq, np.exp(lp[0]), atol=0.015)


def test_hypothesis_dataclass():
    h = Hypothesis([4, 5], -1.5, True)
    assert h.tokens == [4, 5] and h.eos
