import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relcap.errors import ContractError
from relcap.metrics import EmptyCandidateWarning, NgramStats, bleu, cider_d, corpus_cider_d


def brute_cider_d(cand, refs, corpus, sigma=6.0):
    """Dense-vector CIDEr-D over an explicit n-gram index, written out directly."""
    def grams(s, n):
        return [tuple(s[i:i + n]) for i in range(len(s) - n + 1)]

    N = len(corpus)
    scores = []
    for n in range(1, 5):
        index = sorted({g for doc in corpus for r in doc for g in grams(r, n)} | set(grams(cand, n)))
        pos = {g: i for i, g in enumerate(index)}
        df = np.zeros(len(index))
        for doc in corpus:
            for g in {g for r in doc for g in grams(r, n)}:
                df[pos[g]] += 1
        idf = math.log(N) - np.log(np.maximum(df, 1.0))

        def vec(s):
            v = np.zeros(len(index))
            for g in grams(s, n):
                v[pos[g]] += 1
            return v * idf

        c = vec(cand)
        per_ref = []
        for r in refs:
            rv = vec(r)
            num = float(np.minimum(c, rv) @ rv)
            den = np.linalg.norm(c) * np.linalg.norm(rv)
            sim = num / den if den > 0 else num
            per_ref.append(sim * math.exp(-((len(cand) - len(r)) ** 2) / (2 * sigma ** 2)))
        scores.append(sum(per_ref) / len(refs))
    return 10.0 * sum(scores) / 4


CORPUS = [
    [["a", "man", "riding", "a", "horse"], ["a", "person", "on", "a", "horse"]],
    [["a", "dog", "chasing", "a", "ball", "in", "the", "park"]],
    [["a", "man", "holding", "a", "dog"], ["a", "man", "with", "a", "dog"]],
    [["two", "horses", "in", "a", "field"]],
    [["a", "cat", "near", "a", "horse", "in", "the", "park"], ["a", "cat", "and", "a", "horse"]],
]

tokens = st.lists(st.sampled_from(["a", "b", "c", "d", "e"]), min_size=1, max_size=8)


def test_no_overlap_scores_zero():
    stats = NgramStats.from_references(CORPUS)
    assert cider_d(["zebra", "xylophone"], CORPUS[0], stats) == 0.0


def test_identical_to_sole_reference_matches_oracle():
    corpus = [[r[0]] for r in CORPUS]
    stats = NgramStats.from_references(corpus)
    for doc in corpus:
        got = cider_d(doc[0], doc, stats)
        assert got == pytest.approx(brute_cider_d(doc[0], doc, corpus), abs=1e-9)
        assert got > 0


@given(st.integers(0, 4), tokens)
def test_matches_oracle_on_random_candidates(i, cand):
    stats = NgramStats.from_references(CORPUS)
    assert cider_d(cand, CORPUS[i], stats) == pytest.approx(brute_cider_d(cand, CORPUS[i], CORPUS),
                                                          abs=1e-9)


def test_corpus_cider_d_mean():
    cands = [doc[0] for doc in CORPUS]
    mean, scores = corpus_cider_d(cands, CORPUS)
    assert mean == pytest.approx(sum(scores) / 5)
    assert scores == pytest.approx([brute_cider_d(c, d, CORPUS) for c, d in zip(cands, CORPUS)])


def test_idf_monotone_in_document_frequency():
    stats = NgramStats.from_references(CORPUS)
    gram = ("horse",)
    cand = ["a", "horse"]
    refs = [["a", "horse"]]
    base = stats.df[gram]
    weights = []
    for df in (base, 2 * base, 4 * base):
        stats.df[gram] = df
        weights.append(stats.log_docs - math.log(max(1.0, df)))
    assert weights[0] >= weights[1] >= weights[2]
    stats.df[gram] = base
    assert cider_d(cand, refs, stats) >= 0


@given(st.integers(0, 4), tokens, st.data())
def test_reference_permutation_invariance(i, cand, data):
    stats = NgramStats.from_references(CORPUS)
    refs = CORPUS[i] + [["a", "horse"]]
    perm = data.draw(st.permutations(range(len(refs))))
    assert cider_d(cand, [refs[j] for j in perm], stats) == pytest.approx(
        cider_d(cand, refs, stats), rel=1e-12, abs=1e-15)


@given(tokens, st.lists(tokens, min_size=1, max_size=3), st.permutations(["a", "b", "c", "d", "e"]))
def test_relabeling_invariance(cand, refs, perm):
    mapping = dict(zip("abcde", perm))
    relabel = lambda s: [mapping[t] for t in s]  # noqa: E731
    corpus = [refs, [["a", "b"]], [["c", "d", "e"]]]
    corpus2 = [[relabel(r) for r in doc] for doc in corpus]
    s1 = cider_d(cand, refs, NgramStats.from_references(corpus))
    s2 = cider_d(relabel(cand), [relabel(r) for r in refs], NgramStats.from_references(corpus2))
    assert s1 == pytest.approx(s2, rel=1e-12, abs=1e-15)
    assert bleu([cand], [refs]) == pytest.approx(bleu([relabel(cand)], [[relabel(r) for r in refs]]))


@given(tokens, st.integers(0, 2**32 - 1))
def test_self_reference_is_maximal(cand, seed):
    corpus = [[cand], [["a", "b", "c"]], [["b", "d"]], [["e", "a", "a"]]]
    stats = NgramStats.from_references(corpus)
    best = cider_d(cand, [cand], stats)
    rng = np.random.default_rng(seed)
    for _ in range(30):
        other = list(rng.choice(list("abcde"), size=len(cand)))
        assert cider_d(other, [cand], stats) <= best + 1e-12


def test_empty_candidate_warns_and_scores_zero():
    stats = NgramStats.from_references(CORPUS)
    with pytest.warns(EmptyCandidateWarning):
        assert cider_d([], CORPUS[0], stats) == 0.0
    with pytest.raises(ContractError):
        cider_d(["a"], [], stats)


# -- BLEU ----------------------------------------------------------------------------------

def test_bleu_identical_is_one():
    cands = [doc[0] for doc in CORPUS]
    assert bleu(cands, [[c] for c in cands]) == pytest.approx(1.0, abs=1e-15)


def test_bleu_no_overlap_is_zero():
    assert bleu([["x", "y", "z", "w"]], [[["a", "b", "c", "d"]]]) == 0.0


def test_bleu_hand_example():
    # precisions 2/2 and 1/1, candidate length 2 against reference length 5
    got = bleu([["the", "cat"]], [[["the", "cat", "on", "the", "mat"]]], max_n=2)
    assert got == pytest.approx(math.exp(1 - 5 / 2), rel=1e-15)


def test_bleu_clipping_and_closest_length():
    # "the the the" vs "the cat": unigram precision clipped to 1/3, BLEU-1, ref length 2 < 3
    assert bleu([["the"] * 3], [[["the", "cat"]]], max_n=1) == pytest.approx(1 / 3)
    # closest reference length wins: lengths 3 and 7 for a 4-token candidate -> r = 3, no penalty
    cand = ["a", "b", "c", "d"]
    assert bleu([cand], [[["a", "b", "c"], ["a", "b", "c", "d", "e", "f", "g"]]], max_n=1) == 1.0


def test_bleu_errors():
    with pytest.raises(ContractError):
        bleu([], [])
    with pytest.raises(ContractError):
        bleu([["a"]], [])
    with pytest.raises(ContractError):
        bleu([["a"]], [[]])


@given(st.lists(st.tuples(tokens, st.lists(tokens, min_size=1, max_size=3)), min_size=1, max_size=4))
def test_bleu_in_unit_interval(pairs):
    cands, refs = zip(*pairs)
    assert 0.0 <= bleu(list(cands), list(refs)) <= 1.0 + 1e-12
