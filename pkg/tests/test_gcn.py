import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relcap.errors import ContractError, DimensionError
from relcap.gcn import edge_gate, gated_gcn_layer, gcn_layer, init_gcn_layer, neighborhood_gates
from relcap.geometry import SemanticGraph
from relcap.numcore import ParamStore, Scope, Tape

LABELS = ("background", "riding", "near")


def make_params(rng, v=3, d=3, n_labels=len(LABELS), scale=1.0):
    store = ParamStore()
    init_gcn_layer(store, "g", v, d, n_labels, rng)
    for name in store.names():
        store[name] = rng.normal(scale=scale, size=store[name].shape)
    return store


def scope(store):
    return Scope(Tape(store, grad=False), "g")


def oracle(g: SemanticGraph, V, P, gated=True):
    """Straight-line evaluation: per node, list its messages and gate scores."""
    W, b, Wa, Wb, wg = P["g.W_dir"], P["g.b_lab"], P["g.W_a"], P["g.W_b"], P["g.w_g"]
    self_row = b.shape[0] - 1
    out = np.zeros((g.k, W.shape[1]))
    for i in range(g.k):
        terms = [(W[2] @ V[i] + b[self_row], i, i)]
        for s, o, lab in g.edges:
            if s == i:
                terms.append((W[0] @ V[o] + b[lab], s, o))
            if o == i:
                terms.append((W[1] @ V[s] + b[lab], s, o))
        if gated:
            scores = [float(wg @ np.tanh(Wa @ V[s] + Wb @ V[o])) for _, s, o in terms]
            m = max(scores)
            e = [math.exp(x - m) for x in scores]
            gates = [x / sum(e) for x in e]
        else:
            gates = [1.0] * len(terms)
        total = sum(gk * msg for gk, (msg, _, _) in zip(gates, terms))
        out[i] = np.maximum(total, 0.0)
    return out


@st.composite
def graphs(draw, max_k=6, n_labels=len(LABELS)):
    k = draw(st.integers(1, max_k))
    pairs = [(i, j) for i in range(k) for j in range(k) if i != j]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs))) if pairs else []
    labs = draw(st.lists(st.integers(0, n_labels - 1), min_size=len(chosen), max_size=len(chosen)))
    return SemanticGraph(k, [(s, d, lab) for (s, d), lab in zip(chosen, labs)], LABELS)


def test_isolated_node_hand_values():
    store = ParamStore()
    init_gcn_layer(store, "g", 2, 2, 1, np.random.default_rng(0))
    store["g.W_dir"] = np.stack([np.zeros((2, 2)), np.zeros((2, 2)), [[1.0, 2.0], [0.0, -1.0]]])
    store["g.b_lab"] = np.array([[9.0, 9.0], [0.5, 0.5]])
    g = SemanticGraph(1, [], ("only",))
    V = np.array([[1.0, 1.0]])
    # W_3 v + b_self = (3.5, -0.5)
    np.testing.assert_array_equal(gcn_layer(g, V, scope(store)).data, [[3.5, 0.0]])
    np.testing.assert_array_equal(gated_gcn_layer(g, V, scope(store)).data, [[3.5, 0.0]])


def test_zero_params_give_zero_output(rng):
    store = make_params(rng, scale=0.0)
    g = SemanticGraph(3, [(0, 1, 1), (2, 1, 0)], LABELS)
    assert not gated_gcn_layer(g, rng.normal(size=(3, 3)), scope(store)).data.any()
    assert not gcn_layer(g, rng.normal(size=(3, 3)), scope(store)).data.any()


def test_edge_gate_examples(rng):
    store = ParamStore()
    init_gcn_layer(store, "g", 1, 1, 1, rng)
    store["g.W_a"] = np.array([[2.0]])
    store["g.W_b"] = np.array([[1.0]])
    store["g.w_g"] = np.array([1.0])
    assert edge_gate([0.1], [0.3], scope(store)).item() == pytest.approx(math.tanh(0.5), abs=1e-15)
    assert edge_gate([0.0], [0.0], scope(store)).item() == 0.0
    store["g.w_g"] = np.array([0.0])
    assert edge_gate([0.4], [-2.0], scope(store)).item() == 0.0


def test_uniform_gates_average_identical_messages(rng):
    store = make_params(rng)
    store["g.w_g"] = np.zeros(3)
    Wshared = rng.normal(size=(3, 3))
    store["g.W_dir"] = np.stack([Wshared] * 3)
    store["g.b_lab"] = np.tile(rng.normal(size=3), (len(LABELS) + 1, 1))
    g = SemanticGraph(3, [(0, 1, 1), (2, 1, 2), (1, 2, 0)], LABELS)
    V = np.tile(rng.normal(size=3), (3, 1))
    gates = neighborhood_gates(g, V, scope(store))
    # node 1: self-loop, two incoming edges, one outgoing
    np.testing.assert_allclose(gates[1], np.full(4, 0.25), rtol=0, atol=1e-15)
    expected = np.maximum(Wshared @ V[0] + store["g.b_lab"][0], 0)
    np.testing.assert_allclose(gated_gcn_layer(g, V, scope(store)).data, np.tile(expected, (3, 1)),
                               atol=1e-14)


def test_self_loop_only_gate_is_one(rng):
    store = make_params(rng)
    g = SemanticGraph(2, [], LABELS)
    gates = neighborhood_gates(g, rng.normal(size=(2, 3)), scope(store))
    assert gates[0].tolist() == [1.0] and gates[1].tolist() == [1.0]


def test_three_node_scripted_against_oracle(rng):
    store = make_params(rng, v=2, d=2)
    g = SemanticGraph(3, [(0, 1, 1), (1, 2, 2), (2, 0, 0), (1, 0, 1)], LABELS)
    V = rng.normal(size=(3, 2))
    np.testing.assert_allclose(gated_gcn_layer(g, V, scope(store)).data, oracle(g, V, store),
                               rtol=0, atol=1e-13)
    np.testing.assert_allclose(gcn_layer(g, V, scope(store)).data, oracle(g, V, store, gated=False),
                               rtol=0, atol=1e-13)


def test_label_out_of_range_is_error(rng):
    store = make_params(rng, n_labels=2)
    g = SemanticGraph(2, [(0, 1, 2)], LABELS)
    with pytest.raises(ContractError):
        gated_gcn_layer(g, rng.normal(size=(2, 3)), scope(store))


def test_feature_shape_mismatch(rng):
    store = make_params(rng)
    g = SemanticGraph(2, [(0, 1, 0)], LABELS)
    with pytest.raises(DimensionError):
        gated_gcn_layer(g, rng.normal(size=(3, 3)), scope(store))
    with pytest.raises(DimensionError):
        gated_gcn_layer(g, rng.normal(size=(2, 4)), scope(store))


@given(graphs(), st.integers(0, 2**32 - 1))
def test_matches_oracle(g, seed):
    rng = np.random.default_rng(seed)
    store = make_params(rng)
    V = rng.normal(size=(g.k, 3))
    np.testing.assert_allclose(gated_gcn_layer(g, V, scope(store)).data, oracle(g, V, store),
                               rtol=0, atol=1e-10)


@given(graphs(), st.integers(0, 2**32 - 1))
def test_gates_sum_to_one(g, seed):
    rng = np.random.default_rng(seed)
    store = make_params(rng, scale=3.0)
    gates = neighborhood_gates(g, rng.normal(size=(g.k, 3)), scope(store))
    for i, gi in gates.items():
        assert abs(gi.sum() - 1.0) < 1e-12
        assert (gi >= 0).all()


@given(graphs(), st.integers(0, 2**32 - 1))
def test_unit_gates_equal_ungated_layer_bitwise(g, seed):
    rng = np.random.default_rng(seed)
    store = make_params(rng)
    V = rng.normal(size=(g.k, 3))
    a = gated_gcn_layer(g, V, scope(store), unit_gates=True).data
    b = gcn_layer(g, V, scope(store)).data
    assert np.array_equal(a, b)


@given(graphs(), st.integers(0, 2**32 - 1), st.data())
def test_permutation_equivariance_exact(g, seed, data):
    rng = np.random.default_rng(seed)
    store = make_params(rng)
    V = rng.normal(size=(g.k, 3))
    perm = np.array(data.draw(st.permutations(range(g.k))))   # node i becomes perm[i]
    inv = np.argsort(perm)
    g2 = SemanticGraph(g.k, [(int(perm[s]), int(perm[d]), lab) for s, d, lab in g.edges], LABELS)
    out = gated_gcn_layer(g, V, scope(store)).data
    out2 = gated_gcn_layer(g2, V[inv], scope(store)).data
    assert np.array_equal(out2, out[inv])


@given(graphs(), st.integers(0, 2**32 - 1), st.data())
def test_edge_deletion_locality(g, seed, data):
    rng = np.random.default_rng(seed)
    store = make_params(rng)
    V = rng.normal(size=(g.k, 3))
    m = data.draw(st.integers(0, g.k - 1))
    cut = SemanticGraph(g.k, [e for e in g.edges if m not in e[:2]], LABELS)
    before = gated_gcn_layer(g, V, scope(store)).data
    after = gated_gcn_layer(cut, V, scope(store)).data
    touched = {s for s, d, _ in g.edges if d == m} | {d for s, d, _ in g.edges if s == m} | {m}
    for i in range(g.k):
        if i not in touched:
            assert np.array_equal(before[i], after[i])


def test_gradient_check_four_node_graph():
    from relcap.gradchecks import check_gcn
    assert check_gcn() < 1e-4
