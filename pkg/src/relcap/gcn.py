"""Direction- and label-aware graph convolution with edge-wise gates.

Each stored edge (s -> o, label l) sends two messages: one into s built
from v_o with the outgoing-direction matrix, one into o built from v_s with
the incoming-direction matrix. Every node also messages itself through the
self-loop matrix and a reserved self-loop label bias. In the gated layer
the messages into a node are weighted by a softmax over the node's
incoming terms of ``w_g . tanh(W_a v_sub + W_b v_obj)``.

Parameters for one layer live under a prefix in a ParamStore:
``W_dir`` (3, d, v), ``b_lab`` (L, d) with row L-1 reserved for self-loops,
``W_a`` and ``W_b`` (d, v), ``w_g`` (d,).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .errors import ContractError, DimensionError
from .geometry import SemanticGraph
from .numcore import ParamStore, Scope, Tape, Value

OUTGOING, INCOMING, SELF = 0, 1, 2


def init_gcn_layer(store: ParamStore, prefix: str, v: int, d: int, n_labels: int,
                   rng: np.random.Generator):
    """``n_labels`` counts relation labels; one extra self-loop row is added."""
    store.add(f"{prefix}.W_dir", np.stack([nc.glorot(rng, (d, v)) for _ in range(3)]))
    store.add(f"{prefix}.b_lab", np.zeros((n_labels + 1, d)))
    store.add(f"{prefix}.W_a", nc.glorot(rng, (d, v)))
    store.add(f"{prefix}.W_b", nc.glorot(rng, (d, v)))
    store.add(f"{prefix}.w_g", nc.glorot(rng, (d,)))


@dataclass
class GraphBatch:
    """Message terms of several graphs over a flattened (batch * k_pad) node axis."""

    n_nodes: int
    recv: np.ndarray
    src: np.ndarray
    direction: np.ndarray
    label: np.ndarray
    sub: np.ndarray
    obj: np.ndarray

    @classmethod
    def from_graphs(cls, graphs: Sequence[SemanticGraph],
                    k_pad: int | None = None) -> "GraphBatch":
        k_pad = k_pad or max(g.k for g in graphs)
        recv, src, direction, label, sub, obj = ([] for _ in range(6))
        for b, g in enumerate(graphs):
            if g.k > k_pad:
                raise ContractError(f"graph with {g.k} nodes exceeds padding {k_pad}")
            off = b * k_pad
            for i in range(g.k):
                recv.append(off + i); src.append(off + i); direction.append(SELF)
                label.append(-1); sub.append(off + i); obj.append(off + i)
            for s, o, lab in g.edges:
                if lab is None:
                    raise ContractError(f"edge ({s}, {o}) has no label")
                s_, o_ = off + s, off + o
                recv += [s_, o_]
                src += [o_, s_]
                direction += [OUTGOING, INCOMING]
                label += [lab, lab]
                sub += [s_, s_]
                obj += [o_, o_]
        arr = lambda x: np.asarray(x, dtype=np.int64)  # noqa: E731
        return cls(len(graphs) * k_pad, arr(recv), arr(src), arr(direction),
                   arr(label), arr(sub), arr(obj))


def _messages(V: Value, gb: GraphBatch, p: Scope) -> Value:
    W = p["W_dir"]
    b_lab = p["b_lab"]
    # self-loops use label -1, i.e. the reserved last row of b_lab
    if gb.label.size and gb.label.max() >= b_lab.shape[0] - 1:
        raise ContractError(
            f"label id {int(gb.label.max())} out of range for {b_lab.shape[0] - 1} relation labels")
    if V.shape[-1] != W.shape[2]:
        raise DimensionError(f"node features {V.shape} do not match W_dir {W.shape}")
    # (3, N, d): every node transformed by each direction matrix
    per_dir = nc.matmul(nc.reshape(V, (1,) + V.shape), nc.transpose(W, (0, 2, 1)))
    return nc.index(per_dir, (gb.direction, gb.src)) + nc.take(b_lab, gb.label)


def _gate_scores(V: Value, sub, obj, p: Scope) -> Value:
    A = nc.linear(V, p["W_a"])
    B = nc.linear(V, p["W_b"])
    h = nc.tanh(nc.take(A, sub) + nc.take(B, obj))
    return nc.reshape(nc.linear(h, nc.reshape(p["w_g"], (1, -1))), (-1,))


def gcn_forward(V: Value, gb: GraphBatch, p: Scope, gated: bool = True,
                unit_gates: bool = False, return_gates: bool = False):
    """One layer on flattened node features ``V`` of shape (gb.n_nodes, v_in)."""
    msg = _messages(V, gb, p)
    gates = None
    if gated:
        if unit_gates:
            gates = V.tape.const(np.ones(len(gb.recv)))
        else:
            gates = nc.segment_softmax(_gate_scores(V, gb.sub, gb.obj, p), gb.recv, gb.n_nodes)
        msg = msg * nc.reshape(gates, (-1, 1))
    out = nc.relu(nc.segment_sum(msg, gb.recv, gb.n_nodes))
    return (out, gates) if return_gates else out


def _single(tape, g, V):
    V = V if isinstance(V, Value) else tape.const(V)
    if V.ndim != 2 or V.shape[0] != g.k:
        raise DimensionError(f"graph has {g.k} nodes but features have shape {V.shape}")
    return V


def gcn_layer(g: SemanticGraph, V, p: Scope) -> Value:
    """Ungated layer: ReLU of the summed direction/label messages."""
    V = _single(p.tape, g, V)
    return gcn_forward(V, GraphBatch.from_graphs([g]), p, gated=False)


def gated_gcn_layer(g: SemanticGraph, V, p: Scope, unit_gates: bool = False) -> Value:
    V = _single(p.tape, g, V)
    return gcn_forward(V, GraphBatch.from_graphs([g]), p, gated=True, unit_gates=unit_gates)


def edge_gate(v_sub, v_obj, p: Scope) -> Value:
    """Unnormalized gate score for one (subject, object) pair."""
    t = p.tape
    V = nc.concat([nc.reshape(t.const(v_sub), (1, -1)), nc.reshape(t.const(v_obj), (1, -1))], axis=0)
    return nc.reshape(_gate_scores(V, np.array([0]), np.array([1]), p), ())


def neighborhood_gates(g: SemanticGraph, V, p: Scope) -> dict[int, np.ndarray]:
    """Normalized gates grouped by receiving node (for inspection and tests)."""
    V = _single(p.tape, g, V)
    gb = GraphBatch.from_graphs([g])
    _, gates = gcn_forward(V, gb, p, gated=True, return_gates=True)
    return {i: gates.data[gb.recv == i] for i in range(g.k)}


def encode_explicit(V: Value, gb: GraphBatch, tape: Tape, n_layers: int = 1,
                    prefix: str = "gcn", gated: bool = True) -> Value:
    """Stack of gated layers over a batch: (B, k_pad, v) -> (B, k_pad, d)."""
    B, K, _ = V.shape
    x = nc.reshape(V, (B * K, -1))
    for layer in range(n_layers):
        x = gcn_forward(x, gb, Scope(tape, f"{prefix}.{layer}"), gated=gated)
    return nc.reshape(x, (B, K, -1))
