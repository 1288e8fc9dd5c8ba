# A tour of the graph side: boxes, the edge filter, labels and one gated GCN layer.
# Run with: python3 demos/01_semantic_graph.py

# %%
import numpy as np

from relcap.config import Config
from relcap.data import generate_synthetic_dataset, sample_graph
from relcap.gcn import gated_gcn_layer, init_gcn_layer, neighborhood_gates
from relcap.geometry import BBox, centroid_distance, edge_removed, iou, longest_edge
from relcap.numcore import ParamStore, Scope, Tape

# %% Two boxes that touch nothing: the filter drops the pair once the centres
# are farther apart than the longest side involved.
a = BBox(0, 0, 10, 10)
b = BBox(30, 0, 40, 10)
print("iou", iou(a, b), "distance", centroid_distance(a, b), "longest", longest_edge(a, b))
print("removed?", edge_removed(a, b))

c = BBox(5, 5, 20, 20)
print("a/c overlap", round(iou(a, c), 4), "removed?", edge_removed(a, c))

# %% One synthetic image. The caption names a subject, an action and an object;
# the action lives only in the recorded relation.
cfg = Config()
sample = generate_synthetic_dataset(cfg, seed=0, n=1)[0]
print(sample.captions[0])
for i, r in enumerate(sample.regions):
    print(i, r.kind, r.bbox)
print("relations", sample.relations)

# %% The reduced graph, labeled by the scripted labeler (background elsewhere).
graph = sample_graph(sample, cfg)
print(graph.dumps())
print(f"{len(graph.edges)} of {sample.k * (sample.k - 1)} ordered pairs survive")

# %% A gated GCN layer on top. Gates over each neighbourhood are a softmax,
# so every node's weights sum to one.
rng = np.random.default_rng(0)
store = ParamStore()
init_gcn_layer(store, "gcn", cfg.v, cfg.d, len(graph.labels), rng)
tape = Tape(store, grad=False)
V = tape.const(sample.features)
out = gated_gcn_layer(graph, V, Scope(tape, "gcn"))
print("output", out.shape, "nonnegative:", bool((out.data >= 0).all()))

gates = neighborhood_gates(graph, V, Scope(tape, "gcn"))
for node, g in gates.items():
    print(node, np.round(g, 3), "sum", round(float(g.sum()), 12))
