"""Finite-difference checks of the three composite gradients on tiny models.

Each ``check_*`` returns the max relative error of :func:`numcore.grad_check`.
Step size: with losses of order 1 a step of 1e-6 leaves ~1e-9 of rounding
noise in each difference quotient, which swamps gradient entries below 1e-5;
``EPS`` balances that against the O(eps^2) truncation error. Entries below
~1e-7 remain at the mercy of rounding, so the toy models are built from a
fixed ``TOY_SEED``.
"""
from __future__ import annotations

import numpy as np

from . import numcore as nc
from .config import Config
from .data import CaptionSample
from .geometry import BBox, Region, SemanticGraph
from .gcn import gated_gcn_layer, init_gcn_layer
from .dma import DecoderState
from .model import CaptionModel, xe_loss
from .numcore import ParamStore, Scope, Tape, grad_check
from .region_bert import PretrainBatch, init_encoder, pretrain_losses
from .vocab import EOS, Vocab

# The key bias shifts every score of a query by the same amount, so softmax
# cancels it and its gradient is identically zero; a central difference
# there only measures rounding noise.
SHIFT_INVARIANT = (".k.b",)
EPS = 1e-4
TOY_SEED = 1


def checked_names(store: ParamStore) -> list[str]:
    return [n for n in store.names() if not n.endswith(SHIFT_INVARIANT)]


def tiny_graph() -> SemanticGraph:
    return SemanticGraph(4, [(0, 1, 1), (1, 0, 2), (1, 2, 0), (3, 2, 2), (0, 3, 1)],
                         ("background", "riding", "near"))


def check_gcn(seed: int = TOY_SEED, eps: float = EPS) -> float:
    rng = np.random.default_rng(seed)
    g = tiny_graph()
    store = ParamStore()
    init_gcn_layer(store, "gcn", 3, 3, len(g.labels), rng)
    store["gcn.b_lab"] = rng.normal(size=store["gcn.b_lab"].shape)
    V = rng.normal(size=(4, 3))
    R = rng.normal(size=(4, 3))

    def f(ps):
        t = Tape(ps)
        out = gated_gcn_layer(g, t.const(V), Scope(t, "gcn"))
        return nc.sum(out * R)
    return grad_check(f, store, eps)


def tiny_pretrain_batch(rng) -> PretrainBatch:
    B, K, v = 2, 3, 3
    mask = np.array([[True, True, True], [True, True, False]])
    feats = rng.normal(size=(B, K, v)) * mask[..., None]
    pos = rng.uniform(size=(B, K, 6)) * mask[..., None]
    return PretrainBatch(glob=rng.normal(size=(B, v)), feats=feats, pos=pos, mask=mask,
                         y=np.array([1.0, 0.0]), mrm_rows=np.array([0, 1]),
                         mrm_cols=np.array([2, 0]), originals=rng.normal(size=(2, v)))


def check_encoder(seed: int = TOY_SEED, eps: float = EPS) -> float:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_encoder(store, 3, 4, 1, rng, "bert")
    for name in store.names():
        if name.endswith((".b", ".g")):   # move biases and LN gains off their init values
            store[name] = store[name] + rng.normal(scale=0.1, size=store[name].shape)
    pb = tiny_pretrain_batch(rng)

    def f(ps):
        t = Tape(ps)
        l_mim, l_mrm = pretrain_losses(t, pb, heads=2)
        return l_mim + l_mrm
    return grad_check(f, store, eps, names=checked_names(store))


TINY_CONFIG = dict(v=3, d=4, att_dim=4, heads=2, blocks=1, embed=3, k_max=3, max_len=4)


def tiny_samples(rng, v: int = 3) -> list[CaptionSample]:
    out = []
    for i, cap in enumerate(("a dog b", "b a")):
        boxes = [BBox(10, 10, 60, 50), BBox(40, 30, 90, 80), BBox(5, 60, 30, 95)][:3 - i]
        regions = [Region.from_box(b, rng.normal(size=v), 100, 100) for b in boxes]
        rel = [(0, 1, "riding")]
        out.append(CaptionSample(f"t{i}", 100, 100, rng.normal(size=v), regions, [cap], rel))
    return out


def check_decoder(seed: int = TOY_SEED, fusion: str = "dma", eps: float = EPS) -> float:
    """Both encoders, then one decoder step from a random LSTM state, then xe_loss."""
    rng = np.random.default_rng(seed)
    cfg = Config(**TINY_CONFIG, fusion=fusion)
    vocab = Vocab(["a", "b", "dog"], max_len=cfg.max_len)
    model = CaptionModel(cfg, len(vocab), rng=rng)
    store = model.params
    for name in store.names():
        if name.endswith((".b", ".g", "b_lab")):
            store[name] = store[name] + rng.normal(scale=0.1, size=store[name].shape)
    samples = tiny_samples(rng, cfg.v)
    batch = model.batch(samples)
    state = rng.normal(scale=0.5, size=(4, len(samples), cfg.d))
    prev = np.array([vocab.stoi["a"], vocab.stoi["b"]])
    target = np.array([[vocab.stoi["dog"]], [EOS]])

    def f(ps):
        t = Tape(ps)
        ctx = model.encode(t, batch)
        logits, _ = model.step(t, ctx, prev, DecoderState(*(t.const(x) for x in state)))
        return xe_loss(nc.reshape(nc.log_softmax(logits), (len(samples), 1, -1)), target)
    return grad_check(f, store, eps, names=checked_names(store))


def run_all(seed: int = TOY_SEED) -> dict[str, float]:
    return {"gated_gcn_layer": check_gcn(seed),
            "encoder+mim+mrm": check_encoder(seed),
            "decoder+xe": check_decoder(seed)}
