"""Two-layer attention LSTM caption decoder with Dynamic Mixture Attention.

Per step: the attention LSTM reads [previous language hidden; mean region
feature; word embedding] and yields h_t. Two additive attentions pool the
explicit and implicit region features with h_t, a channel-wise sigmoid
gate over [x_att; m_att; h_t] mixes the two results, and the language LSTM
reads [mixed context; h_t]. A linear layer over the language hidden gives
the vocabulary logits.

``fusion`` selects the mixing rule: ``dma`` (gated), ``add`` (x_att + m_att),
``explicit`` or ``implicit`` (single branch).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import numcore as nc
from .errors import DimensionError
from .numcore import ParamStore, Scope, Value


def init_decoder(store: ParamStore, vocab_size: int, d: int, embed: int, att_dim: int,
                 rng: np.random.Generator, prefix: str = "dec"):
    add = store.add
    add(f"{prefix}.embed", rng.uniform(-0.1, 0.1, size=(vocab_size, embed)))
    att_in = d + d + embed
    add(f"{prefix}.att_lstm.W", nc.glorot(rng, (4 * d, att_in + d)))
    add(f"{prefix}.att_lstm.b", np.zeros(4 * d))
    add(f"{prefix}.lang_lstm.W", nc.glorot(rng, (4 * d, 2 * d + d)))
    add(f"{prefix}.lang_lstm.b", np.zeros(4 * d))
    for name in ("att1", "att2"):
        add(f"{prefix}.{name}.W_feat", nc.glorot(rng, (att_dim, d)))
        add(f"{prefix}.{name}.W_hid", nc.glorot(rng, (att_dim, d)))
        add(f"{prefix}.{name}.w", nc.glorot(rng, (att_dim,)))
    add(f"{prefix}.W_g", nc.glorot(rng, (d, 3 * d)))
    add(f"{prefix}.logit.W", nc.glorot(rng, (vocab_size, d)))
    add(f"{prefix}.logit.b", np.zeros(vocab_size))


def lstm_cell(x: Value, h: Value, c: Value, p: Scope):
    """Standard LSTM cell with input/forget/output gates; returns (h', c')."""
    d = h.shape[-1]
    z = nc.linear(nc.concat([x, h], axis=-1), p["W"], p["b"])
    i = nc.sigmoid(z[..., :d])
    f = nc.sigmoid(z[..., d:2 * d])
    g = nc.tanh(z[..., 2 * d:3 * d])
    o = nc.sigmoid(z[..., 3 * d:])
    c_new = f * c + i * g
    return o * nc.tanh(c_new), c_new


def project_features(F: Value, p: Scope) -> Value:
    """W_feat applied to every region; computed once per caption."""
    return nc.linear(F, p["W_feat"])


def additive_attention(F, h, p: Scope, mask=None, proj: Value | None = None):
    """score_i = w . tanh(W_feat F_i + W_hid h); returns (context, weights).

    Accepts a single image (F: (k, d), h: (d,)) or a batch (F: (B, k, d), h: (B, d)).
    """
    t = p.tape
    F, h = t.const(F), t.const(h)
    single = F.ndim == 2
    if single:
        F = nc.reshape(F, (1,) + F.shape)
        h = nc.reshape(h, (1, -1))
        mask = None if mask is None else np.asarray(mask)[None]
        proj = None if proj is None else nc.reshape(proj, (1,) + proj.shape)
    if F.shape[-1] != p["W_feat"].shape[1]:
        raise DimensionError(f"features {F.shape} vs W_feat {p['W_feat'].shape}")
    if proj is None:
        proj = project_features(F, p)
    hid = nc.linear(h, p["W_hid"])
    B, a = hid.shape
    e = nc.tanh(proj + nc.reshape(hid, (B, 1, a)))
    scores = nc.reshape(nc.linear(e, nc.reshape(p["w"], (1, -1))), (B, -1))
    weights = nc.softmax(scores, mask)
    ctx = nc.reshape(nc.matmul(nc.reshape(weights, (B, 1, -1)), F), (B, -1))
    if single:
        return nc.reshape(ctx, (-1,)), nc.reshape(weights, (-1,))
    return ctx, weights


def dma_gate(x_att, m_att, h, W_g) -> Value:
    """g_t = sigmoid(W_g [x_att; m_att; h]), channel-wise."""
    t = next(v.tape for v in (x_att, m_att, h, W_g) if isinstance(v, Value))
    return nc.sigmoid(nc.linear(nc.concat([t.const(x_att), t.const(m_att), t.const(h)], axis=-1),
                                t.const(W_g)))


def dma_fuse(x_att, m_att, g) -> Value:
    return g * x_att + (1.0 - g) * m_att


class DecoderState(NamedTuple):
    h_att: Value
    c_att: Value
    h_lang: Value
    c_lang: Value


@dataclass
class DecoderContext:
    """Per-caption encoder outputs, prepared once and reused at every step."""

    Vx: Value | None
    Vm: Value | None
    mask: np.ndarray
    mean_feature: Value
    proj_x: Value | None
    proj_m: Value | None


def masked_mean_feature(Vx, Vm, mask) -> Value:
    """Mean over the valid rows of whichever of Vx / Vm are present, jointly."""
    parts = [V for V in (Vx, Vm) if V is not None]
    m = mask[..., None].astype(float)
    total = None
    for V in parts:
        s = nc.sum(V * m, axis=1)
        total = s if total is None else total + s
    count = len(parts) * mask.sum(axis=1, keepdims=True).astype(float)
    return total / count


def prepare_context(Vx, Vm, mask, p: Scope) -> DecoderContext:
    proj_x = project_features(Vx, p.sub("att1")) if Vx is not None else None
    proj_m = project_features(Vm, p.sub("att2")) if Vm is not None else None
    return DecoderContext(Vx, Vm, mask, masked_mean_feature(Vx, Vm, mask), proj_x, proj_m)


def init_state(tape, batch: int, d: int) -> DecoderState:
    z = tape.const(np.zeros((batch, d)))
    return DecoderState(z, z, z, z)


def fuse(ctx: DecoderContext, h: Value, p: Scope, fusion: str, trace: dict | None = None) -> Value:
    x_att = m_att = None
    if ctx.Vx is not None:
        x_att, wx = additive_attention(ctx.Vx, h, p.sub("att1"), ctx.mask, ctx.proj_x)
    if ctx.Vm is not None:
        m_att, wm = additive_attention(ctx.Vm, h, p.sub("att2"), ctx.mask, ctx.proj_m)
    if trace is not None:
        trace["x_weights"] = None if x_att is None else wx.data
        trace["m_weights"] = None if m_att is None else wm.data
    if fusion == "dma":
        g = dma_gate(x_att, m_att, h, p["W_g"])
        if trace is not None:
            trace["gate"] = g.data
        return dma_fuse(x_att, m_att, g)
    if fusion == "add":
        return x_att + m_att
    if fusion == "explicit":
        return x_att
    return m_att


def decoder_step(p: Scope, word_ids, ctx: DecoderContext, state: DecoderState,
                 fusion: str = "dma", trace: dict | None = None):
    """One decoding step for a batch of previous tokens; returns (logits, new state)."""
    word = nc.take(p["embed"], np.asarray(word_ids))
    att_in = nc.concat([state.h_lang, ctx.mean_feature, word], axis=-1)
    h_att, c_att = lstm_cell(att_in, state.h_att, state.c_att, p.sub("att_lstm"))
    v_hat = fuse(ctx, h_att, p, fusion, trace)
    h_lang, c_lang = lstm_cell(nc.concat([v_hat, h_att], axis=-1), state.h_lang, state.c_lang,
                               p.sub("lang_lstm"))
    logits = nc.linear(h_lang, p["logit.W"], p["logit.b"])
    return logits, DecoderState(h_att, c_att, h_lang, c_lang)
