"""Self-attention encoder over a global feature plus region features, and
its two text-free pretraining tasks: matching a global feature to its
regions (MIM) and reconstructing masked region features (MRM).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numcore as nc
from .config import Config
from .errors import ContractError, DimensionError, NonFiniteError, TrainingError
from .numcore import ParamStore, Scope, Tape, Value
from .optim import Adam

log = logging.getLogger(__name__)

GLOBAL_POSITION = np.array([0.0, 1.0, 0.0, 1.0, 1.0, 1.0])
P_CLAMP = 1e-7
HEAD_INIT_STD = 0.02


def init_encoder(store: ParamStore, v: int, d: int, blocks: int, rng: np.random.Generator,
                 prefix: str = "bert"):
    add = store.add
    add(f"{prefix}.vis.W", nc.glorot(rng, (d, v)))
    add(f"{prefix}.vis.b", np.zeros(d))
    add(f"{prefix}.pos.W", nc.glorot(rng, (d, 6)))
    add(f"{prefix}.pos.b", np.zeros(d))
    add(f"{prefix}.emb_ln.g", np.ones(d))
    add(f"{prefix}.emb_ln.b", np.zeros(d))
    for i in range(blocks):
        p = f"{prefix}.block{i}"
        for name in ("q", "k", "v", "o"):
            add(f"{p}.{name}.W", nc.glorot(rng, (d, d)))
            add(f"{p}.{name}.b", np.zeros(d))
        add(f"{p}.ln1.g", np.ones(d))
        add(f"{p}.ln1.b", np.zeros(d))
        add(f"{p}.ff1.W", nc.glorot(rng, (4 * d, d)))
        add(f"{p}.ff1.b", np.zeros(4 * d))
        add(f"{p}.ff2.W", nc.glorot(rng, (d, 4 * d)))
        add(f"{p}.ff2.b", np.zeros(d))
        add(f"{p}.ln2.g", np.ones(d))
        add(f"{p}.ln2.b", np.zeros(d))
    # small head weights keep the initial match logit near 0, i.e. P near 1/2
    add(f"{prefix}.mim.W", rng.normal(scale=HEAD_INIT_STD, size=(1, d)))
    add(f"{prefix}.mim.b", np.zeros(1))
    add(f"{prefix}.mrm.W", rng.normal(scale=HEAD_INIT_STD, size=(v, d)))
    add(f"{prefix}.mrm.b", np.zeros(v))


def count_blocks(store: ParamStore, prefix: str = "bert") -> int:
    n = 0
    while f"{prefix}.block{n}.q.W" in store:
        n += 1
    return n


# --------------------------------------------------------------------------
# Forward
# --------------------------------------------------------------------------

def embed_batch(glob, feats, pos, p: Scope) -> Value:
    """(B, v), (B, K, v), (B, K, 6) -> (B, K+1, d); row 0 is the global token."""
    t = p.tape
    glob, feats, pos = t.const(glob), t.const(feats), t.const(pos)
    B = glob.shape[0]
    v_in = nc.concat([nc.reshape(glob, (B, 1, -1)), feats], axis=1)
    gpos = np.broadcast_to(GLOBAL_POSITION, (B, 1, 6))
    p_in = nc.concat([t.const(gpos), pos], axis=1)
    vis, pp = p.sub("vis"), p.sub("pos")
    if v_in.shape[-1] != vis["W"].shape[1]:
        raise ContractError(
            f"feature dimension {v_in.shape[-1]} != encoder input size {vis['W'].shape[1]}")
    s = nc.linear(v_in, vis["W"], vis["b"]) + nc.linear(p_in, pp["W"], pp["b"])
    ln = p.sub("emb_ln")
    return nc.layer_norm(s, ln["g"], ln["b"])


def embed_inputs(v_g, regions, p: Scope) -> Value:
    """Embedding of one image: (k+1, d)."""
    if len(regions) < 1:
        raise ContractError("embed_inputs needs at least one region")
    feats = np.stack([np.asarray(r.feature, dtype=float) for r in regions])[None]
    pos = np.stack([np.asarray(r.positional, dtype=float) for r in regions])[None]
    v_g = np.asarray(v_g, dtype=float)
    if feats.shape[-1] != v_g.shape[-1]:
        raise DimensionError(f"region features {feats.shape[-1]} vs global {v_g.shape[-1]}")
    E = embed_batch(v_g[None], feats, pos, p)
    return nc.reshape(E, E.shape[1:])


def self_attention(x: Value, mask, p: Scope, heads: int, weights_out: list | None = None) -> Value:
    B, T, d = x.shape
    dh = d // heads

    def split(name):
        y = nc.linear(x, p[f"{name}.W"], p[f"{name}.b"])
        return nc.transpose(nc.reshape(y, (B, T, heads, dh)), (0, 2, 1, 3))

    q, k, v = split("q"), split("k"), split("v")
    scores = nc.matmul(q, nc.transpose(k, (0, 1, 3, 2))) * (1.0 / np.sqrt(dh))
    att = nc.softmax(scores, None if mask is None else mask[:, None, None, :])
    if weights_out is not None:
        weights_out.append(att.data)
    ctx = nc.reshape(nc.transpose(nc.matmul(att, v), (0, 2, 1, 3)), (B, T, d))
    return nc.linear(ctx, p["o.W"], p["o.b"])


def encoder_block(x: Value, mask, p: Scope, heads: int, weights_out=None) -> Value:
    x = nc.layer_norm(x + self_attention(x, mask, p, heads, weights_out), p["ln1.g"], p["ln1.b"])
    ff = nc.linear(nc.relu(nc.linear(x, p["ff1.W"], p["ff1.b"])), p["ff2.W"], p["ff2.b"])
    return nc.layer_norm(x + ff, p["ln2.g"], p["ln2.b"])


def encoder_forward(E: Value, p: Scope, heads: int, mask=None, blocks: int | None = None,
                    weights_out: list | None = None) -> Value:
    """Post-norm transformer blocks over (B, T, d) or (T, d) embeddings."""
    single = E.ndim == 2
    x = nc.reshape(E, (1,) + E.shape) if single else E
    if mask is not None and mask.ndim == 1:
        mask = mask[None]
    n = count_blocks(p.tape.store, p.prefix) if blocks is None else blocks
    for i in range(n):
        x = encoder_block(x, mask, p.sub(f"block{i}"), heads, weights_out)
    return nc.reshape(x, x.shape[1:]) if single else x


def encode_implicit(batch, p: Scope, heads: int) -> Value:
    """Contextual region features (B, K, d) for a collated batch."""
    E = embed_batch(batch.glob, batch.feats, batch.pos, p)
    mask = np.concatenate([np.ones((batch.size, 1), bool), batch.mask], axis=1)
    out = encoder_forward(E, p, heads, mask)
    return out[:, 1:, :]


# --------------------------------------------------------------------------
# Pretraining tasks
# --------------------------------------------------------------------------

def mim_corrupt(index: int, globals_: np.ndarray, rng: np.random.Generator):
    """Return (global feature, y): genuine with probability 1/2, else another image's."""
    n = len(globals_)
    if n < 2:
        raise ContractError("MIM negatives need a dataset of at least two images")
    if rng.random() < 0.5:
        return globals_[index], 1
    j = int(rng.integers(n - 1))
    if j >= index:
        j += 1
    return globals_[j], 0


ZERO, RANDOM, KEEP = 0, 1, 2


@dataclass
class MaskedRegions:
    features: np.ndarray    # (k, v) after corruption
    indices: np.ndarray     # selected region indices
    originals: np.ndarray   # (m, v) features before corruption
    modes: np.ndarray       # ZERO / RANDOM / KEEP per selected index


def mrm_mask(features: np.ndarray, rng: np.random.Generator, pool: np.ndarray,
             prob: float = 0.10) -> MaskedRegions:
    """Select each region with ``prob``; zero it (80%), swap in a random
    feature from ``pool`` (10%) or leave it unchanged (10%).

    Positional vectors are not touched; only visual features are passed in.
    """
    features = np.asarray(features)
    k = features.shape[0]
    if k < 1:
        raise ContractError("mrm_mask needs at least one region")
    chosen = np.flatnonzero(rng.random(k) < prob)
    u = rng.random(len(chosen))
    modes = np.where(u < 0.8, ZERO, np.where(u < 0.9, RANDOM, KEEP))
    out = features.copy()
    for i, mode in zip(chosen, modes):
        if mode == ZERO:
            out[i] = 0.0
        elif mode == RANDOM:
            out[i] = pool[rng.integers(len(pool))]
    return MaskedRegions(out, chosen, features[chosen].copy(), modes)


def mim_loss(logit, y) -> Value:
    """Mean binary cross-entropy of sigmoid(logit) against y, with P clamped."""
    if not isinstance(logit, Value):
        logit = Tape(grad=False).const(logit)
    P = nc.clip(nc.sigmoid(logit), P_CLAMP, 1.0 - P_CLAMP)
    y = np.asarray(y, dtype=float).reshape(P.shape)
    ll = nc.log(P) * y + nc.log(1.0 - P) * (1.0 - y)
    return -nc.mean(ll)


def mrm_loss(reconstructions, originals) -> Value:
    """Sum of squared L2 distances; zero when nothing was masked."""
    if isinstance(reconstructions, Value):
        t = reconstructions.tape
    else:
        t = Tape(grad=False)
        reconstructions = t.const(reconstructions)
    if reconstructions.shape[0] == 0:
        return t.const(0.0)
    if reconstructions.shape != np.shape(originals):
        raise DimensionError(f"{reconstructions.shape} vs {np.shape(originals)}")
    return nc.sum(nc.square(reconstructions - np.asarray(originals)))


@dataclass
class PretrainBatch:
    glob: np.ndarray
    feats: np.ndarray
    pos: np.ndarray
    mask: np.ndarray
    y: np.ndarray
    mrm_rows: np.ndarray     # (m,) batch index of each masked region
    mrm_cols: np.ndarray     # (m,) region index
    originals: np.ndarray    # (m, v)

    @property
    def size(self):
        return self.glob.shape[0]


def make_pretrain_batch(samples, indices, rng, pool, mask_prob=0.10, mim=True,
                        mrm=True, k_pad=None) -> PretrainBatch:
    globals_ = np.stack([s.global_feature for s in samples])
    k_pad = k_pad or max(samples[i].k for i in indices)
    B, v = len(indices), globals_.shape[1]
    glob = np.zeros((B, v))
    feats = np.zeros((B, k_pad, v))
    pos = np.zeros((B, k_pad, 6))
    mask = np.zeros((B, k_pad), bool)
    y = np.ones(B)
    rows, cols, origs = [], [], []
    for b, i in enumerate(indices):
        s = samples[i]
        if mim:
            glob[b], y[b] = mim_corrupt(i, globals_, rng)
        else:
            glob[b] = s.global_feature
        f = s.features
        if mrm:
            m = mrm_mask(f, rng, pool, mask_prob)
            f = m.features
            rows += [b] * len(m.indices)
            cols += list(m.indices)
            origs += list(m.originals)
        feats[b, :s.k] = f
        pos[b, :s.k] = s.positions
        mask[b, :s.k] = True
    origs = np.array(origs).reshape(-1, v)
    return PretrainBatch(glob, feats, pos, mask, y, np.array(rows, int), np.array(cols, int), origs)


def pretrain_losses(tape: Tape, pb: PretrainBatch, heads: int, prefix: str = "bert"):
    """(MIM loss, MRM loss) for one batch; MRM is averaged per image."""
    p = Scope(tape, prefix)
    E = embed_batch(pb.glob, pb.feats, pb.pos, p)
    full_mask = np.concatenate([np.ones((pb.size, 1), bool), pb.mask], axis=1)
    out = encoder_forward(E, p, heads, full_mask)
    logit = nc.linear(out[:, 0, :], p["mim.W"], p["mim.b"])
    l_mim = mim_loss(nc.reshape(logit, (-1,)), pb.y)
    if len(pb.mrm_rows):
        h = nc.index(out, (pb.mrm_rows, pb.mrm_cols + 1))
        recon = nc.linear(h, p["mrm.W"], p["mrm.b"])
        l_mrm = mrm_loss(recon, pb.originals) * (1.0 / pb.size)
    else:
        l_mrm = tape.const(0.0)
    return l_mim, l_mrm


def pretrain(samples: Sequence, config: Config, rng: np.random.Generator,
             store: ParamStore | None = None, prefix: str = "bert",
             on_batch=None):
    """Jointly minimize MIM + MRM; return (store, [(epoch, mim, mrm), ...])."""
    if not samples:
        raise ContractError("pretraining needs a nonempty dataset")
    if store is None:
        store = ParamStore(config.dtype)
        init_encoder(store, config.v, config.d, config.blocks, rng, prefix)
    opt = Adam(store, lr=config.pretrain_lr, names=store.names(prefix + "."))
    pool = np.concatenate([s.features for s in samples])
    use_mim = "mim" in config.pretrain_tasks
    use_mrm = "mrm" in config.pretrain_tasks
    history = []
    n = len(samples)
    for epoch in range(config.pretrain_epochs):
        order = rng.permutation(n)
        sums = np.zeros(2)
        batches = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            store.zero_grads()
            if config.separate_task_passes:
                passes = [(use_mim, False), (False, use_mrm)]
            else:
                passes = [(use_mim, use_mrm)]
            l_mim_v = l_mrm_v = 0.0
            for do_mim, do_mrm in passes:
                pb = make_pretrain_batch(samples, idx, rng, pool, config.mask_prob,
                                         mim=do_mim, mrm=do_mrm)
                tape = Tape(store)
                try:
                    l_mim, l_mrm = pretrain_losses(tape, pb, config.heads, prefix)
                except NonFiniteError as exc:
                    raise TrainingError(f"pretraining diverged: {exc}", epoch + 1) from None
                total = tape.const(0.0)
                if do_mim:
                    total = total + l_mim
                    l_mim_v = l_mim.item()
                if do_mrm:
                    total = total + l_mrm
                    l_mrm_v = l_mrm.item()
                tape.backward(total)
            opt.step(clip_norm=config.clip_norm)
            sums += (l_mim_v, l_mrm_v)
            batches += 1
            if on_batch is not None:
                on_batch(epoch, l_mim_v, l_mrm_v)
        mim_avg, mrm_avg = sums / batches
        history.append((epoch + 1, float(mim_avg), float(mrm_avg)))
        log.info("pretrain epoch %d: mim %.4f mrm %.4f", epoch + 1, mim_avg, mrm_avg)
    return store, history
