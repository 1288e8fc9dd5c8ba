"""The full captioner: explicit (gated GCN) and implicit (Region-BERT)
region encoders feeding the mixture-attention decoder."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from . import numcore as nc
from .config import Config
from .data import Batch, CaptionSample, collate, sample_graph
from .decoding import Hypothesis, beam_search, greedy_decode, sample_decode
from .dma import (DecoderContext, DecoderState, decoder_step, init_decoder, init_state,
                  prepare_context)
from .gcn import encode_explicit, init_gcn_layer
from .numcore import ParamStore, Scope, Tape, Value
from .region_bert import encode_implicit, init_encoder
from .vocab import BOS, EOS, PAD

BANNED = (PAD, BOS)


def init_params(config: Config, vocab_size: int, rng: np.random.Generator) -> ParamStore:
    store = ParamStore(config.dtype)
    n_rel = len(config.relations)
    init_gcn_layer(store, "gcn.0", config.v, config.d, n_rel, rng)
    if config.gcn_layers == 2:
        init_gcn_layer(store, "gcn.1", config.d, config.d, n_rel, rng)
    init_encoder(store, config.v, config.d, config.blocks, rng, "bert")
    init_decoder(store, vocab_size, config.d, config.embed, config.att_dim, rng, "dec")
    return store


class CaptionModel:
    def __init__(self, config: Config, vocab_size: int, params: ParamStore | None = None,
                 rng: np.random.Generator | None = None):
        self.config = config
        self.vocab_size = vocab_size
        if params is None:
            params = init_params(config, vocab_size, rng or np.random.default_rng(config.seed))
        self.params = params

    @property
    def explicit(self) -> bool:
        return self.config.fusion != "implicit"

    @property
    def implicit(self) -> bool:
        return self.config.fusion != "explicit"

    def trainable(self) -> list[str]:
        names = self.params.names("dec.")
        if self.explicit:
            names += self.params.names("gcn.")
        if self.implicit:
            names += [n for n in self.params.names("bert.")
                      if not n.startswith(("bert.mim.", "bert.mrm."))]
        return names

    def batch(self, samples: Sequence[CaptionSample], graphs=None) -> Batch:
        graphs = graphs or [sample_graph(s, self.config) for s in samples]
        return collate(samples, graphs, dtype=self.params.dtype)

    # forward --------------------------------------------------------------

    def encode(self, tape: Tape, batch: Batch) -> DecoderContext:
        cfg = self.config
        Vx = Vm = None
        if self.explicit:
            Vx = encode_explicit(tape.const(batch.feats), batch.graphs, tape, cfg.gcn_layers)
        if self.implicit:
            Vm = encode_implicit(batch, Scope(tape, "bert"), cfg.heads)
        return prepare_context(Vx, Vm, batch.mask, Scope(tape, "dec"))

    def step(self, tape: Tape, ctx: DecoderContext, tokens, state: DecoderState, trace=None):
        return decoder_step(Scope(tape, "dec"), tokens, ctx, state, self.config.fusion, trace)

    def sequence_logprobs(self, tape: Tape, ctx: DecoderContext, targets: np.ndarray) -> Value:
        """Teacher-forced log-probabilities (B, T, V) of every step."""
        B, T = targets.shape
        state = init_state(tape, B, self.config.d)
        prev = np.full(B, BOS, dtype=np.int64)
        steps = []
        for t in range(T):
            logits, state = self.step(tape, ctx, prev, state)
            steps.append(nc.log_softmax(logits))
            prev = targets[:, t]
        return nc.stack(steps, axis=1)

    def xe_loss(self, tape: Tape, batch: Batch, targets: np.ndarray) -> Value:
        ctx = self.encode(tape, batch)
        return xe_loss(self.sequence_logprobs(tape, ctx, targets), targets)

    def sequence_logprob(self, tape: Tape, batch: Batch, targets: np.ndarray) -> Value:
        """Summed log-probability (B,) of each (PAD-padded) target sequence."""
        ctx = self.encode(tape, batch)
        lp = self.sequence_logprobs(tape, ctx, targets)
        return token_logprob_sum(lp, targets)

    def log_prob(self, tape: Tape, batch: Batch, hyps) -> Value:
        """Summed log-probability (B,) of decoded hypotheses, EOS step included."""
        return self.sequence_logprob(tape, batch, hypothesis_targets(hyps))

    # decoding ---------------------------------------------------------------

    def decoder(self, batch: Batch) -> "ModelDecoder":
        return ModelDecoder(self, batch)

    def greedy(self, batch: Batch) -> list[Hypothesis]:
        return greedy_decode(self.decoder(batch), batch.size, self.config.max_len)

    def sample(self, batch: Batch, rng: np.random.Generator) -> list[Hypothesis]:
        return sample_decode(self.decoder(batch), batch.size, self.config.max_len, rng)

    def beam(self, batch: Batch, beam: int | None = None) -> list[Hypothesis]:
        beam = beam or self.config.beam
        out = []
        for i in range(batch.size):
            dec = self.decoder(batch.select(np.full(beam, i)))
            out.append(beam_search(dec, beam, self.config.max_len))
        return out


class ModelDecoder:
    """Inference-only step decoder over a fixed batch of images."""

    def __init__(self, model: CaptionModel, batch: Batch):
        self.model = model
        self.tape = Tape(model.params, grad=False)
        self.ctx = model.encode(self.tape, batch)
        self.n = batch.size

    def start(self, n: int):
        if n != self.n:
            raise ValueError(f"decoder prepared for {self.n} rows, asked for {n}")
        return init_state(self.tape, n, self.model.config.d)

    def step(self, tokens, state):
        logits, state = self.model.step(self.tape, self.ctx, np.asarray(tokens), state)
        lp = nc.log_softmax(logits).data.copy()
        lp[:, BANNED] = -np.inf
        return lp, state

    def reorder(self, state, idx):
        return DecoderState(*(self.tape.const(v.data[idx]) for v in state))


def hypothesis_targets(hyps: Sequence[Hypothesis]) -> np.ndarray:
    """(B, T) ids of each hypothesis, EOS appended when it ended with one, PAD-padded."""
    seqs = [list(h.tokens) + ([EOS] if h.eos else []) for h in hyps]
    T = max(1, max(len(s) for s in seqs))
    out = np.full((len(seqs), T), PAD, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
    return out


def token_logprob_sum(logprobs: Value, targets: np.ndarray) -> Value:
    """Sum over non-PAD steps of log p(target_t); returns (B,)."""
    B, T = targets.shape
    picked = nc.index(logprobs, (np.arange(B)[:, None], np.arange(T)[None, :], targets))
    return nc.sum(picked * (targets != PAD).astype(float), axis=1)


def xe_loss(logprobs, targets: np.ndarray) -> Value:
    """-sum_t log P(y*_t | y*_<t) over non-PAD steps, averaged over the batch.

    ``logprobs`` holds per-step log-probabilities, shape (B, T, V).
    """
    if not isinstance(logprobs, Value):
        logprobs = Tape(grad=False).const(logprobs)
    targets = np.asarray(targets, dtype=np.int64)
    return -nc.mean(token_logprob_sum(logprobs, targets))


def run_pipeline(sample: CaptionSample, params: ParamStore, config: Config, vocab,
                 beam: int | None = None) -> list[str]:
    """Caption one image: graph -> gated GCN and Region-BERT -> beam search."""
    model = CaptionModel(config, len(vocab), params)
    hyp = model.beam(model.batch([sample]), beam)[0]
    return [vocab.itos[i] for i in hyp.tokens]
