"""Cross-entropy and self-critical (SCST) training loops, evaluation helpers."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from . import numcore as nc
from .data import CaptionSample
from .decoding import Hypothesis
from .errors import ContractError, NonFiniteError, TrainingError
from .metrics import NgramStats, cider_d, corpus_cider_d
from .model import CaptionModel
from .numcore import ParamStore, Tape, Value
from .optim import Adam, lr_schedule
from .vocab import PAD, Vocab

log = logging.getLogger(__name__)

RewardFn = Callable[[Sequence[int], Sequence[Sequence[int]]], float]


def reference_ids(samples: Sequence[CaptionSample], vocab: Vocab) -> list[list[list[int]]]:
    """Reference captions as truncated id lists without EOS, one list per image."""
    return [[vocab.encode(c, eos=False) for c in s.captions] for s in samples]


def pick_targets(samples: Sequence[CaptionSample], vocab: Vocab,
                 rng: np.random.Generator | None = None) -> np.ndarray:
    """One reference per image (random if several), encoded with EOS and PAD."""
    caps = []
    for s in samples:
        j = 0 if rng is None or len(s.captions) == 1 else int(rng.integers(len(s.captions)))
        caps.append(s.captions[j])
    return vocab.encode_batch(caps)


def decode_captions(model: CaptionModel, samples: Sequence[CaptionSample], beam: int = 1,
                    chunk: int = 16) -> list[Hypothesis]:
    out: list[Hypothesis] = []
    for start in range(0, len(samples), chunk):
        batch = model.batch(samples[start:start + chunk])
        out.extend(model.greedy(batch) if beam == 1 else model.beam(batch, beam))
    return out


def evaluate(model: CaptionModel, samples: Sequence[CaptionSample], vocab: Vocab,
             beam: int = 1, stats: NgramStats | None = None):
    """(mean CIDEr-D, per-image scores, hypotheses) of the model's captions."""
    refs = reference_ids(samples, vocab)
    hyps = decode_captions(model, samples, beam)
    mean, scores = corpus_cider_d([h.tokens for h in hyps], refs, stats)
    return mean, scores, hyps


def token_xe(model: CaptionModel, samples: Sequence[CaptionSample], vocab: Vocab,
             chunk: int = 16) -> float:
    """Teacher-forced cross-entropy per non-PAD token (first reference of each image)."""
    total = 0.0
    count = 0
    for start in range(0, len(samples), chunk):
        part = samples[start:start + chunk]
        targets = pick_targets(part, vocab)
        tape = Tape(model.params, grad=False)
        total += model.xe_loss(tape, model.batch(part), targets).item() * len(part)
        count += int((targets != PAD).sum())
    return total / count


class CsvLog:
    """Append-only CSV writer; ``None`` path keeps rows in memory only."""

    def __init__(self, path, header: Sequence[str]):
        self.rows: list[tuple] = []
        self.path = path
        self.header = tuple(header)
        if path is not None:
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(self.header)

    def write(self, *row):
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as fh:
                csv.writer(fh).writerow([_fmt(x) for x in row])


def _fmt(x):
    return f"{x:.6f}" if isinstance(x, float) else x


def _batches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


# --------------------------------------------------------------------------
# Cross-entropy
# --------------------------------------------------------------------------

@dataclass
class XEResult:
    params: ParamStore          # best checkpoint by validation CIDEr-D
    best_epoch: int
    best_cider: float
    history: list = field(default_factory=list)   # (epoch, loss per token, val CIDEr-D)
    steps: int = 0


def train_xe(model: CaptionModel, train: Sequence[CaptionSample], vocab: Vocab,
             rng: np.random.Generator, val: Sequence[CaptionSample] | None = None,
             epochs: int | None = None, steps: int | None = None, log_path=None,
             stop_loss: float | None = None, names: Sequence[str] | None = None) -> XEResult:
    """Teacher-forced training with Adam; keeps the checkpoint with the best
    validation CIDEr-D (greedy decoding). Without a validation set the last
    epoch wins.

    ``steps`` caps the number of parameter updates; ``stop_loss`` ends
    training once an epoch's mean per-token loss falls below it.
    """
    cfg = model.config
    if not train:
        raise ContractError("XE training needs a nonempty dataset")
    steps = steps if steps is not None else (cfg.xe_steps or None)
    epochs = epochs if epochs is not None else cfg.xe_epochs
    if steps:
        epochs = max(epochs, math.ceil(steps / math.ceil(len(train) / cfg.batch_size)))
    opt = Adam(model.params, lr=lr_schedule("XE", 0, base=cfg.xe_lr),
               names=names or model.trainable())
    record = CsvLog(log_path, ("epoch", "loss", "val_cider_d"))
    best = XEResult(model.params.copy(), 0, -math.inf)
    n_steps = 0
    for epoch in range(1, epochs + 1):
        tot_loss = 0.0
        tot_tokens = 0
        for idx in _batches(len(train), cfg.batch_size, rng):
            part = [train[i] for i in idx]
            targets = pick_targets(part, vocab, rng)
            model.params.zero_grads()
            tape = Tape(model.params)
            try:
                loss = model.xe_loss(tape, model.batch(part), targets)
            except NonFiniteError as exc:
                raise TrainingError(f"XE training diverged: {exc}", epoch) from None
            tape.backward(loss)
            opt.step(lr=lr_schedule("XE", epoch - 1, base=cfg.xe_lr), clip_norm=cfg.clip_norm)
            tot_loss += loss.item() * len(part)
            tot_tokens += int((targets != PAD).sum())
            n_steps += 1
            if steps and n_steps >= steps:
                break
        per_token = tot_loss / tot_tokens
        score = evaluate(model, val, vocab)[0] if val else math.nan
        record.write(epoch, per_token, score)
        log.info("xe epoch %d: loss/token %.4f val CIDEr-D %.4f", epoch, per_token, score)
        if not val or score > best.best_cider:
            best = XEResult(model.params.copy(), epoch, score if val else math.nan)
        if (steps and n_steps >= steps) or (stop_loss is not None and per_token < stop_loss):
            break
    best.history = record.rows
    best.steps = n_steps
    return best


# --------------------------------------------------------------------------
# Self-critical sequence training
# --------------------------------------------------------------------------

class Policy(Protocol):
    """What SCST needs from a captioner."""

    def sample(self, batch, rng: np.random.Generator) -> list[Hypothesis]: ...
    def greedy(self, batch) -> list[Hypothesis]: ...
    def log_prob(self, tape: Tape, batch, hyps: Sequence[Hypothesis]) -> Value: ...


def cider_reward(stats: NgramStats) -> RewardFn:
    def reward(candidate, references) -> float:
        return cider_d(candidate, references, stats) if len(candidate) else 0.0
    return reward


@dataclass
class SCSTInfo:
    sampled: list
    greedy: list
    reward: np.ndarray
    baseline: np.ndarray

    @property
    def advantage(self) -> np.ndarray:
        return self.reward - self.baseline


def scst_step(policy: Policy, tape: Tape, batch, references: Sequence, reward_fn: RewardFn,
              rng: np.random.Generator):
    """Loss proxy -mean_i A_i * log P(sample_i), with A_i = r(sample_i) - r(greedy_i).

    Returns (loss Value, SCSTInfo); call ``tape.backward`` on the loss.
    """
    sampled = policy.sample(batch, rng)
    greedy = policy.greedy(batch)
    if len(sampled) != len(references):
        raise ContractError("one reference set per batch row is required")
    r = np.array([reward_fn(h.tokens, refs) for h, refs in zip(sampled, references)], float)
    b = np.array([reward_fn(h.tokens, refs) for h, refs in zip(greedy, references)], float)
    if np.isnan(r).any() or np.isnan(b).any():
        raise ContractError("reward function returned NaN")
    info = SCSTInfo(sampled, greedy, r, b)
    logp = policy.log_prob(tape, batch, sampled)
    loss = -nc.sum(logp * info.advantage) * (1.0 / len(sampled))
    return loss, info


def train_scst(model: CaptionModel, samples: Sequence[CaptionSample], vocab: Vocab,
               rng: np.random.Generator, steps: int | None = None,
               stats: NgramStats | None = None, eval_every: int = 0, log_path=None,
               eval_samples: Sequence[CaptionSample] | None = None):
    """SCST fine-tuning for a fixed step budget.

    Rewards are CIDEr-D with document frequencies from ``samples``' references.
    Returns a list of (step, mean loss proxy, mean greedy CIDEr-D on
    ``eval_samples``), logged at step 0, every ``eval_every`` steps and at
    the end.
    """
    cfg = model.config
    if not samples:
        raise ContractError("SCST needs a nonempty dataset")
    steps = cfg.scst_steps if steps is None else steps
    eval_samples = samples if eval_samples is None else eval_samples
    refs = reference_ids(samples, vocab)
    stats = stats or NgramStats.from_references(refs)
    reward = cider_reward(stats)
    opt = Adam(model.params, lr=cfg.scst_lr, names=model.trainable())
    per_epoch = math.ceil(len(samples) / cfg.batch_size)
    record = CsvLog(log_path, ("step", "loss", "greedy_cider_d"))
    record.write(0, math.nan, evaluate(model, eval_samples, vocab, stats=stats)[0])
    losses = []
    step = 0
    while step < steps:
        for idx in _batches(len(samples), cfg.batch_size, rng):
            if step >= steps:
                break
            part = [samples[i] for i in idx]
            model.params.zero_grads()
            tape = Tape(model.params)
            try:
                k = cfg.scst_samples
                loss, _ = scst_step(model, tape, model.batch(part).repeat(k),
                                    [refs[i] for i in idx for _ in range(k)], reward, rng)
            except NonFiniteError as exc:
                raise TrainingError(f"SCST diverged: {exc}", step // per_epoch + 1) from None
            tape.backward(loss)
            lr = lr_schedule("SCST", step / per_epoch, base=cfg.scst_lr,
                             decay_epochs=cfg.scst_decay_epochs)
            opt.step(lr=lr, clip_norm=cfg.clip_norm)
            losses.append(loss.item())
            step += 1
            if (eval_every and step % eval_every == 0) or step == steps:
                score = evaluate(model, eval_samples, vocab, stats=stats)[0]
                record.write(step, float(np.mean(losses)), score)
                log.info("scst step %d: loss %.4f greedy CIDEr-D %.4f", step, np.mean(losses), score)
                losses = []
    return record.rows
