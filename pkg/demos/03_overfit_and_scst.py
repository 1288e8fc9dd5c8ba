# Cross-entropy training on a small synthetic set, beam search, then a short
# self-critical run on held-out images.
# Run with: python3 demos/03_overfit_and_scst.py   (about a minute)

# %%
import numpy as np

from relcap.config import Config
from relcap.data import generate_synthetic_dataset
from relcap.model import CaptionModel, run_pipeline
from relcap.training import evaluate, token_xe, train_scst, train_xe
from relcap.vocab import build_vocab

cfg = Config()
train = generate_synthetic_dataset(cfg, seed=0, n=50)
held = generate_synthetic_dataset(cfg, seed=0, n=50, start=50)
vocab = build_vocab([c for s in train for c in s.captions], min_freq=1, max_len=cfg.max_len)
print(len(vocab), "tokens:", " ".join(vocab.itos))

# %% Teacher forcing until the training captions are memorized.
model = CaptionModel(cfg, len(vocab), rng=np.random.default_rng(0))
res = train_xe(model, train, vocab, np.random.default_rng(0), steps=1200, stop_loss=0.02)
model.params = res.params
print(f"{res.steps} steps, per-token XE {token_xe(model, train, vocab):.4f}")
for epoch, loss, _ in res.history[::20]:
    print(f"  epoch {epoch:3d}  loss/token {loss:.3f}")

# %% Beam-3 captions for a few training images against their references.
for s in train[:5]:
    print(" ".join(run_pipeline(s, model.params, cfg, vocab, beam=3)), "|", s.captions[0])
cider, _, hyps = evaluate(model, train, vocab, beam=3)
exact = sum(h.tokens == vocab.encode(s.captions[0], eos=False) for h, s in zip(hyps, train))
print(f"train CIDEr-D {cider:.3f}, exact reproductions {exact}/50")

# %% Held-out images: the relation word has to come from the graph.
print(f"held-out greedy CIDEr-D {evaluate(model, held, vocab)[0]:.3f}")
hist = train_scst(model, held, vocab, np.random.default_rng(0), steps=60, eval_every=20)
for step, loss, score in hist:
    print(f"  scst step {step:3d}  greedy CIDEr-D {score:.3f}")
