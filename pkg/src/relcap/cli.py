"""Command-line entry point: ``relcap <subcommand> ...``.

Checkpoints are ParamStore files; training writes two sidecars next to a
checkpoint, ``<ckpt>.cfg`` (the run configuration) and ``<ckpt>.vocab.json``,
which later subcommands pick up automatically.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import Config
from .errors import ContractError, TrainingError
from .numcore import ParamStore

log = logging.getLogger("relcap")


def _config(args, checkpoint: str | None = None) -> Config:
    if args.config:
        cfg = Config.from_text(Path(args.config).read_text(), profile=args.profile)
    elif checkpoint and Path(checkpoint + ".cfg").exists():
        cfg = Config.from_text(Path(checkpoint + ".cfg").read_text())
    else:
        cfg = Config.for_profile(args.profile or "desk")
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _save_checkpoint(path: str, params: ParamStore, cfg: Config, vocab=None):
    params.save(path)
    Path(path + ".cfg").write_text(cfg.to_text())
    if vocab is not None:
        vocab.save(path + ".vocab.json")


def _load_vocab(args):
    from .vocab import Vocab
    path = args.vocab or args.ckpt + ".vocab.json"
    return Vocab.load(path)


def _model(cfg, vocab, params):
    from .model import CaptionModel
    return CaptionModel(cfg, len(vocab), params.astype(cfg.dtype))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from .data import generate_synthetic_dataset, save_dataset
    cfg = _config(args)
    samples = generate_synthetic_dataset(cfg, cfg.seed, n=args.n, start=args.start)
    save_dataset(samples, args.out)
    log.info("wrote %d samples to %s", len(samples), args.out)
    return 0


def cmd_build_graph(args) -> int:
    from .data import load_dataset, sample_graph
    cfg = _config(args)
    if args.no_filter:
        cfg = cfg.replace(filter_edges=False)
    samples = load_dataset(args.data)
    if args.index is not None:
        samples = [samples[args.index]]
    out = open(args.out, "w") if args.out else sys.stdout
    try:
        for s in samples:
            out.write(f"# {s.image_id}\n{sample_graph(s, cfg).dumps()}\n")
    finally:
        if args.out:
            out.close()
    return 0


def cmd_pretrain(args) -> int:
    from .data import load_dataset
    from .region_bert import pretrain
    cfg = _config(args)
    if args.epochs is not None:
        cfg = cfg.replace(pretrain_epochs=args.epochs)
    samples = load_dataset(args.data)
    store, history = pretrain(samples, cfg, np.random.default_rng(cfg.seed))
    _save_checkpoint(args.out, store, cfg)
    if args.log:
        with open(args.log, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("epoch", "mim", "mrm"))
            w.writerows((e, f"{a:.6f}", f"{b:.6f}") for e, a, b in history)
    return 0


def cmd_train_xe(args) -> int:
    from .data import load_dataset
    from .model import CaptionModel
    from .training import train_xe
    from .vocab import build_vocab
    cfg = _config(args)
    train = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    vocab = build_vocab([c for s in train for c in s.captions], cfg.min_freq, cfg.max_len)
    model = CaptionModel(cfg, len(vocab), rng=np.random.default_rng(cfg.seed))
    if args.init:
        # e.g. a pretrained Region-BERT checkpoint
        model.params.update(ParamStore.load(args.init, cfg.dtype), prefix="bert.")
    result = train_xe(model, train, vocab, np.random.default_rng([cfg.seed, 1]), val=val,
                      epochs=args.epochs, steps=args.steps, log_path=args.log)
    _save_checkpoint(args.out, result.params, cfg, vocab)
    return 0


def cmd_train_scst(args) -> int:
    from .data import load_dataset
    from .training import train_scst
    cfg = _config(args, args.ckpt)
    vocab = _load_vocab(args)
    model = _model(cfg, vocab, ParamStore.load(args.ckpt, cfg.dtype))
    samples = load_dataset(args.data)
    val = load_dataset(args.val) if args.val else None
    train_scst(model, samples, vocab, np.random.default_rng([cfg.seed, 2]), steps=args.steps,
               eval_every=args.eval_every, log_path=args.log, eval_samples=val)
    _save_checkpoint(args.out, model.params, cfg, vocab)
    return 0


def cmd_caption(args) -> int:
    from .data import load_dataset
    from .training import decode_captions
    cfg = _config(args, args.ckpt)
    vocab = _load_vocab(args)
    model = _model(cfg, vocab, ParamStore.load(args.ckpt, cfg.dtype))
    samples = load_dataset(args.data)
    hyps = decode_captions(model, samples, beam=args.beam)
    lines = [f"{s.image_id}\t{vocab.decode(h.tokens)}\n" for s, h in zip(samples, hyps)]
    if args.out:
        Path(args.out).write_text("".join(lines))
    else:
        sys.stdout.writelines(lines)
    return 0


def read_captions(path) -> dict[str, list[str]]:
    """``image_id<TAB>caption`` lines, or a dataset file (JSON lines)."""
    from .data import load_dataset
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        return {str(s.image_id): list(s.captions) for s in load_dataset(path)}
    out: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise ContractError(f"{path} line {lineno}: expected image_id<TAB>caption")
        key, cap = line.split("\t", 1)
        out.setdefault(key, []).append(cap)
    return out


def cmd_eval(args) -> int:
    from .metrics import bleu, corpus_cider_d
    from .vocab import tokenize
    preds = read_captions(args.pred)
    refs = read_captions(args.refs)
    missing = [k for k in preds if k not in refs]
    if missing:
        raise ContractError(f"no references for image ids {missing[:5]}")
    keys = list(preds)
    cands = [tokenize(preds[k][0]) for k in keys]
    ref_toks = [[tokenize(r) for r in refs[k]] for k in keys]
    rows = [("CIDEr-D", corpus_cider_d(cands, ref_toks)[0])]
    rows += [(f"BLEU-{n}", bleu(cands, ref_toks, max_n=n)) for n in range(1, 5)]
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(("metric", "value"))
    w.writerows((name, f"{val:.6f}") for name, val in rows)
    return 0


def cmd_gradcheck(args) -> int:
    from .gradchecks import run_all
    results = run_all() if args.seed is None else run_all(args.seed)
    ok = True
    for name, err in results.items():
        passed = err < args.tol
        ok &= passed
        print(f"{name}\t{err:.3e}\t{'ok' if passed else 'FAIL'}")
    return 0 if ok else 1


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--profile", choices=("desk", "paper"))

    p = argparse.ArgumentParser(prog="relcap", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, help="number of samples (default: config n_samples)")
    s.add_argument("--start", type=int, default=0, help="index of the first sample")
    s.set_defaults(fn=cmd_gen_data)

    s = sub.add_parser("build-graph", parents=[common], help="print labeled semantic graphs")
    s.add_argument("--data", required=True)
    s.add_argument("--index", type=int)
    s.add_argument("--no-filter", action="store_true", help="keep every region pair")
    s.add_argument("--out")
    s.set_defaults(fn=cmd_build_graph)

    s = sub.add_parser("pretrain", parents=[common], help="MIM/MRM pretraining of Region-BERT")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--log", help="CSV history: epoch, mim, mrm")
    s.set_defaults(fn=cmd_pretrain)

    s = sub.add_parser("train-xe", parents=[common], help="cross-entropy training")
    s.add_argument("--data", required=True)
    s.add_argument("--val")
    s.add_argument("--out", required=True)
    s.add_argument("--init", help="checkpoint with pretrained bert.* parameters")
    s.add_argument("--epochs", type=int)
    s.add_argument("--steps", type=int)
    s.add_argument("--log", help="CSV log: epoch, loss, val CIDEr-D")
    s.set_defaults(fn=cmd_train_xe)

    s = sub.add_parser("train-scst", parents=[common], help="self-critical fine-tuning")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--vocab")
    s.add_argument("--val")
    s.add_argument("--out", required=True)
    s.add_argument("--steps", type=int)
    s.add_argument("--eval-every", type=int, default=0)
    s.add_argument("--log", help="CSV log: step, loss, greedy CIDEr-D")
    s.set_defaults(fn=cmd_train_scst)

    s = sub.add_parser("caption", parents=[common], help="caption every image of a dataset")
    s.add_argument("--data", required=True)
    s.add_argument("--ckpt", required=True)
    s.add_argument("--vocab")
    s.add_argument("--beam", type=int, default=3)
    s.add_argument("--out")
    s.set_defaults(fn=cmd_caption)

    s = sub.add_parser("eval", help="CIDEr-D and BLEU of predictions against references")
    s.add_argument("--pred", required=True)
    s.add_argument("--refs", required=True)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient checks")
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("RELCAP_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ContractError, TrainingError, OSError, json.JSONDecodeError, IndexError) as exc:
        print(f"relcap {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
