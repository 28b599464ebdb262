"""Command-line entry point for batch experiments.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Every subcommand emits machine-readable TSV; the analyze path also
renders matplotlib figures next to the delimited output.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .data import (Corpus, DataError, SynthConfig, build_vocab,
                   generate_synthetic, load_conllu, load_tsv, write_tsv)
from .models import Model, ModelConfig
from .train import (DivergenceError, TrainConfig, evaluate, grad_check,
                    load_checkpoint, save_checkpoint, train)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


def _load_corpus(path: str, fmt: str) -> Corpus:
    if fmt == "conllu":
        return load_conllu(path)
    if fmt == "tsv":
        return load_tsv(path)
    raise DataError(f"unknown corpus format {fmt!r}")


def _model_config(args) -> ModelConfig:
    return ModelConfig(variant=args.model, scorer=args.scorer,
                       d_x=args.dx, d_h=args.dh, d_l=args.dl, d_r=args.dr,
                       k=args.k, omega=args.omega)


def _train_config(args) -> TrainConfig:
    clip = None if args.clip <= 0 else args.clip
    return TrainConfig(lr=args.lr, batch_size=args.batch_size,
                       max_epochs=args.epochs, patience=args.patience,
                       seed=args.seed, clip=clip)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default="nldm",
                   choices=["nldm", "softmax", "crf1", "crf2"])
    p.add_argument("--scorer", default="additive",
                   choices=["additive", "trilinear"])
    p.add_argument("--dx", type=int, default=32, help="token embedding size")
    p.add_argument("--dh", type=int, default=32, help="LSTM hidden size")
    p.add_argument("--dl", type=int, default=16, help="label embedding size")
    p.add_argument("--dr", type=int, default=32, help="trilinear rank")
    p.add_argument("--k", type=int, default=4, help="dependency length limit")
    p.add_argument("--omega", type=float, default=0.0,
                   help="L2 regularization weight")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clip", type=float, default=5.0,
                   help="gradient norm clip; <= 0 disables")
    p.add_argument("--min-count", type=int, default=1,
                   help="vocabulary frequency threshold")


def _write_log(path, logs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch\ttrain_loss\tdev_accuracy\n")
        for row in logs:
            fh.write(f"{row.epoch}\t{row.train_loss:.17g}\t"
                     f"{row.dev_accuracy:.17g}\n")


def cmd_train(args) -> int:
    train_c = _load_corpus(args.train, args.format)
    dev_c = _load_corpus(args.dev, args.format)
    vocab, labels = build_vocab(train_c, min_count=args.min_count)
    model = Model(_model_config(args), vocab, labels, seed=args.seed)
    if args.embeddings:
        from .encoder import load_pretrained_embeddings
        n = load_pretrained_embeddings(args.embeddings, vocab, model.store)
        print(f"loaded {n} pretrained embedding rows")
    ckpt, logs = train(model, train_c, dev_c, _train_config(args))
    save_checkpoint(args.out, model, logs)
    log_path = args.log or (args.out + ".log.tsv")
    _write_log(log_path, logs)
    best = max(l.dev_accuracy for l in logs)
    print(f"best dev accuracy\t{best:.4f}")
    print(f"checkpoint\t{args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint).to_model()
    corpus = _load_corpus(args.input, args.format)
    acc = evaluate(model, corpus)
    print(f"accuracy\t{acc:.4f}")
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_checkpoint(args.checkpoint).to_model()
    corpus = _load_corpus(args.input, args.format)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for sent in corpus:
            pred = model.predict(model.vocab.ids(sent.tokens))
            for tok, y in zip(sent.tokens, pred):
                out.write(f"{tok}\t{model.labels.labels[y]}\n")
            out.write("\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_parse(args) -> int:
    model = load_checkpoint(args.checkpoint).to_model()
    if model.config.variant != "nldm":
        raise DataError("parse requires an nldm checkpoint")
    corpus = _load_corpus(args.input, args.format)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for sent in corpus:
            heads = model.decode_forest(model.vocab.ids(sent.tokens))
            out.write(" ".join(str(h) for h in heads) + "\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = SynthConfig(n_samples=args.samples, n_labels=args.labels,
                      vocab_size=args.vocab_size, max_len=args.max_len,
                      hidden=args.hidden, seed=args.seed)
    train_c, dev_c, test_c = generate_synthetic(cfg)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, corpus in [("train", train_c), ("dev", dev_c), ("test", test_c)]:
        write_tsv(corpus, out / f"{name}.tsv")
        print(f"{name}\t{len(corpus)}\t{out / f'{name}.tsv'}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    from .encoder import Vocab
    from .scoring import LabelSet
    vocab = Vocab([Vocab.PAD, Vocab.UNK] + [f"w{i}" for i in range(6)])
    labels = LabelSet([f"t{i}" for i in range(args.labels)])
    cfg = _model_config(args)
    model = Model(cfg, vocab, labels, seed=args.seed)
    for _name, t in model.store.items():
        t.value = t.value + rng.normal(scale=0.1, size=t.value.shape)
    n = args.length
    toks = [int(i) for i in rng.integers(2, len(vocab), size=n)]
    labs = [int(i) for i in rng.integers(0, labels.m, size=n)]
    err = grad_check(model, toks, labs, seed=args.seed)
    print(f"max_relative_error\t{err:.3e}")
    return EXIT_OK if err <= 1e-4 else EXIT_NUMERIC


def _render_histogram(hist, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(4, 3))
    names = [r[0] for r in hist.as_rows()]
    vals = [r[1] for r in hist.as_rows()]
    ax.bar(names, vals, color="#4878d0")
    ax.set_xlabel("dependency length")
    ax.set_ylabel("frequency (%)")
    ax.set_ylim(0, 100)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _render_k_sweep(rows, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot([r[0] for r in rows], [r[1] for r in rows], marker="o")
    ax.set_xlabel("dependency length limit k")
    ax.set_ylabel("test accuracy (%)")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def cmd_analyze(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = _load_corpus(args.input, args.format)
    model = load_checkpoint(args.checkpoint).to_model()
    if model.config.variant != "nldm":
        raise DataError("analyze requires an nldm checkpoint")
    forests = analysis.decode_corpus(model, corpus)
    hist = analysis.length_histogram(forests)
    hist_tsv = out_dir / "length_histogram.tsv"
    with open(hist_tsv, "w", encoding="utf-8") as fh:
        fh.write("bucket\tfrequency_pct\n")
        for name, val in hist.as_rows():
            fh.write(f"{name}\t{val:.4f}\n")
    _render_histogram(hist, out_dir / "length_histogram.png")
    print("dependency length\tfrequency (%)")
    for name, val in hist.as_rows():
        print(f"{name}\t{val:.1f}")
    gold = [s.heads for s in corpus]
    if all(g is not None for g in gold) and gold:
        score = analysis.uas(forests, gold)
        print(f"uas\t{score:.2f}")
        with open(out_dir / "uas.tsv", "w", encoding="utf-8") as fh:
            fh.write(f"uas\t{score:.4f}\n")
    if args.k_sweep:
        if not (args.train and args.dev):
            raise DataError("--k-sweep needs --train and --dev corpora")
        ks = [int(v) for v in args.k_sweep.split(",")]
        train_c = _load_corpus(args.train, args.format)
        dev_c = _load_corpus(args.dev, args.format)
        vocab, labels = build_vocab(train_c)
        base = ModelConfig(**{**model.config.__dict__})
        rows = analysis.k_sweep(base, vocab, labels, train_c, dev_c, corpus,
                                ks, TrainConfig(lr=args.lr, seed=args.seed,
                                                max_epochs=args.epochs,
                                                patience=args.patience))
        with open(out_dir / "k_sweep.tsv", "w", encoding="utf-8") as fh:
            fh.write("k\ttest_accuracy\n")
            for k, acc in rows:
                fh.write(f"{k}\t{acc:.4f}\n")
        _render_k_sweep(rows, out_dir / "k_sweep.png")
        print("k\ttest accuracy")
        for k, acc in rows:
            print(f"{k}\t{acc:.2f}")
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nldm",
        description="Sequence labeling with a latent dependency structure "
                    "over the labels.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "conllu"])
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--log", default=None, help="per-epoch TSV log path")
    p.add_argument("--embeddings", default=None,
                   help="pretrained embedding text file")
    _add_model_flags(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="token accuracy of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "conllu"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="label a corpus, TSV to stdout")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "conllu"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("parse", help="emit best latent head lists")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "conllu"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("generate", help="sample a synthetic corpus")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--labels", type=int, default=5)
    p.add_argument("--vocab-size", type=int, default=1000)
    p.add_argument("--max-len", type=int, default=10)
    p.add_argument("--hidden", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("gradcheck", help="finite-difference gradient check")
    _add_model_flags(p)
    p.add_argument("--labels", type=int, default=2, dest="labels")
    p.add_argument("--length", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("analyze",
                       help="length histogram, UAS and k sweeps with figures")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="tsv", choices=["tsv", "conllu"])
    p.add_argument("--out-dir", required=True)
    p.add_argument("--k-sweep", default=None,
                   help="comma-separated k values to train and compare")
    p.add_argument("--train", default=None)
    p.add_argument("--dev", default=None)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--patience", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)
    return parser


def _apply_config_file(argv: list[str]) -> list[str]:
    """Expand `--config path` into key=value flags placed before the rest."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise DataError("--config needs a file path")
    path = argv[idx + 1]
    rest = argv[:idx] + argv[idx + 2:]
    extra = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, val = line.split("=", 1)
            extra.append(f"--{key.strip()}={val.strip()}")
    if not rest:
        return extra
    # keep the subcommand first, config-file flags before explicit flags
    return [rest[0]] + extra + rest[1:]


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config_file(argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as e:
            return EXIT_OK if e.code == 0 else EXIT_USAGE
        return args.func(args)
    except (DataError, FileNotFoundError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
