"""Corpus ingestion, vocabulary construction and the synthetic generator.

Supported inputs: 10-column CoNLL-U (FORM as token, UPOS as label, HEAD
kept when numeric) and a two-column token<TAB>label TSV. The synthetic
corpus comes from an infinite-order hidden Markov generator whose
transition distribution is an LSTM over the label history and whose
emission distribution combines an LSTM over the word history with the
current label's embedding.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .encoder import Vocab
from .scoring import LabelSet


class DataError(Exception):
    """Malformed input data."""


@dataclass
class Sentence:
    tokens: list[str]
    labels: list[str]
    heads: list[int] | None = None

    def __post_init__(self):
        if len(self.tokens) != len(self.labels):
            raise DataError("token/label length mismatch")
        if self.heads is not None:
            n = len(self.tokens)
            if len(self.heads) != n or any(h < 0 or h > n for h in self.heads):
                raise DataError("bad head indices")

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass
class Corpus:
    sentences: list[Sentence] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    def __getitem__(self, idx):
        return self.sentences[idx]

    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)


def load_conllu(path) -> Corpus:
    """Read a CoNLL-U file: FORM, UPOS and (numeric) HEAD columns.

    Multiword-token ranges ("1-2") and empty nodes ("1.1") are skipped.
    """
    sentences = []
    toks: list[str] = []
    labs: list[str] = []
    heads: list[int] = []
    heads_ok = True

    def flush():
        nonlocal toks, labs, heads, heads_ok
        if toks:
            sentences.append(Sentence(toks, labs, heads if heads_ok else None))
        toks, labs, heads, heads_ok = [], [], [], True

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                flush()
                continue
            if line.startswith("#"):
                continue
            cols = line.split("\t")
            if len(cols) != 10:
                raise DataError(f"{path}:{lineno}: expected 10 tab-separated "
                                f"columns, got {len(cols)}")
            tok_id = cols[0]
            if "-" in tok_id or "." in tok_id:
                continue
            if not tok_id.isdigit():
                raise DataError(f"{path}:{lineno}: bad token id {tok_id!r}")
            toks.append(cols[1])
            labs.append(cols[3])
            if cols[6].isdigit():
                heads.append(int(cols[6]))
            else:
                heads_ok = False
    flush()
    return Corpus(sentences)


def load_tsv(path) -> Corpus:
    """Read token<TAB>label lines; a blank line separates sentences."""
    sentences = []
    toks: list[str] = []
    labs: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                if toks:
                    sentences.append(Sentence(toks, labs))
                    toks, labs = [], []
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataError(f"{path}:{lineno}: expected 2 tab-separated "
                                f"fields, got {len(fields)}")
            toks.append(fields[0])
            labs.append(fields[1])
    if toks:
        sentences.append(Sentence(toks, labs))
    return Corpus(sentences)


def write_tsv(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for sent in corpus:
            for tok, lab in zip(sent.tokens, sent.labels):
                fh.write(f"{tok}\t{lab}\n")
            fh.write("\n")


def build_vocab(corpus: Corpus, min_count: int = 1) -> tuple[Vocab, LabelSet]:
    """Frequency-thresholded token vocabulary plus the label inventory."""
    if len(corpus) == 0:
        raise DataError("cannot build a vocabulary from an empty corpus")
    vocab = Vocab.build((tok for s in corpus for tok in s.tokens),
                        min_count=min_count)
    labels = LabelSet.build(lab for s in corpus for lab in s.labels)
    return vocab, labels


def split_corpus(corpus: Corpus, seed: int = 0) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded 80/10/10 shuffle split (train, dev, test)."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(corpus))
    n = len(corpus)
    n_train = int(round(0.8 * n))
    n_dev = int(round(0.1 * n))
    picks = [corpus.sentences[i] for i in order]
    return (Corpus(picks[:n_train]),
            Corpus(picks[n_train:n_train + n_dev]),
            Corpus(picks[n_train + n_dev:]))


# -- synthetic infinite-order generator ------------------------------------


@dataclass
class SynthConfig:
    n_samples: int = 1000
    n_labels: int = 5
    vocab_size: int = 1000
    max_len: int = 10
    hidden: int = 50
    emb_dim: int = 50
    seed: int = 0


class _NumpyLstm:
    """Plain forward-only LSTM used by the generator."""

    def __init__(self, input_size: int, hidden: int, rng: np.random.Generator):
        self.W = rng.uniform(-0.5, 0.5, (input_size, 4 * hidden))
        self.U = rng.uniform(-0.5, 0.5, (hidden, 4 * hidden))
        self.b = rng.uniform(-0.5, 0.5, 4 * hidden)
        self.hidden = hidden

    def step(self, x: np.ndarray, h: np.ndarray, c: np.ndarray):
        H = self.hidden
        z = x @ self.W + h @ self.U + self.b
        sig = lambda v: 1.0 / (1.0 + np.exp(-v))
        i, f = sig(z[:H]), sig(z[H:2 * H])
        g, o = np.tanh(z[2 * H:3 * H]), sig(z[3 * H:])
        c2 = f * c + i * g
        return o * np.tanh(c2), c2


def _softmax_sample(logits: np.ndarray, rng: np.random.Generator) -> int:
    p = np.exp(logits - logits.max())
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def generate_synthetic(cfg: SynthConfig) -> tuple[Corpus, Corpus, Corpus]:
    """Sample a corpus from the infinite-order generator and split 80/10/10.

    At step t, label y_t is drawn from a softmax over an LSTM state
    summarizing y_1..y_{t-1}; word x_t is drawn from a softmax over an
    LSTM state over x_1..x_{t-1} shifted by a projection of y_t's
    embedding. All generator parameters are uniform(-0.5, 0.5) draws from
    a single seeded stream, so generation is reproducible.
    """
    rng = np.random.default_rng(cfg.seed)
    m, V, H, E = cfg.n_labels, cfg.vocab_size, cfg.hidden, cfg.emb_dim
    lab_emb = rng.uniform(-0.5, 0.5, (m + 1, E))        # last row: BOS
    word_emb = rng.uniform(-0.5, 0.5, (V + 1, E))       # last row: BOS
    lab_lstm = _NumpyLstm(E, H, rng)
    word_lstm = _NumpyLstm(E, H, rng)
    W_lab = rng.uniform(-0.5, 0.5, (H, m))
    W_word = rng.uniform(-0.5, 0.5, (H, V))
    # label-conditioned shift of the word logits; the coupling factor sets
    # how sharply each label concentrates its word distribution
    W_lab_word = rng.uniform(-0.5, 0.5, (E, V)) / np.sqrt(E)
    coupling = 15.0

    sentences = []
    for _ in range(cfg.n_samples):
        length = int(rng.integers(1, cfg.max_len + 1))
        hl = np.zeros(H)
        cl = np.zeros(H)
        hw = np.zeros(H)
        cw = np.zeros(H)
        hl, cl = lab_lstm.step(lab_emb[m], hl, cl)
        hw, cw = word_lstm.step(word_emb[V], hw, cw)
        toks, labs = [], []
        for _t in range(length):
            y = _softmax_sample(hl @ W_lab, rng)
            word_logits = hw @ W_word + coupling * (lab_emb[y] @ W_lab_word)
            x = _softmax_sample(word_logits, rng)
            labs.append(f"t{y}")
            toks.append(f"w{x:04d}")
            hl, cl = lab_lstm.step(lab_emb[y], hl, cl)
            hw, cw = word_lstm.step(word_emb[x], hw, cw)
        sentences.append(Sentence(toks, labs))
    return split_corpus(Corpus(sentences), seed=cfg.seed)
