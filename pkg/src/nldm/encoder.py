"""Token embeddings + bi-directional LSTM contextual encoder.

`encode` maps a token id sequence of length n to n+1 hidden rows of
width 2*D_h: row 0 is a learned free vector standing in for the dummy
root position, rows 1..n concatenate the left-to-right and right-to-left
LSTM states at each position.
"""

from __future__ import annotations

from collections import Counter

import numpy as np

from .autodiff import (ParamStore, ShapeError, Tensor, concat, getitem,
                       init_lstm, lstm_cell, rows)


class Vocab:
    """Token alphabet with reserved padding and unknown entries."""

    PAD = "<pad>"
    UNK = "<unk>"

    def __init__(self, itos: list[str]):
        if self.UNK not in itos:
            raise ValueError("vocabulary must contain the unknown token")
        self.itos = list(itos)
        self.stoi = {tok: i for i, tok in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build(cls, tokens, min_count: int = 1) -> "Vocab":
        counts = Counter(tokens)
        kept = sorted((tok for tok, c in counts.items() if c >= min_count
                       and tok not in (cls.PAD, cls.UNK)),
                      key=lambda tok: (-counts[tok], tok))
        return cls([cls.PAD, cls.UNK] + kept)

    @property
    def pad_id(self) -> int:
        return self.stoi[self.PAD]

    @property
    def unk_id(self) -> int:
        return self.stoi[self.UNK]

    def __len__(self) -> int:
        return len(self.itos)

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def ids(self, tokens) -> list[int]:
        return [self.id(t) for t in tokens]


def init_encoder(store: ParamStore, vocab_size: int, d_x: int, d_h: int,
                 rng: np.random.Generator) -> None:
    """Register embedding table, both LSTM directions and the root vector."""
    store.add("enc.emb", rng.uniform(-0.1, 0.1, (vocab_size, d_x)))
    init_lstm(store, "enc.fw", d_x, d_h, rng)
    init_lstm(store, "enc.bw", d_x, d_h, rng)
    store.add("enc.root", rng.uniform(-0.1, 0.1, (1, 2 * d_h)))


def _run_direction(xs: list[Tensor], store: ParamStore, prefix: str,
                   d_h: int) -> list[Tensor]:
    Wx, Wh, b = store[f"{prefix}.Wx"], store[f"{prefix}.Wh"], store[f"{prefix}.b"]
    h = Tensor(np.zeros((1, d_h)))
    c = Tensor(np.zeros((1, d_h)))
    out = []
    for x in xs:
        h, c = lstm_cell(x, h, c, Wx, Wh, b)
        out.append(h)
    return out


def encode(token_ids, store: ParamStore) -> Tensor:
    """Contextual hidden rows, shape (n+1, 2*D_h), row 0 = root vector."""
    token_ids = list(token_ids)
    if not token_ids:
        raise ValueError("cannot encode an empty token sequence")
    emb = store["enc.emb"]
    d_h = store["enc.fw.Wh"].shape[0]
    if any(t < 0 or t >= emb.shape[0] for t in token_ids):
        raise ShapeError(f"token id out of range for vocabulary of size "
                         f"{emb.shape[0]}")
    x = rows(emb, np.asarray(token_ids))        # (n, D_x)
    steps = [getitem(x, (slice(t, t + 1), slice(None)))
             for t in range(len(token_ids))]
    fwd = _run_direction(steps, store, "enc.fw", d_h)
    bwd = _run_direction(list(reversed(steps)), store, "enc.bw", d_h)
    bwd = list(reversed(bwd))
    rows_out = [store["enc.root"]]
    for hf, hb in zip(fwd, bwd):
        rows_out.append(concat([hf, hb], axis=1))
    return concat(rows_out, axis=0)


def load_pretrained_embeddings(path, vocab: Vocab, store: ParamStore) -> int:
    """Overwrite embedding rows for in-vocabulary words from a text file.

    Format: one word per line followed by whitespace-separated reals of
    the configured embedding width. Returns the number of rows replaced.
    """
    emb = store["enc.emb"]
    d_x = emb.shape[1]
    loaded = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split()
            if not parts:
                continue
            word, vals = parts[0], parts[1:]
            if len(vals) != d_x:
                raise ValueError(
                    f"{path}:{lineno}: expected {d_x} values for {word!r}, "
                    f"got {len(vals)}")
            try:
                vec = np.array([float(v) for v in vals])
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric embedding value")
            idx = vocab.stoi.get(word)
            if idx is not None:
                emb.value[idx] = vec
                loaded += 1
    return loaded
