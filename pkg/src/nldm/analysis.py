"""Induced-structure analyses: decoded forests, dependency lengths, UAS.

These tools treat a trained latent-dependency model as a parser: the
forest component of the joint argmax over labels and structures is
compared against gold trees or summarized by dependency length.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .data import Corpus
from .models import Model, ModelConfig
from .train import Checkpoint, TrainConfig, evaluate, train


def decode_tree(model: Model, token_ids: list[int]) -> list[int]:
    """Head of each token 1..n in the best joint (labels, forest) analysis."""
    return model.decode_forest(token_ids)


@dataclass
class LengthHistogram:
    """Percentage of edges with length 1, 2..10, and above 10."""

    pct_1: float
    pct_2_10: float
    pct_over_10: float
    total_edges: int

    def as_rows(self):
        return [("1", self.pct_1), ("2-10", self.pct_2_10),
                (">10", self.pct_over_10)]


def length_histogram(forests: list[list[int]]) -> LengthHistogram:
    """Bucket dependency lengths |head - dependent| across forests.

    Root edges count with their distance from position 0.
    """
    if not forests:
        raise ValueError("need at least one forest")
    buckets = np.zeros(3, dtype=int)
    for heads in forests:
        for j, h in enumerate(heads, start=1):
            d = abs(h - j)
            if d == 1:
                buckets[0] += 1
            elif d <= 10:
                buckets[1] += 1
            else:
                buckets[2] += 1
    total = int(buckets.sum())
    pct = 100.0 * buckets / total
    return LengthHistogram(pct_1=float(pct[0]), pct_2_10=float(pct[1]),
                           pct_over_10=float(pct[2]), total_edges=total)


def uas(predicted: list[list[int]], gold: list[list[int]]) -> float:
    """Unlabeled attachment accuracy in percent."""
    if len(predicted) != len(gold):
        raise ValueError("forest lists must be aligned")
    correct = total = 0
    for p, g in zip(predicted, gold):
        if len(p) != len(g):
            raise ValueError("sentence length mismatch between forests")
        correct += sum(int(a == b) for a, b in zip(p, g))
        total += len(g)
    if total == 0:
        raise ValueError("no tokens to score")
    return 100.0 * correct / total


def k_sweep(base_config: ModelConfig, vocab, labels, train_corpus: Corpus,
            dev_corpus: Corpus, test_corpus: Corpus, k_values: list[int],
            train_config: TrainConfig) -> list[tuple[int, float]]:
    """Train one model per dependency length limit; report test accuracy."""
    rows = []
    for k in k_values:
        cfg = replace(base_config, k=k)
        model = Model(cfg, vocab, labels, seed=train_config.seed)
        train(model, train_corpus, dev_corpus, train_config)
        rows.append((k, evaluate(model, test_corpus)))
    return rows


def decode_corpus(model: Model, corpus: Corpus) -> list[list[int]]:
    return [decode_tree(model, model.vocab.ids(s.tokens)) for s in corpus]


def checkpoint_decode_corpus(ckpt: Checkpoint, corpus: Corpus) -> list[list[int]]:
    return decode_corpus(ckpt.to_model(), corpus)
