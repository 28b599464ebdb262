"""Optimization loop, evaluation, gradient checking and checkpoints.

Training is plain SGD on the mean per-sentence negative log-likelihood
plus an L2 penalty, with early stopping on dev token accuracy. With a
fixed seed and a single thread, runs are reproducible bit for bit.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Corpus, DataError
from .encoder import Vocab
from .models import Model, ModelConfig
from .scoring import LabelSet


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""


@dataclass
class TrainConfig:
    lr: float = 0.1
    batch_size: int = 8
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    clip: float | None = 5.0
    shuffle: bool = True

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1 \
                or self.patience < 1:
            raise ValueError("rates, sizes and patience must be positive")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    dev_accuracy: float


@dataclass
class Checkpoint:
    """Self-describing snapshot: config, vocab/labels, params, history."""

    version: int
    model_config: dict
    vocab: list[str]
    labels: list[str]
    arrays: dict[str, np.ndarray]
    history: list[dict] = field(default_factory=list)

    def to_model(self, seed: int = 0) -> Model:
        model = Model(ModelConfig(**self.model_config), Vocab(self.vocab),
                      LabelSet(self.labels), seed=seed)
        model.store.load_state(self.arrays)
        return model


_MAGIC = b"NLDMCKPT\n"
_VERSION = 1


def save_checkpoint(path, model: Model, history: list[EpochLog] | None = None) -> None:
    """Binary container: text header (JSON) + little-endian f64 arrays."""
    arrays = model.store.state()
    header = {
        "version": _VERSION,
        "model_config": asdict(model.config),
        "vocab": model.vocab.itos,
        "labels": model.labels.labels,
        "history": [asdict(h) for h in (history or [])],
        "arrays": [{"name": name, "shape": list(a.shape)}
                   for name, a in arrays.items()],
    }
    blob = json.dumps(header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for name, a in arrays.items():
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise DataError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header["version"] != _VERSION:
            raise DataError(f"{path}: unsupported checkpoint version "
                            f"{header['version']}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            arrays[entry["name"]] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    return Checkpoint(version=header["version"],
                      model_config=header["model_config"],
                      vocab=header["vocab"], labels=header["labels"],
                      arrays=arrays, history=header["history"])


# -- evaluation ------------------------------------------------------------


def _numericalize(model: Model, corpus: Corpus):
    out = []
    for sent in corpus:
        out.append((model.vocab.ids(sent.tokens),
                    model.labels.ids(sent.labels)))
    return out


def evaluate(model: Model, corpus: Corpus) -> float:
    """Token accuracy in percent."""
    correct = total = 0
    for token_ids, label_ids in _numericalize(model, corpus):
        pred = model.predict(token_ids)
        correct += sum(int(p == g) for p, g in zip(pred, label_ids))
        total += len(label_ids)
    if total == 0:
        raise DataError("cannot evaluate on an empty corpus")
    return 100.0 * correct / total


def majority_baseline(train_corpus: Corpus, eval_corpus: Corpus) -> float:
    """Accuracy of always predicting the most frequent training label."""
    counts: dict[str, int] = {}
    for sent in train_corpus:
        for lab in sent.labels:
            counts[lab] = counts.get(lab, 0) + 1
    best = max(sorted(counts), key=lambda l: counts[l])
    total = eval_corpus.n_tokens()
    hit = sum(sum(int(l == best) for l in s.labels) for s in eval_corpus)
    return 100.0 * hit / total


# -- training --------------------------------------------------------------


def train(model: Model, train_corpus: Corpus, dev_corpus: Corpus,
          cfg: TrainConfig) -> tuple[Checkpoint, list[EpochLog]]:
    """SGD with early stopping on dev accuracy; returns the best snapshot."""
    if len(train_corpus) == 0 or len(dev_corpus) == 0:
        raise DataError("training needs non-empty train and dev corpora")
    data = _numericalize(model, train_corpus)
    rng = np.random.default_rng(cfg.seed)
    logs: list[EpochLog] = []
    best_acc = -1.0
    best_state = model.store.state()
    best_history: list[EpochLog] = []
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(data)) if cfg.shuffle else np.arange(len(data))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(data), cfg.batch_size):
            batch = [data[i] for i in order[start:start + cfg.batch_size]]
            model.store.zero_grad()
            loss = model.batch_loss(batch)
            if not np.isfinite(loss.item()):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}: {loss.item()!r}")
            loss.backward()
            model.store.sgd_step(cfg.lr, clip=cfg.clip)
            epoch_loss += loss.item()
            n_batches += 1
        dev_acc = evaluate(model, dev_corpus)
        logs.append(EpochLog(epoch=epoch, train_loss=epoch_loss / n_batches,
                             dev_accuracy=dev_acc))
        if dev_acc > best_acc:
            best_acc = dev_acc
            best_state = model.store.state()
            best_history = list(logs)
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    model.store.load_state(best_state)
    ckpt = Checkpoint(version=_VERSION,
                      model_config=asdict(model.config),
                      vocab=model.vocab.itos,
                      labels=model.labels.labels,
                      arrays=best_state,
                      history=[asdict(h) for h in best_history])
    return ckpt, logs


# -- gradient verification -------------------------------------------------


def grad_check(model: Model, token_ids: list[int], label_ids: list[int],
               epsilon: float = 1e-5, max_coords: int = 250,
               seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Checks every parameter coordinate when the model is small, otherwise
    a seeded random subsample of `max_coords` coordinates.
    """
    batch = [(token_ids, label_ids)]
    model.store.zero_grad()
    loss = model.batch_loss(batch)
    loss.backward()
    coords = [(name, i) for name, t in model.store.items()
              for i in range(t.value.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        picks = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picks]
    worst = 0.0
    for name, i in coords:
        t = model.store[name]
        flat = t.value.reshape(-1)
        analytic = (t.grad.reshape(-1)[i] if t.grad is not None else 0.0)
        old = flat[i]
        flat[i] = old + epsilon
        up = model.batch_loss(batch).item()
        flat[i] = old - epsilon
        down = model.batch_loss(batch).item()
        flat[i] = old
        numeric = (up - down) / (2.0 * epsilon)
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-3)
        worst = max(worst, rel)
    return worst
