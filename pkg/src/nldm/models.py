"""Trainable sequence labelers: latent-dependency model and baselines.

Every variant shares the same encoder architecture (embeddings +
Bi-LSTM) and the same bilinear emission head. The latent-dependency
model (`nldm`) marginalizes a projective dependency forest over the
labels; `softmax` labels positions independently; `crf1` and `crf2` are
first- and second-order linear-chain CRFs.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import charts
from .autodiff import (ParamStore, Tensor, add, getitem, logsumexp, matmul,
                       reshape, scale, sub, transpose)
from .encoder import Vocab, encode, init_encoder
from .scoring import (LabelSet, build_score_table, init_additive_scorer,
                      init_label_embeddings, init_trilinear_scorer)

VARIANTS = ("nldm", "softmax", "crf1", "crf2")
SCORERS = ("additive", "trilinear")
TOPOLOGIES = ("full", "root-only", "chain-only")


@dataclass
class ModelConfig:
    variant: str = "nldm"
    scorer: str = "additive"
    d_x: int = 32
    d_h: int = 32
    d_l: int = 16
    d_r: int = 32
    k: int = 4
    omega: float = 0.0
    topology: str = "full"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.scorer not in SCORERS:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        if self.topology not in TOPOLOGIES:
            raise ValueError(f"unknown topology {self.topology!r}")
        if self.k < 1:
            raise ValueError("length limit k must be >= 1")
        if self.omega < 0:
            raise ValueError("regularization weight must be >= 0")
        if self.scorer == "trilinear" and self.d_r < 1:
            raise ValueError("trilinear scorer needs rank >= 1")


# -- linear-chain helpers (shared by baselines and equivalence tests) ------


def crf1_log_partition(emissions: Tensor, transitions: Tensor,
                       start: Tensor) -> Tensor:
    """Forward algorithm over (n, m) emissions; start is the t=1 potential."""
    n = emissions.shape[0]
    alpha = add(start, getitem(emissions, 0))
    for t in range(1, n):
        prev = reshape(alpha, (alpha.shape[0], 1))
        alpha = add(logsumexp(add(prev, transitions), axis=0),
                    getitem(emissions, t))
    return logsumexp(alpha)


def crf1_gold_score(emissions: Tensor, transitions: Tensor, start: Tensor,
                    labels: list[int]) -> Tensor:
    n = len(labels)
    total = add(getitem(start, labels[0]), getitem(emissions, (0, labels[0])))
    for t in range(1, n):
        total = add(total, add(getitem(transitions, (labels[t - 1], labels[t])),
                               getitem(emissions, (t, labels[t]))))
    return total


def crf1_viterbi(emissions: np.ndarray, transitions: np.ndarray,
                 start: np.ndarray):
    """Best path over plain arrays; returns (labels, score)."""
    n, m = emissions.shape
    delta = start + emissions[0]
    bp = np.zeros((n, m), dtype=np.intp)
    for t in range(1, n):
        cand = delta[:, None] + transitions
        bp[t] = np.argmax(cand, axis=0)
        delta = np.max(cand, axis=0) + emissions[t]
    best = int(np.argmax(delta))
    path = [best]
    for t in range(n - 1, 0, -1):
        path.append(int(bp[t, path[-1]]))
    return list(reversed(path)), float(delta[best])


def crf2_log_partition(emissions: Tensor, trans: Tensor) -> Tensor:
    """Forward over label pairs; trans has shape (m+1, m+1, m), index m = start."""
    n, m = emissions.shape
    start = m  # start-state id inside the transition tensor
    a1 = add(getitem(trans, (start, start)),
             getitem(emissions, 0))                        # (m,)
    if n == 1:
        return logsumexp(a1)
    # A[y_{t-1}, y_t]
    A = add(reshape(a1, (m, 1)),
            add(getitem(trans, start)[:m, :], reshape(getitem(emissions, 1), (1, m))))
    for t in range(2, n):
        core = getitem(trans, (slice(0, m), slice(0, m), slice(None)))
        A = add(logsumexp(add(reshape(A, (m, m, 1)), core), axis=0),
                reshape(getitem(emissions, t), (1, m)))
    return logsumexp(A)


def crf2_gold_score(emissions: Tensor, trans: Tensor,
                    labels: list[int]) -> Tensor:
    m = emissions.shape[1]
    start = m
    hist = [start, start]
    total = None
    for t, y in enumerate(labels):
        term = add(getitem(trans, (hist[-2], hist[-1], y)),
                   getitem(emissions, (t, y)))
        total = term if total is None else add(total, term)
        hist.append(y)
    return total


def crf2_viterbi(emissions: np.ndarray, trans: np.ndarray):
    n, m = emissions.shape
    start = m
    d1 = trans[start, start, :] + emissions[0]
    if n == 1:
        best = int(np.argmax(d1))
        return [best], float(d1[best])
    D = d1[:, None] + trans[start, :m, :] + emissions[1][None, :]
    bps = []
    for t in range(2, n):
        cand = D[:, :, None] + trans[:m, :m, :]             # (prev2, prev1, y)
        bps.append(np.argmax(cand, axis=0))
        D = np.max(cand, axis=0) + emissions[t][None, :]
    flat = int(np.argmax(D))
    p_prev, p_last = flat // m, flat % m
    path = [p_last, p_prev]
    for bp in reversed(bps):
        path.append(int(bp[path[-1], path[-2]]))
    return list(reversed(path)), float(D[p_prev, p_last])


# -- the model -------------------------------------------------------------


class Model:
    """One sequence labeler: config + parameters + loss/prediction."""

    def __init__(self, config: ModelConfig, vocab: Vocab, labels: LabelSet,
                 seed: int = 0):
        self.config = config
        self.vocab = vocab
        self.labels = labels
        self.store = ParamStore()
        rng = np.random.default_rng(seed)
        init_encoder(self.store, len(vocab), config.d_x, config.d_h, rng)
        init_label_embeddings(self.store, labels.m, config.d_l, rng)
        if config.variant == "nldm" and config.scorer == "trilinear":
            init_trilinear_scorer(self.store, labels.m, 2 * config.d_h,
                                  config.d_l, config.d_r, rng)
        else:
            init_additive_scorer(self.store, labels.m, 2 * config.d_h,
                                 config.d_l, rng)
        m = labels.m
        if config.variant == "crf1":
            self.store.add("crf.trans", np.zeros((m, m)))
            self.store.add("crf.start", np.zeros(m))
        elif config.variant == "crf2":
            self.store.add("crf2.trans", np.zeros((m + 1, m + 1, m)))

    # -- shared pieces ----------------------------------------------------

    def _encode(self, token_ids) -> Tensor:
        return encode(token_ids, self.store)

    def _emissions(self, H: Tensor) -> Tensor:
        """Tag-label emission scores for positions 1..n, shape (n, m)."""
        lab = getitem(self.store["lab.emb"], (slice(0, self.labels.m),
                                              slice(None)))
        return matmul(getitem(H, (slice(1, None), slice(None))),
                      matmul(self.store["score.We"], transpose(lab)))

    def _table(self, H: Tensor, gold=None, topology=None):
        return build_score_table(
            H, self.store, self.labels, self.config.k,
            scorer=self.config.scorer,
            topology=topology or self.config.topology,
            gold=gold)

    # -- losses (per-sentence negative log-likelihood) --------------------

    def sentence_nll(self, token_ids: list[int], label_ids: list[int]) -> Tensor:
        if len(token_ids) != len(label_ids):
            raise ValueError("token/label length mismatch")
        if any(y < 0 or y >= self.labels.m for y in label_ids):
            raise ValueError("label id outside the tag label range")
        variant = self.config.variant
        H = self._encode(token_ids)
        if variant == "nldm":
            full = self._table(H)
            gold = self._table(H, gold=label_ids)
            log_z = charts.log_partition(full.scores, full.root_id)
            log_s = charts.log_partition(gold.scores, gold.root_id)
            return sub(log_z, log_s)
        E = self._emissions(H)
        if variant == "softmax":
            gold = getitem(E, (np.arange(len(label_ids)),
                               np.asarray(label_ids)))
            return sub(logsumexp(E, axis=1).sum(), gold.sum())
        if variant == "crf1":
            log_z = crf1_log_partition(E, self.store["crf.trans"],
                                       self.store["crf.start"])
            return sub(log_z, crf1_gold_score(E, self.store["crf.trans"],
                                              self.store["crf.start"],
                                              label_ids))
        log_z = crf2_log_partition(E, self.store["crf2.trans"])
        return sub(log_z, crf2_gold_score(E, self.store["crf2.trans"],
                                          label_ids))

    def log_likelihood(self, token_ids, label_ids) -> float:
        return -self.sentence_nll(token_ids, label_ids).item()

    def batch_loss(self, batch: list[tuple[list[int], list[int]]]) -> Tensor:
        """Mean sentence NLL plus the L2 penalty (applied once per batch)."""
        if not batch:
            raise ValueError("empty batch")
        total = None
        for token_ids, label_ids in batch:
            nll = self.sentence_nll(token_ids, label_ids)
            total = nll if total is None else add(total, nll)
        loss = scale(total, 1.0 / len(batch))
        if self.config.omega > 0:
            loss = add(loss, scale(self.store.l2(), self.config.omega))
        return loss

    # -- prediction -------------------------------------------------------

    def predict(self, token_ids: list[int]) -> list[int]:
        variant = self.config.variant
        H = self._encode(token_ids)
        if variant == "nldm":
            table = self._table(H)
            labels, _heads, _ = charts.labeled_max_decode(table.scores.value,
                                                          table.root_id)
            return [int(y) for y in labels]
        E = self._emissions(H).value
        if variant == "softmax":
            return [int(y) for y in np.argmax(E, axis=1)]
        if variant == "crf1":
            path, _ = crf1_viterbi(E, self.store["crf.trans"].value,
                                   self.store["crf.start"].value)
            return path
        path, _ = crf2_viterbi(E, self.store["crf2.trans"].value)
        return path

    def decode_forest(self, token_ids: list[int]) -> list[int]:
        """Best latent forest: head of each token under joint maximization."""
        if self.config.variant != "nldm":
            raise ValueError("forest decoding requires the nldm variant")
        H = self._encode(token_ids)
        table = self._table(H)
        _labels, heads, _ = charts.labeled_max_decode(table.scores.value,
                                                      table.root_id)
        return [int(h) for h in heads]


# -- special-case reductions ----------------------------------------------


def _nldm_ll_with_topology(model: Model, token_ids, label_ids,
                           topology: str) -> float:
    H = model._encode(token_ids)
    full = model._table(H, topology=topology)
    gold = model._table(H, gold=label_ids, topology=topology)
    log_z = charts.labeled_inside(full.scores.value, full.root_id)
    log_s = charts.labeled_inside(gold.scores.value, gold.root_id)
    return log_s - log_z


def equivalence_check(model: Model, baseline: str, token_ids,
                      label_ids) -> float:
    """Absolute log-likelihood gap between a restricted-topology NLDM and
    the named baseline computed from the same parameters.

    `baseline` is "softmax" (root-only topology, root transition row
    frozen to zero) or "crf1" (chain-only topology; the right transition
    matrix doubles as the chain transitions and its root row as the
    start potential).
    """
    if model.config.scorer != "additive":
        raise ValueError("reductions are defined for the additive scorer")
    m = model.labels.m
    H = model._encode(token_ids)
    E = model._emissions(H)
    if baseline == "softmax":
        psi = model.store["score.psi_right"]
        saved = psi.value.copy()
        psi.value = psi.value.copy()
        psi.value[m, :] = 0.0
        try:
            ll_nldm = _nldm_ll_with_topology(model, token_ids, label_ids,
                                             "root-only")
        finally:
            psi.value = saved
        ev = E.value
        ll_base = float(np.sum(ev[np.arange(len(label_ids)), label_ids])
                        - np.sum([charts.logsumexp_raw(row) for row in ev]))
        return abs(ll_nldm - ll_base)
    if baseline == "crf1":
        ll_nldm = _nldm_ll_with_topology(model, token_ids, label_ids,
                                         "chain-only")
        psi = model.store["score.psi_right"].value
        trans = Tensor(psi[:m, :])
        start = Tensor(psi[m, :])
        log_z = crf1_log_partition(Tensor(E.value), trans, start).item()
        gold = crf1_gold_score(Tensor(E.value), trans, start, label_ids).item()
        return abs(ll_nldm - (gold - log_z))
    raise ValueError(f"unknown baseline {baseline!r}")


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**d)


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)
