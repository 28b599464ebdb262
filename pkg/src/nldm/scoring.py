"""Edge scores between label positions and the masked score table.

Two scorers are supported:

* additive: bilinear emission for the dependent plus a direction-specific
  head-label/dependent-label transition;
* trilinear: a rank-factored three-way interaction among the dependent's
  hidden vector and both label embeddings (emission and transition merged,
  no separate direction term).

`build_score_table` assembles the full (n+1, n+1, L, L) table with L =
m + 1 (tag labels plus the root label usable only at position 0), applies
the structural masks and the dependency length limit, and stays fully
differentiable through the recorded graph.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (ParamStore, Tensor, add, concat, getitem, matmul, mul,
                       reshape, transpose)

NEG_INF = -np.inf


class LabelSet:
    """Tag labels 0..m-1 plus the distinguished root label id m."""

    def __init__(self, labels: list[str]):
        self.labels = list(labels)
        self.stoi = {lab: i for i, lab in enumerate(self.labels)}
        if len(self.stoi) != len(self.labels):
            raise ValueError("duplicate labels")

    @classmethod
    def build(cls, labels) -> "LabelSet":
        return cls(sorted(set(labels)))

    @property
    def m(self) -> int:
        return len(self.labels)

    @property
    def root_id(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def id(self, label: str) -> int:
        if label not in self.stoi:
            raise KeyError(f"unknown label {label!r}")
        return self.stoi[label]

    def ids(self, labels) -> list[int]:
        return [self.id(l) for l in labels]


@dataclass
class EdgeScoreTable:
    """Masked edge scores; `scores` has shape (n+1, n+1, m+1, m+1)."""

    scores: Tensor
    k: int
    root_id: int

    @property
    def n(self) -> int:
        return self.scores.shape[0] - 1


def init_label_embeddings(store: ParamStore, m: int, d_l: int,
                          rng: np.random.Generator) -> None:
    store.add("lab.emb", rng.uniform(-0.1, 0.1, (m + 1, d_l)))


def init_additive_scorer(store: ParamStore, m: int, two_d_h: int, d_l: int,
                         rng: np.random.Generator) -> None:
    s = np.sqrt(6.0 / (two_d_h + d_l))
    store.add("score.We", rng.uniform(-s, s, (two_d_h, d_l)))
    store.add("score.psi_right", np.zeros((m + 1, m)))
    store.add("score.psi_left", np.zeros((m + 1, m)))


def init_trilinear_scorer(store: ParamStore, m: int, two_d_h: int, d_l: int,
                          d_r: int, rng: np.random.Generator) -> None:
    if d_r < 1:
        raise ValueError("trilinear rank must be at least 1")
    s1 = np.sqrt(6.0 / (d_r + two_d_h))
    s2 = np.sqrt(6.0 / (d_r + d_l))
    store.add("score.U1", rng.uniform(-s1, s1, (d_r, two_d_h)))
    store.add("score.U2", rng.uniform(-s2, s2, (d_r, d_l)))
    store.add("score.U3", rng.uniform(-s2, s2, (d_r, d_l)))


# -- single-edge scorers (reference surface) -------------------------------


def emission_score(h_j: Tensor, y_j: int, We: Tensor, lab_emb: Tensor) -> Tensor:
    """Bilinear affinity between a hidden vector and one label embedding."""
    hrow = reshape(h_j, (1, We.shape[0]))
    t_y = reshape(getitem(lab_emb, y_j), (lab_emb.shape[1], 1))
    return reshape(matmul(matmul(hrow, We), t_y), ())


def additive_edge_score(i: int, j: int, y_i: int, y_j: int, H: Tensor,
                        store: ParamStore) -> Tensor:
    if i == j:
        raise ValueError(f"self-loop edge ({i}, {j})")
    phi = emission_score(getitem(H, j), y_j, store["score.We"], store["lab.emb"])
    psi = store["score.psi_right"] if i < j else store["score.psi_left"]
    return add(phi, getitem(psi, (y_i, y_j)))


def trilinear_edge_score(i: int, j: int, y_i: int, y_j: int, H: Tensor,
                         store: ParamStore) -> Tensor:
    if i == j:
        raise ValueError(f"self-loop edge ({i}, {j})")
    lab = store["lab.emb"]
    h = reshape(getitem(H, j), (1, store["score.U1"].shape[1]))
    v1 = matmul(h, transpose(store["score.U1"]))               # (1, Dr)
    v2 = matmul(reshape(getitem(lab, y_i), (1, lab.shape[1])),
                transpose(store["score.U2"]))
    v3 = matmul(reshape(getitem(lab, y_j), (1, lab.shape[1])),
                transpose(store["score.U3"]))
    return reshape(mul(mul(v1, v2), v3).sum(), ())


# -- full table ------------------------------------------------------------


def structural_mask(n: int, m: int, k: int, topology: str = "full") -> np.ndarray:
    """Additive mask array: 0 where an edge is allowed, -inf otherwise.

    Root edges (head position 0) are exempt from the length limit so that
    small k never makes long sentences unparsable.
    """
    if k < 1:
        raise ValueError(f"dependency length limit must be >= 1, got {k}")
    if topology not in ("full", "root-only", "chain-only"):
        raise ValueError(f"unknown topology {topology!r}")
    N, L = n + 1, m + 1
    mask = np.zeros((N, N, L, L))
    idx = np.arange(N)
    mask[:, 0] = NEG_INF                      # position 0 is never a dependent
    mask[idx, idx] = NEG_INF                  # no self-loops
    dist = np.abs(idx[:, None] - idx[None, :])
    mask[1:, :][dist[1:] > k] = NEG_INF       # length limit, root exempt
    mask[0, :, :m, :] = NEG_INF               # root position carries root label
    mask[1:, :, m, :] = NEG_INF               # root label only at position 0
    mask[:, :, :, m] = NEG_INF                # dependents carry tag labels
    if topology == "root-only":
        mask[1:, :] = NEG_INF
    elif topology == "chain-only":
        chain = idx[:, None] + 1 != idx[None, :]
        mask[chain] = NEG_INF
    return mask


def _additive_table(H: Tensor, store: ParamStore, mask: np.ndarray) -> Tensor:
    N = H.shape[0]
    lab = store["lab.emb"]
    L = lab.shape[0]
    m = L - 1
    E = matmul(matmul(H, store["score.We"]), transpose(lab))   # (N, L)
    pad = Tensor(np.zeros((L, 1)))
    psi_r = concat([store["score.psi_right"], pad], axis=1)    # (L, L)
    psi_l = concat([store["score.psi_left"], pad], axis=1)
    idx = np.arange(N)
    dir_r = Tensor((idx[:, None] < idx[None, :]).astype(float)[:, :, None, None])
    dir_l = Tensor((idx[:, None] > idx[None, :]).astype(float)[:, :, None, None])
    table = reshape(E, (1, N, 1, L)) \
        + mul(dir_r, reshape(psi_r, (1, 1, L, L))) \
        + mul(dir_l, reshape(psi_l, (1, 1, L, L)))
    return add(table, Tensor(mask))


def _trilinear_table(H: Tensor, store: ParamStore, mask: np.ndarray) -> Tensor:
    N = H.shape[0]
    lab = store["lab.emb"]
    L = lab.shape[0]
    d_r = store["score.U1"].shape[0]
    v1 = matmul(H, transpose(store["score.U1"]))               # (N, Dr)
    v2 = matmul(lab, transpose(store["score.U2"]))             # (L, Dr)
    v3 = matmul(lab, transpose(store["score.U3"]))
    w23 = mul(reshape(v2, (L, 1, d_r)), reshape(v3, (1, L, d_r)))
    s = matmul(v1, transpose(reshape(w23, (L * L, d_r))))      # (N, L*L)
    table = reshape(s, (1, N, L, L))                           # depends on j only
    return add(table, Tensor(mask))


def build_score_table(H: Tensor, store: ParamStore, labels: LabelSet, k: int,
                      scorer: str = "additive", topology: str = "full",
                      gold: list[int] | None = None) -> EdgeScoreTable:
    """Assemble the masked edge score table for one sentence.

    With `gold` set (tag label ids for positions 1..n) the table collapses
    to one label per position and comes back with shape (n+1, n+1, 1, 1).
    """
    n = H.shape[0] - 1
    mask = structural_mask(n, labels.m, k, topology)
    if scorer == "additive":
        table = _additive_table(H, store, mask)
    elif scorer == "trilinear":
        table = _trilinear_table(H, store, mask)
    else:
        raise ValueError(f"unknown scorer {scorer!r}")
    if gold is not None:
        if len(gold) != n:
            raise ValueError(f"gold label count {len(gold)} != sentence length {n}")
        if any(y < 0 or y >= labels.m for y in gold):
            raise ValueError("gold label id outside the tag label range")
        Y = np.array([labels.root_id] + list(gold))
        N = n + 1
        key = (np.repeat(np.arange(N), N), np.tile(np.arange(N), N),
               np.repeat(Y, N), np.tile(Y, N))
        fixed = reshape(getitem(table, key), (N, N, 1, 1))
        return EdgeScoreTable(scores=fixed, k=k, root_id=0)
    return EdgeScoreTable(scores=table, k=k, root_id=labels.root_id)
