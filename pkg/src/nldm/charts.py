"""Dynamic programs over projective dependency forests of label positions.

All charts use split-head span items in the style of first-order
projective dependency parsing, extended with a head label on complete
items and a head/dependent label pair on incomplete items. Position 0 is
the dummy root (left edge of the sequence); multiple root children are
allowed, so the structures summed over are projective forests.

A score table is a dense array of shape (n+1, n+1, L, L) indexed by
(head position, dependent position, head label, dependent label), in log
space, with -inf marking forbidden entries. The caller is responsible
for masking (see `scoring.build_score_table`); these routines simply
treat -inf as the semiring zero.

Edge marginals are produced by an adjoint (outside) sweep over the same
recurrences; `labeled_inside_autodiff` provides an independent route via
the recorded-graph engine for cross-checking.
"""

from __future__ import annotations

import itertools

import numpy as np

from .autodiff import Tensor, getitem, logsumexp, logsumexp_raw, reshape, stack, transpose

NEG_INF = -np.inf


def _check_table(scores: np.ndarray) -> tuple[int, int]:
    scores = np.asarray(scores)
    if scores.ndim != 4 or scores.shape[0] != scores.shape[1] \
            or scores.shape[2] != scores.shape[3]:
        raise ValueError(f"score table must have shape (n+1, n+1, L, L), "
                         f"got {scores.shape}")
    if scores.shape[0] < 2:
        raise ValueError("empty sequence: score table needs at least one token")
    return scores.shape[0], scores.shape[2]


def _inside_pass(scores: np.ndarray):
    """Fill complete/incomplete item arrays in the log-sum-exp semiring."""
    N, L = _check_table(scores)
    cr = np.full((N, N, L), NEG_INF)
    cl = np.full((N, N, L), NEG_INF)
    ir = np.full((N, N, L, L), NEG_INF)
    il = np.full((N, N, L, L), NEG_INF)
    for i in range(N):
        cr[i, i, :] = 0.0
        cl[i, i, :] = 0.0
    for w in range(1, N):
        for i in range(N - w):
            j = i + w
            # M[a, b] = lse_k cr[i, k, a] + cl[k+1, j, b], k in [i, j)
            A = cr[i, i:j, :]            # (w, La)
            B = cl[i + 1:j + 1, j, :]    # (w, Lb)
            M = logsumexp_raw(A[:, :, None] + B[:, None, :], axis=0)
            ir[i, j] = M + scores[i, j]
            il[i, j] = M.T + scores[j, i]
            # cr[i, j, a] = lse_{k in (i, j], b} ir[i, k, a, b] + cr[k, j, b]
            comb = ir[i, i + 1:j + 1] + cr[i + 1:j + 1, j][:, None, :]
            cr[i, j] = logsumexp_raw(comb, axis=(0, 2))
            # cl[i, j, a] = lse_{k in [i, j), c} cl[i, k, c] + il[k, j, a, c]
            comb = cl[i, i:j, :][:, None, :] + il[i:j, j]
            cl[i, j] = logsumexp_raw(comb, axis=(0, 2))
    return cr, cl, ir, il


def _safe_ratio(logs: np.ndarray, log_out: np.ndarray) -> np.ndarray:
    """exp(logs - log_out) with zeros wherever either side is -inf."""
    out_safe = np.where(np.isfinite(log_out), log_out, 0.0)
    with np.errstate(invalid="ignore"):
        r = np.where(np.isfinite(logs), np.exp(logs - out_safe), 0.0)
    return np.where(np.isfinite(log_out), r, 0.0)


def _adjoint_pass(scores: np.ndarray, charts, root_id: int) -> np.ndarray:
    """Outside sweep: adjoints of the inside recurrences.

    Returns edge marginals aligned with the score table: entry
    (i, j, a, b) is the probability that the edge from head i (label a)
    to dependent j (label b) is present.
    """
    cr, cl, ir, il = charts
    N, L = cr.shape[0], cr.shape[2]
    acr = np.zeros((N, N, L))
    acl = np.zeros((N, N, L))
    air = np.zeros((N, N, L, L))
    ail = np.zeros((N, N, L, L))
    acr[0, N - 1, root_id] = 1.0
    for w in range(N - 1, 0, -1):
        for i in range(N - w):
            j = i + w
            # complete items of this width feed from same-width incomplete
            # items, so distribute them first
            gout = acr[i, j]
            if gout.any():
                comb = ir[i, i + 1:j + 1] + cr[i + 1:j + 1, j][:, None, :]
                wt = _safe_ratio(comb, cr[i, j][None, :, None])
                contrib = wt * gout[None, :, None]
                air[i, i + 1:j + 1] += contrib
                acr[i + 1:j + 1, j] += contrib.sum(axis=1)
            gout = acl[i, j]
            if gout.any():
                comb = cl[i, i:j, :][:, None, :] + il[i:j, j]
                wt = _safe_ratio(comb, cl[i, j][None, :, None])
                contrib = wt * gout[None, :, None]
                acl[i, i:j, :] += contrib.sum(axis=1)
                ail[i:j, j] += contrib
            gir = air[i, j]
            gil = ail[i, j]
            if gir.any() or gil.any():
                A = cr[i, i:j, :]
                B = cl[i + 1:j + 1, j, :]
                comb = A[:, :, None] + B[:, None, :]        # (w, yi, yj)
                M = logsumexp_raw(comb, axis=0)
                wt = _safe_ratio(comb, M[None])
                if gir.any():
                    c1 = wt * gir[None]
                    acr[i, i:j, :] += c1.sum(axis=2)
                    acl[i + 1:j + 1, j, :] += c1.sum(axis=1)
                if gil.any():
                    c2 = wt * gil.T[None]                   # gil[a, c] -> (c, a)
                    acr[i, i:j, :] += c2.sum(axis=2)
                    acl[i + 1:j + 1, j, :] += c2.sum(axis=1)
    marg = np.zeros_like(np.asarray(scores, dtype=float))
    for i in range(N):
        for j in range(i + 1, N):
            marg[i, j] = air[i, j]
            marg[j, i] = ail[i, j]
    return marg


# -- labeled (joint over labels and forests) -------------------------------


def labeled_inside(scores: np.ndarray, root_id: int) -> float:
    """log Z: log-sum over all label sequences and projective forests."""
    charts = _inside_pass(scores)
    return float(charts[0][0, -1, root_id])


def labeled_marginals(scores: np.ndarray, root_id: int) -> np.ndarray:
    """Edge marginals d(log Z)/d(score table), via the outside sweep."""
    charts = _inside_pass(scores)
    return _adjoint_pass(scores, charts, root_id)


def labeled_inside_and_marginals(scores: np.ndarray, root_id: int):
    charts = _inside_pass(scores)
    logz = float(charts[0][0, -1, root_id])
    return logz, _adjoint_pass(scores, charts, root_id)


def labeled_max_decode(scores: np.ndarray, root_id: int):
    """Exact joint argmax over (labels, forest) of the table score.

    Returns (labels, heads, score) where labels/heads cover positions
    1..n. Ties break toward the lowest split index, then lowest label id.
    """
    N, L = _check_table(scores)
    cr = np.full((N, N, L), NEG_INF)
    cl = np.full((N, N, L), NEG_INF)
    ir = np.full((N, N, L, L), NEG_INF)
    il = np.full((N, N, L, L), NEG_INF)
    for i in range(N):
        cr[i, i, :] = 0.0
        cl[i, i, :] = 0.0
    bp_ir = np.zeros((N, N, L, L), dtype=np.intp)
    bp_il = np.zeros((N, N, L, L), dtype=np.intp)
    bp_cr_k = np.zeros((N, N, L), dtype=np.intp)
    bp_cr_y = np.zeros((N, N, L), dtype=np.intp)
    bp_cl_k = np.zeros((N, N, L), dtype=np.intp)
    bp_cl_y = np.zeros((N, N, L), dtype=np.intp)
    with np.errstate(invalid="ignore"):
        for w in range(1, N):
            for i in range(N - w):
                j = i + w
                A = cr[i, i:j, :]
                B = cl[i + 1:j + 1, j, :]
                comb = A[:, :, None] + B[:, None, :]        # (w, yi, yj)
                kidx = np.argmax(comb, axis=0)
                M = np.max(comb, axis=0)
                ir[i, j] = M + scores[i, j]
                bp_ir[i, j] = kidx + i
                il[i, j] = M.T + scores[j, i]
                bp_il[i, j] = kidx.T + i
                comb2 = ir[i, i + 1:j + 1] + cr[i + 1:j + 1, j][:, None, :]
                flatc = np.transpose(comb2, (1, 0, 2)).reshape(L, w * L)
                best = np.argmax(flatc, axis=1)             # split-major ties
                cr[i, j] = flatc[np.arange(L), best]
                bp_cr_k[i, j] = best // L + (i + 1)
                bp_cr_y[i, j] = best % L
                comb3 = cl[i, i:j, :][:, None, :] + il[i:j, j]
                flatc = np.transpose(comb3, (1, 0, 2)).reshape(L, w * L)
                best = np.argmax(flatc, axis=1)
                cl[i, j] = flatc[np.arange(L), best]
                bp_cl_k[i, j] = best // L + i
                bp_cl_y[i, j] = best % L
    score = float(cr[0, N - 1, root_id])
    labels = [root_id] * N
    heads = [0] * N
    work = [("cr", 0, N - 1, root_id, -1)]
    while work:
        kind, i, j, a, b = work.pop()
        if kind == "cr":
            if i == j:
                continue
            k, yk = bp_cr_k[i, j, a], bp_cr_y[i, j, a]
            work.append(("ir", i, k, a, yk))
            work.append(("cr", k, j, yk, -1))
        elif kind == "cl":
            if i == j:
                continue
            k, yk = bp_cl_k[i, j, a], bp_cl_y[i, j, a]
            work.append(("cl", i, k, yk, -1))
            work.append(("il", k, j, a, yk))
        elif kind == "ir":
            heads[j] = i
            labels[j] = b
            k = bp_ir[i, j, a, b]
            work.append(("cr", i, k, a, -1))
            work.append(("cl", k + 1, j, b, -1))
        else:  # il: head j with label a, dependent i with label b
            heads[i] = j
            labels[i] = b
            k = bp_il[i, j, a, b]
            work.append(("cr", i, k, b, -1))
            work.append(("cl", k + 1, j, a, -1))
    return labels[1:], heads[1:], score


# -- fixed-label specializations ------------------------------------------


def _expand_fixed(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ValueError(f"fixed-label table must be square, got {scores.shape}")
    return scores[:, :, None, None]


def inside_fixed_labels(scores: np.ndarray) -> float:
    """log S: log-sum over all projective forests of a fixed label sequence."""
    return labeled_inside(_expand_fixed(scores), root_id=0)


def marginals_fixed_labels(scores: np.ndarray) -> np.ndarray:
    """Head-choice marginals mu(i, j) = P(edge (i, j) | labels fixed)."""
    return labeled_marginals(_expand_fixed(scores), root_id=0)[:, :, 0, 0]


def max_fixed_labels(scores: np.ndarray):
    """Best projective forest for a fixed label sequence: (heads, score)."""
    _, heads, score = labeled_max_decode(_expand_fixed(scores), root_id=0)
    return heads, score


# -- differentiable wrappers ----------------------------------------------


def log_partition(table: Tensor, root_id: int) -> Tensor:
    """labeled_inside as a recorded-graph op; backward uses the outside sweep."""
    charts = _inside_pass(table.value)
    value = charts[0][0, -1, root_id]
    scores_val = table.value

    def bwd(g):
        marg = _adjoint_pass(scores_val, charts, root_id)
        return (g * marg,)

    return Tensor(value, parents=(table,), backward=bwd, op="dep-inside")


def log_score_fixed(table: Tensor) -> Tensor:
    """inside_fixed_labels as a recorded-graph op over an (n+1, n+1) table."""
    expanded = _expand_fixed(table.value)
    charts = _inside_pass(expanded)
    value = charts[0][0, -1, 0]

    def bwd(g):
        marg = _adjoint_pass(expanded, charts, 0)[:, :, 0, 0]
        return (g * marg,)

    return Tensor(value, parents=(table,), backward=bwd, op="dep-inside-fixed")


def labeled_inside_autodiff(table: Tensor, root_id: int) -> Tensor:
    """Reference inside built from graph primitives (slow, for cross-checks)."""
    N = table.shape[0]
    L = table.shape[2]
    if N < 2:
        raise ValueError("empty sequence")
    zero = Tensor(np.zeros(L))
    cr = {(i, i): zero for i in range(N)}
    cl = {(i, i): zero for i in range(N)}
    ir: dict[tuple[int, int], Tensor] = {}
    il: dict[tuple[int, int], Tensor] = {}
    for w in range(1, N):
        for i in range(N - w):
            j = i + w
            terms = [reshape(cr[(i, k)], (L, 1)) + reshape(cl[(k + 1, j)], (1, L))
                     for k in range(i, j)]
            M = logsumexp(stack(terms, axis=0), axis=0)
            ir[(i, j)] = M + getitem(table, (i, j))
            il[(i, j)] = transpose(M) + getitem(table, (j, i))
            crterms = [ir[(i, k)] + reshape(cr[(k, j)], (1, L))
                       for k in range(i + 1, j + 1)]
            cr[(i, j)] = logsumexp(stack(crterms, axis=0), axis=(0, 2))
            clterms = [reshape(cl[(i, k)], (1, L)) + il[(k, j)]
                       for k in range(i, j)]
            cl[(i, j)] = logsumexp(stack(clterms, axis=0), axis=(0, 2))
    return getitem(cr[(0, N - 1)], root_id)


# -- enumeration oracle ----------------------------------------------------


def _is_forest(heads: tuple[int, ...]) -> bool:
    n = len(heads)
    for j in range(1, n + 1):
        seen = set()
        cur = j
        while cur != 0:
            if cur in seen:
                return False
            seen.add(cur)
            cur = heads[cur - 1]
    return True


def _is_projective(heads: tuple[int, ...]) -> bool:
    edges = [(min(h, j), max(h, j)) for j, h in enumerate(heads, start=1)]
    for (a, b), (c, d) in itertools.combinations(edges, 2):
        if a < c < b < d or c < a < d < b:
            return False
    return True


def enumerate_projective_forests(n: int) -> list[tuple[int, ...]]:
    """All projective head assignments over positions 1..n (root at 0).

    Returned as tuples `heads` with heads[j-1] = head of token j. Guarded
    to small n: the raw candidate space is n^n.
    """
    if n < 1:
        raise ValueError("need at least one token")
    if n > 7:
        raise ValueError(f"enumeration limited to n <= 7, got {n}")
    out = []
    for heads in itertools.product(*[[h for h in range(n + 1) if h != j]
                                     for j in range(1, n + 1)]):
        if _is_forest(heads) and _is_projective(heads):
            out.append(heads)
    return out
