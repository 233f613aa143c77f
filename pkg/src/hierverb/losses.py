"""Training objectives and their exact gradients.

Gold labels are carried per depth as sets of *column indices* into that
depth's verbalizer (see :func:`gold_columns`).  Batched probabilities are
lists indexed by depth, each of shape ``(N, l_d)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .encoding import ToyEncoderParams, WrappedInput, encode, encode_backward
from .hierarchy import Hierarchy
from .verbalizer import (
    SINGLE_PATH,
    VerbalizerHead,
    check_mode,
    layer_logits,
    probabilities,
    probabilities_backward,
)

EPS = 1e-12
NORM_FLOOR = 1e-12

FHC_VARIANTS = ("as_written", "infonce")
HCC_SOURCES = ("raw", "recursive")


@dataclass
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1e-2
    alpha: float = 1.0
    beta: float = 1.0
    mode: str = SINGLE_PATH
    fhc_variant: str = "as_written"
    hcc_source: str = "raw"
    fhc_include_self: bool = True
    tau: float = 0.05

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0 or self.alpha < 0:
            raise ValueError("lambda1, lambda2 and alpha must be non-negative")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        check_mode(self.mode)
        if self.fhc_variant not in FHC_VARIANTS:
            raise ValueError(f"fhc_variant must be one of {FHC_VARIANTS}")
        if self.hcc_source not in HCC_SOURCES:
            raise ValueError(f"hcc_source must be one of {HCC_SOURCES}")


Gold = Sequence[frozenset[int]]  # per depth: column indices of gold labels


def gold_columns(h: Hierarchy, labels) -> list[frozenset[int]]:
    cols: list[set[int]] = [set() for _ in range(h.depth)]
    for lab in labels:
        cols[h.node(lab).depth - 1].add(h.layer_index(lab))
    return [frozenset(c) for c in cols]


@dataclass(frozen=True)
class Example:
    inp: WrappedInput
    gold: tuple[frozenset[int], ...]


# --------------------------------------------------------------------------
# classification loss


def _target(gold_d: frozenset[int], size: int) -> np.ndarray:
    y = np.zeros(size)
    for j in gold_d:
        if not 0 <= j < size:
            raise ValueError(f"gold column {j} is not in a layer of {size} labels")
        y[j] = 1.0
    return y


def _classification(p: Sequence[np.ndarray], gold: Gold, mode: str, want_grad: bool):
    check_mode(mode)
    total = 0.0
    grads = []
    for p_d, gold_d in zip(p, gold):
        y = _target(gold_d, p_d.shape[-1])
        q = np.clip(p_d, EPS, 1.0 - EPS)
        inside = (p_d > EPS) & (p_d < 1.0 - EPS)
        if mode == SINGLE_PATH:
            total += float(-(y * np.log(q)).sum())
            g = -y / q
        else:
            total += float(-(y * np.log(q) + (1.0 - y) * np.log(1.0 - q)).sum())
            g = -y / q + (1.0 - y) / (1.0 - q)
        grads.append(np.where(inside, g, 0.0))
    return (total, grads) if want_grad else total


def classification_loss(p: Sequence[np.ndarray], gold: Gold, mode: str) -> float:
    """Sum over depths of cross-entropy (single path) or per-label BCE (multi path)
    for one document; probabilities are clamped to ``[1e-12, 1 - 1e-12]``."""
    return _classification(p, gold, mode, False)


def classification_loss_grad(p, gold: Gold, mode: str) -> tuple[float, list[np.ndarray]]:
    return _classification(p, gold, mode, True)


# --------------------------------------------------------------------------
# hierarchy-aware constraint chain


def child_matrices(h: Hierarchy) -> list[np.ndarray]:
    """``C[d][j, k] = 1`` iff column k of depth d+2 is a child of column j of depth d+1."""
    mats = []
    for d in range(h.depth - 1):
        C = np.zeros((len(h.layers[d]), len(h.layers[d + 1])))
        for j, node in enumerate(h.layers[d]):
            for c in h.children[node]:
                C[j, h.layer_index(c)] = 1.0
        mats.append(C)
    return mats


def hcc_propagate(p, children, beta: float, source: str = "raw") -> list[np.ndarray]:
    """Mix each non-bottom layer with the summed probabilities of its children.

    ``children`` is a Hierarchy or the output of :func:`child_matrices`.
    Returns the propagated layers for depths ``1..D-1``.
    """
    if isinstance(children, Hierarchy):
        children = child_matrices(children)
    if source not in HCC_SOURCES:
        raise ValueError(f"hcc_source must be one of {HCC_SOURCES}")
    D = len(p)
    out: list[np.ndarray] = [None] * (D - 1)
    below = p[D - 1] if D else None
    for d in range(D - 2, -1, -1):
        src = p[d + 1] if source == "raw" else below
        out[d] = (1.0 - beta) * p[d] + beta * (src @ children[d].T)
        below = out[d]
    return out


def hcc_propagate_backward(grad_tilde, children, beta: float, source: str, depth: int) -> list[np.ndarray]:
    """d(loss)/dp given d(loss)/d(propagated); returns one array per depth."""
    shapes = [children[d].shape[0] for d in range(depth - 1)]
    if depth >= 2:
        shapes.append(children[depth - 2].shape[1])
    lead = grad_tilde[0].shape[:-1] if grad_tilde else ()
    gp = [np.zeros(lead + (s,)) for s in shapes]
    if source == "raw":
        for d, g in enumerate(grad_tilde):
            gp[d] += (1.0 - beta) * g
            gp[d + 1] += beta * (g @ children[d])
    else:
        carry = None
        for d in range(depth - 1):
            gt = grad_tilde[d] if carry is None else grad_tilde[d] + carry
            gp[d] += (1.0 - beta) * gt
            carry = beta * (gt @ children[d])
        if carry is not None:
            gp[depth - 1] += carry
    return gp


def hcc_loss(p_tilde, gold: Gold, mode: str) -> float:
    """Classification loss on the propagated layers (depths ``1..D-1`` only)."""
    return classification_loss(p_tilde, list(gold)[: len(p_tilde)], mode)


# --------------------------------------------------------------------------
# flat hierarchical contrastive loss


def lattice_matrix(view_gold: Sequence[Gold], d: int, sources: Sequence[int] | None = None) -> np.ndarray:
    """``M[a, b] = 1`` iff views a and b share a gold label at depth ``d`` (1-based).

    Views of the same source document (and each view with itself) always
    match, which only matters for documents with no label at depth ``d``.
    """
    sets = [g[d - 1] for g in view_gold]
    n = len(sets)
    src = np.arange(n) if sources is None else np.asarray(sources)
    width = 1 + max((max(s) for s in sets if s), default=0)
    Y = np.zeros((n, width))
    for a, s in enumerate(sets):
        Y[a, list(s)] = 1.0
    return (((Y @ Y.T) > 0) | (src[:, None] == src[None, :])).astype(float)


def depth_weights(D: int, alpha: float) -> np.ndarray:
    """``2 ** (-(D - d) * alpha)`` for d = 1..D."""
    return np.array([2.0 ** (-(D - d) * alpha) for d in range(1, D + 1)])


def _normalize(Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(Z, axis=-1, keepdims=True)
    if np.any(norms < NORM_FLOOR):
        raise ValueError("zero-norm hidden vector: cosine similarity is undefined")
    return Z / norms, norms


def cosine_matrix(Z: np.ndarray) -> np.ndarray:
    Zn, _ = _normalize(Z)
    return Zn @ Zn.T


def _views(batch_gold: Sequence[Gold]) -> tuple[list[Gold], list[int]]:
    # views 0..N-1 are first passes, N..2N-1 the second passes of the same docs
    n = len(batch_gold)
    return list(batch_gold) * 2, list(range(n)) * 2


def fhc_loss_literal(views: np.ndarray, batch_gold: Sequence[Gold], alpha: float, include_self: bool = True) -> float:
    """Term-by-term evaluation of the printed contrastive formula, kept as an
    independent check on :func:`fhc_loss`."""
    twoN, D, _ = views.shape
    N = twoN // 2
    vg, src = _views(batch_gold)
    total = 0.0
    for d in range(1, D + 1):
        for u in range(1, d + 1):
            M = lattice_matrix(vg, u, src)
            for n in range(twoN):
                pos = 0.0
                full = 0.0
                for k in range(twoN):
                    if k == n and not include_self:
                        continue
                    a, b = views[n, u - 1], views[k, u - 1]
                    s = float(a @ b) / (math.sqrt(float(a @ a)) * math.sqrt(float(b @ b)))
                    pos += s * M[n, k]
                    full += s
                total += math.log(math.exp(pos) / math.exp(full)) * 2.0 ** (-(D - d) * alpha)
    return -total / (N * N * D * D)


def fhc_loss(
    views: np.ndarray,
    batch_gold: Sequence[Gold],
    alpha: float,
    variant: str = "as_written",
    include_self: bool = True,
    tau: float = 0.05,
    want_grad: bool = False,
):
    """Depth-weighted contrastive loss over ``2N`` views of shape ``(2N, D, r)``.

    ``as_written`` uses the collapsed form ``sum S*M - sum S`` of the printed
    log-ratio; ``infonce`` is a temperature-scaled supervised contrastive loss
    with the same positives (``M = 1``, other views only) and depth weights.
    """
    if variant not in FHC_VARIANTS:
        raise ValueError(f"fhc_variant must be one of {FHC_VARIANTS}")
    twoN, D, _ = views.shape
    if twoN < 2 or twoN % 2:
        raise ValueError("need an even number (>= 2) of views")
    N = twoN // 2
    scale = 1.0 / (N * N * D * D)
    # weight reaching layer u: sum of 2^{-(D-d)alpha} over d >= u
    cum = np.cumsum(depth_weights(D, alpha)[::-1])[::-1]
    vg, src = _views(batch_gold)

    total = 0.0
    grad = np.zeros_like(views) if want_grad else None
    offdiag = ~np.eye(twoN, dtype=bool)
    for u in range(D):
        Zn, norms = _normalize(views[:, u, :])
        S = Zn @ Zn.T
        M = lattice_matrix(vg, u + 1, src)
        if variant == "as_written":
            keep = np.ones_like(S) if include_self else offdiag.astype(float)
            total += -scale * cum[u] * float((S * (M - 1.0) * keep).sum())
            gS = -scale * cum[u] * (M - 1.0) * keep
        else:
            logits = np.where(offdiag, S / tau, -np.inf)
            mx = logits.max(axis=1, keepdims=True)
            lse = mx[:, 0] + np.log(np.exp(logits - mx).sum(axis=1))
            pos = (M > 0) & offdiag
            npos = pos.sum(axis=1)
            per_view = -(np.where(pos, S / tau, 0.0).sum(axis=1) / npos) + lse
            total += scale * cum[u] * float(per_view.sum())
            soft = np.exp(logits - lse[:, None])
            gS = scale * cum[u] * (soft - pos / npos[:, None]) / tau
        if want_grad:
            gZn = (gS + gS.T) @ Zn
            grad[:, u, :] = (gZn - Zn * (gZn * Zn).sum(axis=1, keepdims=True)) / norms
    return (total, grad) if want_grad else total


# --------------------------------------------------------------------------
# combined objective


def total_loss(l_c: float, l_hcc: float, l_fhc: float, lambda1: float, lambda2: float) -> float:
    return l_c + lambda1 * l_hcc + lambda2 * l_fhc


@dataclass
class LossTerms:
    classification: float
    hcc: float
    fhc: float
    total: float

    def as_dict(self) -> dict[str, float]:
        return {
            "classification": self.classification,
            "hcc": self.hcc,
            "fhc": self.fhc,
            "total": self.total,
        }


def zero_grads(enc: ToyEncoderParams, head: VerbalizerHead) -> dict:
    return {
        "E": np.zeros_like(enc.E),
        "A": np.zeros_like(enc.A),
        "u": np.zeros_like(enc.u),
        "W": [np.zeros_like(w) for w in head.W],
        "b": [np.zeros_like(x) for x in head.b],
    }


def _require_finite(term: str, arrays) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite gradient from the {term} term")


def forward_probs(enc: ToyEncoderParams, head: VerbalizerHead, inputs: Sequence[WrappedInput], rng=None, train_mode=False):
    hidden = np.stack([encode(enc, x, rng, train_mode) for x in inputs])
    return probabilities(layer_logits(head, hidden), head.mode)


def backward(
    enc: ToyEncoderParams,
    head: VerbalizerHead,
    batch: Sequence[Example],
    cfg: LossConfig,
    rng: np.random.Generator | None = None,
    children: list[np.ndarray] | None = None,
    train_mode: bool = True,
    weights: tuple[float, float, float] | None = None,
    need_grads: bool = True,
) -> tuple[LossTerms, dict | None]:
    """Loss terms and gradients for one mini-batch.

    Classification and constraint-chain losses are averaged over documents;
    the contrastive loss is a batch quantity and is only evaluated when its
    weight is non-zero.  ``weights`` overrides the ``(1, lambda1, lambda2)``
    multipliers, e.g. to isolate one term.  Dropout masks drawn in the
    forward pass are reused for the gradient.
    """
    if cfg.mode != head.mode:
        raise ValueError("loss mode and head mode disagree")
    w_c, w_h, w_f = weights if weights is not None else (1.0, cfg.lambda1, cfg.lambda2)
    N = len(batch)
    D = head.depth
    if children is None:
        if D > 1:
            raise ValueError("child matrices are required for D > 1")
        children = []

    outs = [encode(enc, ex.inp, rng, train_mode, return_cache=True) for ex in batch]
    H = np.stack([o[0] for o in outs])
    probs = probabilities(layer_logits(head, H), head.mode)
    golds = [ex.gold for ex in batch]
    p_tilde = hcc_propagate(probs, children, cfg.beta, cfg.hcc_source) if D > 1 else []

    grad_p = [np.zeros_like(p) for p in probs]
    grad_tilde = [np.zeros_like(t) for t in p_tilde]
    l_c = 0.0
    l_h = 0.0
    for i, gold in enumerate(golds):
        lc, gc = classification_loss_grad([p[i] for p in probs], gold, cfg.mode)
        l_c += lc / N
        for d in range(D):
            grad_p[d][i] += w_c * gc[d] / N
        if p_tilde:
            lh, gh = classification_loss_grad([t[i] for t in p_tilde], gold[: D - 1], cfg.mode)
            l_h += lh / N
            for d in range(D - 1):
                grad_tilde[d][i] += w_h * gh[d] / N

    l_f = 0.0
    gz = None
    if w_f != 0.0:
        outs2 = [encode(enc, ex.inp, rng, train_mode, return_cache=True) for ex in batch]
        views = np.concatenate([H, np.stack([o[0] for o in outs2])])
        res = fhc_loss(views, golds, cfg.alpha, cfg.fhc_variant, cfg.fhc_include_self, cfg.tau, want_grad=need_grads)
        l_f, gz = res if need_grads else (res, None)

    total = w_c * l_c + w_h * l_h + w_f * l_f
    if not math.isfinite(total):
        bad = [n for n, v in (("classification", l_c), ("constraint-chain", l_h), ("contrastive", l_f)) if not math.isfinite(v)]
        raise FloatingPointError(f"non-finite loss from the {', '.join(bad)} term")
    terms = LossTerms(l_c, l_h, l_f, total)
    if not need_grads:
        return terms, None

    _require_finite("classification", grad_p)
    _require_finite("constraint-chain", grad_tilde)
    if p_tilde and w_h != 0.0:
        for d, g in enumerate(hcc_propagate_backward(grad_tilde, children, cfg.beta, cfg.hcc_source, D)):
            grad_p[d] += g

    grads = zero_grads(enc, head)
    dlogits = probabilities_backward(probs, grad_p, head.mode)
    dH = np.zeros_like(H)
    for d in range(D):
        grads["W"][d] += H[:, d, :].T @ dlogits[d]
        grads["b"][d] += dlogits[d].sum(axis=0)
        dH[:, d, :] += dlogits[d] @ head.W[d].T

    if gz is not None:
        gz = w_f * gz
        _require_finite("contrastive", [gz])
        dH += gz[:N]
        for i, (_, cache) in enumerate(outs2):
            encode_backward(enc, cache, gz[N + i], grads)
    for i, (_, cache) in enumerate(outs):
        encode_backward(enc, cache, dH[i], grads)
    return terms, grads


def batch_loss(enc, head, batch, cfg, rng=None, children=None, train_mode=True, weights=None) -> float:
    """Forward-only total loss, consuming the RNG exactly like :func:`backward`."""
    return backward(enc, head, batch, cfg, rng, children, train_mode, weights, need_grads=False)[0].total
