"""Per-depth soft verbalizers: one ``r x l_d`` matrix and bias per layer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .encoding import Vocab, split_tokens
from .hierarchy import Hierarchy

SINGLE_PATH = "single_path"
MULTI_PATH = "multi_path"
MODES = (SINGLE_PATH, MULTI_PATH)


def check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    return mode


@dataclass
class VerbalizerHead:
    W: list[np.ndarray]  # W[d-1] has shape (r, l_d)
    b: list[np.ndarray]
    mode: str = SINGLE_PATH

    def __post_init__(self):
        check_mode(self.mode)
        if len(self.W) != len(self.b):
            raise ValueError("W and b disagree on depth")
        for w, bias in zip(self.W, self.b):
            if w.shape[1] != bias.shape[0]:
                raise ValueError("W_d and b_d disagree on layer size")

    @property
    def depth(self) -> int:
        return len(self.W)

    @property
    def r(self) -> int:
        return self.W[0].shape[0]

    @property
    def layer_sizes(self) -> list[int]:
        return [w.shape[1] for w in self.W]


def label_token_ids(h: Hierarchy, vocab: Vocab, node_id: int) -> list[int]:
    """Token ids of a label's name and of all its descendants' names, as a multiset."""
    ids = []
    for n in [node_id, *h.descendants(node_id)]:
        toks = split_tokens(h.nodes[n].name)
        if not toks:
            raise ValueError(f"label {h.nodes[n].name!r} has no tokens")
        ids.extend(vocab[t] for t in toks)
    return ids


def init_head(h: Hierarchy, E: np.ndarray, vocab: Vocab, mode: str = SINGLE_PATH) -> VerbalizerHead:
    """Each column starts at the average embedding of the label's own tokens
    plus all its descendants' tokens, every token weighted equally."""
    if len(h) == 0:
        raise ValueError("empty hierarchy")
    W, b = [], []
    for layer in h.layers:
        cols = [E[label_token_ids(h, vocab, j)].mean(axis=0) for j in layer]
        W.append(np.stack(cols, axis=1))
        b.append(np.zeros(len(layer)))
    return VerbalizerHead(W=W, b=b, mode=check_mode(mode))


def layer_logits(head: VerbalizerHead, states: np.ndarray) -> list[np.ndarray]:
    """``logits[d] = states[d] @ W_d + b_d``; the depth-d mask only feeds depth d."""
    states = np.asarray(states)
    if states.shape[-2:] != (head.depth, head.r):
        raise ValueError(
            f"hidden states of shape {states.shape} do not match head (D={head.depth}, r={head.r})"
        )
    return [states[..., d, :] @ head.W[d] + head.b[d] for d in range(head.depth)]


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def probabilities(logits: list[np.ndarray], mode: str) -> list[np.ndarray]:
    q = softmax if check_mode(mode) == SINGLE_PATH else sigmoid
    return [q(z) for z in logits]


def probabilities_backward(probs: list[np.ndarray], grad_probs: list[np.ndarray], mode: str) -> list[np.ndarray]:
    """Pull d(loss)/dp back through softmax or sigmoid to the logits."""
    out = []
    for p, g in zip(probs, grad_probs):
        if mode == SINGLE_PATH:
            out.append(p * (g - (g * p).sum(axis=-1, keepdims=True)))
        else:
            out.append(g * p * (1.0 - p))
    return out


def decode(
    probs: list[np.ndarray], mode: str, h: Hierarchy, threshold: float = 0.5
) -> set[int]:
    """Flat predicted label set over all depths; path consistency is not enforced."""
    pred: set[int] = set()
    if check_mode(mode) == SINGLE_PATH:
        for d, p in enumerate(probs):
            # np.argmax returns the first maximum, i.e. the lowest label id
            pred.add(h.layers[d][int(np.argmax(p))])
    else:
        if not 0.0 < threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")
        for d, p in enumerate(probs):
            pred.update(h.layers[d][i] for i in np.flatnonzero(p >= threshold))
    return pred


def head_to_json(head: VerbalizerHead) -> dict:
    return {
        "D": head.depth,
        "r": head.r,
        "layer_sizes": head.layer_sizes,
        "mode": head.mode,
        "W": [w.tolist() for w in head.W],
        "b": [x.tolist() for x in head.b],
    }


def head_from_json(data: dict) -> VerbalizerHead:
    W = [np.asarray(w, dtype=np.float64).reshape(data["r"], l) for w, l in zip(data["W"], data["layer_sizes"])]
    b = [np.asarray(x, dtype=np.float64).reshape(l) for x, l in zip(data["b"], data["layer_sizes"])]
    if len(W) != data["D"]:
        raise ValueError("checkpoint depth does not match its weights")
    return VerbalizerHead(W=W, b=b, mode=data["mode"])
