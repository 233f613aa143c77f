"""Prompt wrapping, tokenization and the small reference encoder.

The reference encoder stands in for a pretrained transformer: it mean-pools
(inverted-dropout) token embeddings of the text and maps the pooled vector to
one hidden state per mask slot with a per-depth affine map and ``tanh``.
Anything with the same ``encode``/``encode_backward`` contract can replace it.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

CLS, SEP, MASK, UNK = "[CLS]", "[SEP]", "[MASK]", "[UNK]"
RESERVED = (CLS, SEP, MASK, UNK)
TEMPLATE_WORDS = ("it", "was", "level:", ".")

_SPECIAL = re.compile(r"(\[(?:CLS|SEP|MASK|UNK)\])")


class EncodingError(ValueError):
    pass


def wrap_template(text: str, depth: int) -> str:
    if depth < 1:
        raise ValueError("depth must be >= 1")
    slots = " ".join(f"{d} level:{MASK}" for d in range(1, depth + 1))
    return f"{CLS} It was {slots}. {text} {SEP}"


def split_tokens(s: str) -> list[str]:
    """Lowercased whitespace tokens with the bracketed special tokens split out."""
    out = []
    for piece in _SPECIAL.split(s):
        if _SPECIAL.fullmatch(piece):
            out.append(piece)
        else:
            out.extend(piece.lower().split())
    return out


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for t in tokens:
            if t not in self.stoi:
                self.stoi[t] = len(self.itos)
                self.itos.append(t)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __getitem__(self, token: str) -> int:
        return self.stoi.get(token, self.stoi[UNK])

    @classmethod
    def build(cls, texts: Iterable[str], depth: int, extra: Iterable[str] = ()) -> "Vocab":
        """Template literals first, then every other token in sorted order."""
        literal = list(TEMPLATE_WORDS) + [str(d) for d in range(1, depth + 1)]
        words: set[str] = set()
        for t in texts:
            words.update(split_tokens(t))
        for t in extra:
            words.update(split_tokens(t))
        words -= set(RESERVED) | set(literal)
        return cls(literal + sorted(words))

    def to_json(self) -> dict[str, int]:
        return dict(self.stoi)

    @classmethod
    def from_json(cls, mapping: dict[str, int]) -> "Vocab":
        tokens = [t for t, _ in sorted(mapping.items(), key=lambda kv: kv[1])]
        if tuple(tokens[: len(RESERVED)]) != RESERVED or [
            mapping[t] for t in tokens
        ] != list(range(len(tokens))):
            raise EncodingError("vocab ids must be dense with reserved tokens at 0..3")
        return cls(tokens[len(RESERVED):])

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class WrappedInput:
    ids: np.ndarray
    mask_positions: np.ndarray
    content_span: np.ndarray

    @property
    def depth(self) -> int:
        return len(self.mask_positions)

    @property
    def content_ids(self) -> np.ndarray:
        return self.ids[self.content_span]


def tokenize(vocab: Vocab, wrapped: str, truncate_length: int = 512) -> WrappedInput:
    toks = split_tokens(wrapped)
    if toks[:3] != [CLS, "it", "was"] or toks[-1] != SEP:
        raise EncodingError("input is not a wrapped template")
    masks = []
    i = 3
    while toks[i : i + 3] == [str(len(masks) + 1), "level:", MASK]:
        masks.append(i + 2)
        i += 3
    if not masks or i >= len(toks) or toks[i] != ".":
        raise EncodingError("malformed mask slots in template")
    prefix = i + 1
    content = toks[prefix:-1]
    room = truncate_length - prefix - 1
    assert room >= 0, "truncate_length too short to hold the mask slots"
    content = content[:room]

    ids = [vocab[t] for t in toks[:prefix]]
    ids += [vocab[UNK] if t in RESERVED else vocab[t] for t in content]
    ids.append(vocab[SEP])
    return WrappedInput(
        ids=np.asarray(ids, dtype=np.int64),
        mask_positions=np.asarray(masks, dtype=np.int64),
        content_span=np.arange(prefix, prefix + len(content), dtype=np.int64),
    )


def encode_text(vocab: Vocab, text: str, depth: int, truncate_length: int = 512) -> WrappedInput:
    return tokenize(vocab, wrap_template(text, depth), truncate_length)


@dataclass
class ToyEncoderParams:
    E: np.ndarray  # (|V|, r)
    A: np.ndarray  # (D, r, r)
    u: np.ndarray  # (D, r)
    dropout: float = 0.1

    @property
    def r(self) -> int:
        return self.E.shape[1]

    @property
    def depth(self) -> int:
        return self.A.shape[0]

    def __post_init__(self):
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


def init_encoder(
    vocab_size: int, depth: int, r: int, dropout: float, rng: np.random.Generator
) -> ToyEncoderParams:
    E = rng.uniform(-0.1, 0.1, size=(vocab_size, r))
    A = rng.uniform(-0.1, 0.1, size=(depth, r, r)) + np.eye(r)
    u = rng.uniform(-0.1, 0.1, size=(depth, r))
    return ToyEncoderParams(E=E, A=A, u=u, dropout=dropout)


@dataclass
class EncodeCache:
    tokens: np.ndarray
    keep: np.ndarray  # already scaled by 1/(1-rho); shape (n, r) or None
    pooled: np.ndarray
    hidden: np.ndarray


def encode(
    params: ToyEncoderParams,
    inp: WrappedInput,
    rng: np.random.Generator | None = None,
    train_mode: bool = False,
    return_cache: bool = False,
):
    """Hidden states for the ``D`` mask slots, shape ``(D, r)``."""
    tokens = inp.content_ids
    if len(tokens) == 0:
        raise EncodingError("empty content span: the document has no tokens")
    emb = params.E[tokens]
    keep = None
    rho = params.dropout
    if train_mode and rho > 0.0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = (rng.random(emb.shape) >= rho) / (1.0 - rho)
        emb = emb * keep
    pooled = emb.mean(axis=0)
    hidden = np.tanh(np.einsum("dij,j->di", params.A, pooled) + params.u)
    if return_cache:
        return hidden, EncodeCache(tokens, keep, pooled, hidden)
    return hidden


def encode_two_views(params: ToyEncoderParams, inp: WrappedInput, rng: np.random.Generator):
    """Two dropout-noised encodings of the same input."""
    return (
        encode(params, inp, rng, train_mode=True),
        encode(params, inp, rng, train_mode=True),
    )


def encode_backward(params: ToyEncoderParams, cache: EncodeCache, grad_hidden: np.ndarray, grads: dict) -> None:
    """Accumulate d(loss)/d(E, A, u) into ``grads`` given d(loss)/d(hidden)."""
    dz = grad_hidden * (1.0 - cache.hidden**2)
    grads["A"] += dz[:, :, None] * cache.pooled[None, None, :]
    grads["u"] += dz
    dpooled = np.einsum("dij,di->j", params.A, dz)
    per_tok = np.broadcast_to(dpooled / len(cache.tokens), (len(cache.tokens), params.r))
    if cache.keep is not None:
        per_tok = per_tok * cache.keep
    np.add.at(grads["E"], cache.tokens, per_tok)

