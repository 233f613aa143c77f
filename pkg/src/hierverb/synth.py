"""Synthetic hierarchical corpora for desk-scale experiments.

Every label is named by a single token, and a document on a leaf path emits
each of its path labels' tokens with probability ``signal``; the rest of the
document is uniform noise words.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .hierarchy import Hierarchy, build_hierarchy
from .sampler import Document


@dataclass(frozen=True)
class SyntheticSpec:
    branching: tuple[int, ...] = (3, 4)
    docs_per_path: int = 5
    tokens_per_doc: int = 8
    signal: float = 1.0
    noise_vocab: int = 40
    seed: int = 0

    def __post_init__(self):
        if not self.branching or any(b < 1 for b in self.branching):
            raise ValueError("branching needs at least one depth, each factor >= 1")
        if self.docs_per_path < 1:
            raise ValueError("docs_per_path must be >= 1")
        if not 0.0 <= self.signal <= 1.0:
            raise ValueError("signal must lie in [0, 1]")
        if self.noise_vocab < 0 or self.tokens_per_doc < 1:
            raise ValueError("noise_vocab must be >= 0 and tokens_per_doc >= 1")
        if self.noise_vocab == 0 and self.signal < 1.0:
            raise ValueError("signal < 1 needs noise words, or documents may come out empty")


def label_name(index_path: tuple[int, ...]) -> str:
    return "l" + "_".join(str(i) for i in index_path)


def synth_hierarchy(branching) -> Hierarchy:
    edges = []
    for depth in range(1, len(branching) + 1):
        for idx in product(*(range(b) for b in branching[:depth])):
            parent = label_name(idx[:-1]) if depth > 1 else None
            edges.append((parent, label_name(idx)))
    return build_hierarchy(edges)


def synth_corpus(spec: SyntheticSpec) -> tuple[Hierarchy, list[Document]]:
    rng = np.random.default_rng(spec.seed)
    h = synth_hierarchy(spec.branching)
    noise = [f"w{i}" for i in range(spec.noise_vocab)]
    docs = []
    for path in h.leaf_paths:
        names = [h.nodes[n].name for n in path.nodes]
        for _ in range(spec.docs_per_path):
            toks = [n for n in names if rng.random() < spec.signal]
            fill = max(spec.tokens_per_doc - len(toks), 0) if noise else 0
            toks += [noise[i] for i in rng.integers(len(noise), size=fill)] if fill else []
            rng.shuffle(toks)
            doc_id = f"doc{len(docs):05d}"
            docs.append(Document(doc_id, " ".join(toks), frozenset(path.nodes), frozenset({path.id})))
    return h, docs
