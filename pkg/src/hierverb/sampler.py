"""Path-based K-shot support-set sampling.

Rare root-to-leaf paths are filtered to a fixpoint first, then paths are
visited in order of how often they occur on their own, drawing documents
without replacement until every path has at least ``K`` examples.
"""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .hierarchy import Hierarchy


class SamplingError(RuntimeError):
    pass


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    labels: frozenset[int]
    paths: frozenset[int]

    @classmethod
    def from_labels(cls, h: Hierarchy, id: str, text: str, labels: Iterable[int]) -> "Document":
        labels = frozenset(labels)
        paths, invalid = h.labels_to_paths(labels)
        if invalid or not paths:
            raise ValueError(
                f"document {id!r} is not path-consistent: labels {h.names_of(labels)}"
            )
        return cls(id=id, text=text, labels=labels, paths=frozenset(paths))

    def to_json(self, h: Hierarchy) -> dict:
        return {"id": self.id, "text": self.text, "labels": h.names_of(self.labels)}


@dataclass
class SupportSet:
    documents: list[Document]
    counts: dict[int, int]
    K: int
    seed: int
    order: str = "asc"

    def manifest(self) -> dict:
        return {
            "K": self.K,
            "seed": self.seed,
            "order": self.order,
            "path_counts": {str(k): v for k, v in sorted(self.counts.items())},
        }


def path_frequency(dataset: Iterable[Document]) -> Counter:
    freq: Counter = Counter()
    for doc in dataset:
        freq.update(doc.paths)
    return freq


def filter_rare_paths(
    dataset: Sequence[Document], K: int, h: Hierarchy | None = None
) -> tuple[list[Document], list[int]]:
    """Drop paths seen in fewer than ``K`` documents, and every document that
    carries one, until nothing changes.

    Returns the surviving documents and the sorted surviving path ids.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    docs = list(dataset)
    paths = set(path_frequency(docs))
    while True:
        before = len(paths)
        freq = path_frequency(docs)
        rare = {p for p in paths if freq[p] < K}
        paths -= rare
        docs = [d for d in docs if not (d.paths & rare)]
        if len(paths) == before:
            break
    if not paths:
        raise SamplingError(f"no label path occurs in at least K={K} documents")
    return docs, sorted(paths)


def individual_frequency(dataset: Iterable[Document]) -> Counter:
    """Number of documents whose path set is exactly one path."""
    freq: Counter = Counter()
    for doc in dataset:
        if len(doc.paths) == 1:
            freq.update(doc.paths)
    return freq


def greedy_sample(
    dataset: Sequence[Document],
    paths: Sequence[int],
    K: int,
    seed: int,
    order: str = "asc",
) -> SupportSet:
    if order not in ("asc", "desc"):
        raise ValueError(f"order must be 'asc' or 'desc', got {order!r}")
    rng = np.random.default_rng(seed)
    solo = individual_frequency(dataset)
    sign = 1 if order == "asc" else -1
    visit = sorted(paths, key=lambda p: (sign * solo[p], p))

    counts = {p: 0 for p in paths}
    taken: set[str] = set()
    chosen: list[Document] = []
    for p in visit:
        while counts[p] < K:
            pool = [d for d in dataset if p in d.paths and d.id not in taken]
            if not pool:
                raise SamplingError(
                    f"path {p} ran out of candidates at {counts[p]}/{K}; "
                    "was the dataset filtered first?"
                )
            doc = pool[int(rng.integers(len(pool)))]
            taken.add(doc.id)
            chosen.append(doc)
            for q in doc.paths:
                if q in counts:
                    counts[q] += 1
    return SupportSet(documents=chosen, counts=counts, K=K, seed=seed, order=order)


def sample_support_set(
    dataset: Sequence[Document], K: int, seed: int, order: str = "asc"
) -> SupportSet:
    filtered, paths = filter_rare_paths(dataset, K)
    return greedy_sample(filtered, paths, K, seed, order)


def load_dataset(path: str | Path, h: Hierarchy) -> list[Document]:
    docs = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            doc_id = str(rec["id"])
            if doc_id in seen:
                raise ValueError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            docs.append(Document.from_labels(h, doc_id, rec["text"], h.ids_of(rec["labels"])))
    return docs


def write_dataset(path: str | Path, docs: Iterable[Document], h: Hierarchy) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc.to_json(h), ensure_ascii=False) + "\n")


def write_support_set(path: str | Path, support: SupportSet, h: Hierarchy) -> Path:
    """Write the support JSONL and its manifest next to it; returns the manifest path."""
    path = Path(path)
    write_dataset(path, support.documents, h)
    manifest = path.with_suffix(".manifest.json")
    manifest.write_text(json.dumps(support.manifest(), indent=2) + "\n", encoding="utf-8")
    return manifest
