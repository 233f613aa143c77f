"""Label taxonomy: a tree of labels hanging off a virtual root.

Node ids are dense integers assigned by sorting on ``(depth, name)``, so the
labels of each depth occupy a contiguous id range.
"""
from __future__ import annotations

import json
import operator
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional


class HierarchyError(ValueError):
    pass


@dataclass(frozen=True)
class LabelNode:
    id: int
    name: str
    parent: Optional[int]
    depth: int


@dataclass(frozen=True)
class LabelPath:
    id: int
    nodes: tuple[int, ...]

    @property
    def leaf(self) -> int:
        return self.nodes[-1]


@dataclass(frozen=True)
class Hierarchy:
    nodes: tuple[LabelNode, ...]
    children: dict[int, frozenset[int]]
    depth: int
    layers: tuple[tuple[int, ...], ...]
    leaf_paths: tuple[LabelPath, ...]
    _by_name: dict[str, int] = field(repr=False, compare=False)
    _path_of_leaf: dict[int, int] = field(repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def complete_layered(self) -> bool:
        """True iff every leaf sits at the maximum depth."""
        return all(len(p.nodes) == self.depth for p in self.leaf_paths)

    @property
    def layer_sizes(self) -> list[int]:
        return [len(layer) for layer in self.layers]

    def layer(self, d: int) -> tuple[int, ...]:
        return self.layers[d - 1]

    def node(self, node_id: int) -> LabelNode:
        self._check(node_id)
        return self.nodes[node_id]

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise HierarchyError(f"unknown label name {name!r}") from None

    def ids_of(self, names: Iterable[str]) -> set[int]:
        return {self.id_of(n) for n in names}

    def names_of(self, ids: Iterable[int]) -> list[str]:
        return [self.nodes[i].name for i in sorted(ids)]

    def layer_index(self, node_id: int) -> int:
        """Column of ``node_id`` within its depth's verbalizer."""
        node = self.node(node_id)
        return node_id - self.layers[node.depth - 1][0]

    def is_leaf(self, node_id: int) -> bool:
        self._check(node_id)
        return not self.children[node_id]

    def path_of_leaf(self, leaf_id: int) -> LabelPath:
        self._check(leaf_id)
        if leaf_id not in self._path_of_leaf:
            raise HierarchyError(f"node {leaf_id} is not a leaf")
        return self.leaf_paths[self._path_of_leaf[leaf_id]]

    def descendants(self, node_id: int) -> list[int]:
        self._check(node_id)
        out: list[int] = []
        stack = sorted(self.children[node_id], reverse=True)
        while stack:
            n = stack.pop()
            out.append(n)
            stack.extend(sorted(self.children[n], reverse=True))
        return out

    def ancestors(self, node_id: int) -> list[int]:
        return ancestors(self, node_id)

    def labels_to_paths(self, labels: Iterable[int]) -> tuple[set[int], set[int]]:
        return labels_to_paths(self, labels)

    def _check(self, node_id: int) -> None:
        try:
            ok = 0 <= operator.index(node_id) < len(self.nodes)
        except TypeError:
            ok = False
        if not ok:
            raise HierarchyError(f"unknown node id {node_id!r}")

    def to_edges(self) -> list[list[Optional[str]]]:
        return [
            [None if n.parent is None else self.nodes[n.parent].name, n.name]
            for n in self.nodes
        ]


def build_hierarchy(edges: Iterable[tuple[Optional[str], str]]) -> Hierarchy:
    parent_of: dict[str, Optional[str]] = {}
    for parent, child in edges:
        if child in parent_of:
            if parent_of[child] != parent:
                raise HierarchyError(
                    f"label {child!r} has two parents: {parent_of[child]!r} and {parent!r}"
                )
            raise HierarchyError(f"duplicate label name {child!r}")
        if parent == child:
            raise HierarchyError(f"cycle detected at {child!r}")
        parent_of[child] = parent
    if not parent_of:
        raise HierarchyError("empty hierarchy")
    for child, parent in parent_of.items():
        if parent is not None and parent not in parent_of:
            raise HierarchyError(f"unknown parent {parent!r} of {child!r}")

    kids: dict[Optional[str], list[str]] = defaultdict(list)
    for child, parent in parent_of.items():
        kids[parent].append(child)

    depth_of: dict[str, int] = {}
    frontier = kids[None]
    d = 1
    while frontier:
        nxt = []
        for name in frontier:
            depth_of[name] = d
            nxt.extend(kids[name])
        frontier = nxt
        d += 1
    if len(depth_of) != len(parent_of):
        stuck = sorted(set(parent_of) - set(depth_of))
        raise HierarchyError(f"cycle detected among {stuck}")

    order = sorted(parent_of, key=lambda n: (depth_of[n], n))
    ids = {name: i for i, name in enumerate(order)}
    nodes = tuple(
        LabelNode(
            id=ids[name],
            name=name,
            parent=None if parent_of[name] is None else ids[parent_of[name]],
            depth=depth_of[name],
        )
        for name in order
    )
    children = {n.id: frozenset(ids[c] for c in kids[n.name]) for n in nodes}
    max_depth = max(depth_of.values())
    layers = tuple(
        tuple(n.id for n in nodes if n.depth == dd) for dd in range(1, max_depth + 1)
    )

    paths = []
    for n in nodes:
        if children[n.id]:
            continue
        chain = [n.id]
        while nodes[chain[-1]].parent is not None:
            chain.append(nodes[chain[-1]].parent)
        paths.append(LabelPath(id=len(paths), nodes=tuple(reversed(chain))))

    return Hierarchy(
        nodes=nodes,
        children=children,
        depth=max_depth,
        layers=layers,
        leaf_paths=tuple(paths),
        _by_name=ids,
        _path_of_leaf={p.leaf: p.id for p in paths},
    )


def ancestors(h: Hierarchy, node_id: int) -> list[int]:
    """Chain of ancestors of ``node_id``, root side first, excluding itself."""
    node = h.node(node_id)
    out = []
    while node.parent is not None:
        out.append(node.parent)
        node = h.nodes[node.parent]
    out.reverse()
    return out


def labels_to_paths(h: Hierarchy, labels: Iterable[int]) -> tuple[set[int], set[int]]:
    """Split a label set into the complete root-to-leaf paths it covers and the
    labels that belong to none of them.

    A path is complete only when every node on it is in ``labels``.
    """
    labels = set(labels)
    for lab in labels:
        h._check(lab)
    complete: set[int] = set()
    covered: set[int] = set()
    for lab in labels:
        if h.children[lab]:
            continue
        path = h.leaf_paths[h._path_of_leaf[lab]]
        if labels.issuperset(path.nodes):
            complete.add(path.id)
            covered.update(path.nodes)
    return complete, labels - covered


def load_hierarchy(path: str | Path) -> Hierarchy:
    """Read a ``{"edges": [...]}`` JSON file or ``parent<TAB>child`` lines
    (``ROOT`` as the null parent)."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("{"):
        data = json.loads(text)
        edges = [(p, c) for p, c in data["edges"]]
    else:
        edges = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.rstrip("\r\n").split("\t")
            if len(parts) != 2:
                raise HierarchyError(f"{path}:{lineno}: expected parent<TAB>child")
            parent, child = parts
            edges.append((None if parent == "ROOT" else parent, child))
    return build_hierarchy(edges)


def save_hierarchy(h: Hierarchy, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps({"edges": h.to_edges()}, ensure_ascii=False) + "\n", encoding="utf-8"
    )
