import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hierverb.hierarchy import (
    HierarchyError,
    ancestors,
    build_hierarchy,
    labels_to_paths,
    load_hierarchy,
    save_hierarchy,
)

from conftest import ids, random_tree_edges


def wide_tree(sizes):
    """Depth-len(sizes) tree whose layer d has exactly sizes[d] nodes."""
    edges = [(None, f"a{i}") for i in range(sizes[0])]
    prev = [f"a{i}" for i in range(sizes[0])]
    for d, n in enumerate(sizes[1:], 1):
        cur = [f"{chr(97 + d)}{i}" for i in range(n)]
        edges += [(prev[i % len(prev)], c) for i, c in enumerate(cur)]
        prev = cur
    return edges


class TestBuild:
    def test_two_node_chain(self):
        h = build_hierarchy([(None, "A"), ("A", "B")])
        assert h.depth == 2
        assert [[h.nodes[n].name for n in p.nodes] for p in h.leaf_paths] == [["A", "B"]]

    def test_wos_shape(self):
        h = build_hierarchy(wide_tree([7, 134]))
        assert h.depth == 2
        assert h.layer_sizes == [7, 134]

    def test_dbpedia_shape(self):
        h = build_hierarchy(wide_tree([9, 70, 219]))
        assert h.depth == 3
        assert h.layer_sizes == [9, 70, 219]
        assert h.complete_layered

    def test_ids_sorted_by_depth_then_name(self):
        h = build_hierarchy([("b", "c"), (None, "b"), (None, "a"), ("a", "z"), ("a", "d")])
        assert [n.name for n in h.nodes] == ["a", "b", "c", "d", "z"]
        assert [n.depth for n in h.nodes] == [1, 1, 2, 2, 2]
        assert h.layers == ((0, 1), (2, 3, 4))

    def test_edge_order_does_not_matter(self, walk):
        from conftest import WALKTHROUGH_EDGES

        h2 = build_hierarchy(list(reversed(WALKTHROUGH_EDGES)))
        assert h2.nodes == walk.nodes
        assert h2.leaf_paths == walk.leaf_paths

    @pytest.mark.parametrize(
        "edges, msg",
        [
            ([(None, "a"), ("a", "b"), ("c", "b")], "two parents"),
            ([(None, "a"), (None, "a")], "duplicate"),
            ([(None, "a"), ("zz", "b")], "unknown parent"),
            ([(None, "a"), ("c", "b"), ("b", "c")], "cycle"),
            ([("a", "a")], "cycle"),
            ([], "empty"),
        ],
    )
    def test_errors(self, edges, msg):
        with pytest.raises(HierarchyError, match=msg):
            build_hierarchy(edges)

    def test_ragged_flag(self):
        h = build_hierarchy([(None, "a"), (None, "b"), ("a", "c")])
        assert h.depth == 2
        assert not h.complete_layered
        assert sorted(len(p.nodes) for p in h.leaf_paths) == [1, 2]


class TestQueries:
    def test_ancestors_chain(self):
        h = build_hierarchy([(None, "A"), ("A", "B"), ("B", "C")])
        assert ancestors(h, h.id_of("C")) == [h.id_of("A"), h.id_of("B")]

    def test_ancestors_depth_one(self, walk):
        assert ancestors(walk, walk.id_of("1")) == []

    def test_ancestors_walk(self, walk):
        assert ancestors(walk, walk.id_of("7")) == [walk.id_of("1"), walk.id_of("3")]

    def test_unknown_id(self, walk):
        with pytest.raises(HierarchyError):
            ancestors(walk, 99)
        with pytest.raises(HierarchyError):
            labels_to_paths(walk, {-1})

    def test_complete_path(self, walk):
        paths, invalid = labels_to_paths(walk, ids(walk, "1", "3", "7"))
        assert paths == {walk.path_of_leaf(walk.id_of("7")).id}
        assert invalid == set()

    def test_broken_path(self, walk):
        paths, invalid = labels_to_paths(walk, ids(walk, "1", "3", "10"))
        assert paths == set()
        assert invalid == ids(walk, "1", "3", "10")

    def test_empty(self, walk):
        assert labels_to_paths(walk, set()) == (set(), set())

    def test_descendants(self, walk):
        assert set(walk.descendants(walk.id_of("1"))) == ids(walk, "3", "4", "7", "8", "9", "10")


class TestFiles:
    def test_json_roundtrip(self, walk, tmp_path):
        save_hierarchy(walk, tmp_path / "h.json")
        assert json.loads((tmp_path / "h.json").read_text())["edges"][0] == [None, "1"]
        assert load_hierarchy(tmp_path / "h.json").nodes == walk.nodes

    def test_tsv(self, tmp_path):
        (tmp_path / "h.tsv").write_text("ROOT\tScience\nScience\tsolar cells\n", encoding="utf-8")
        h = load_hierarchy(tmp_path / "h.tsv")
        assert h.node(h.id_of("solar cells")).parent == h.id_of("Science")


def brute_force_paths(edges):
    parent = {c: p for p, c in edges}
    has_child = {p for p, _ in edges if p is not None}
    out = set()
    for name in parent:
        if name in has_child:
            continue
        chain = [name]
        while parent[chain[-1]] is not None:
            chain.append(parent[chain[-1]])
        out.add(tuple(reversed(chain)))
    return out


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_tree_properties(seed):
    rng = np.random.default_rng(seed)
    edges = random_tree_edges(rng)
    h = build_hierarchy(edges)
    named = {tuple(h.nodes[n].name for n in p.nodes) for p in h.leaf_paths}
    assert named == brute_force_paths(edges)
    assert sum(h.layer_sizes) == len(h)
    for node in h.nodes:
        if node.parent is not None:
            assert h.nodes[node.parent].depth == node.depth - 1
        assert len(ancestors(h, node.id)) == node.depth - 1
    # leaves and paths are in bijection
    leaves = [n.id for n in h.nodes if h.is_leaf(n.id)]
    assert sorted(tuple(ancestors(h, l) + [l]) for l in leaves) == sorted(p.nodes for p in h.leaf_paths)
    for p in h.leaf_paths:
        assert h.is_leaf(p.leaf)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_labels_to_paths_monotone_and_partitioning(seed):
    rng = np.random.default_rng(seed)
    h = build_hierarchy(random_tree_edges(rng, max_nodes=20))
    labels = {int(i) for i in rng.choice(len(h), size=int(rng.integers(0, len(h) + 1)), replace=False)}
    extra = {int(i) for i in rng.choice(len(h), size=int(rng.integers(0, len(h) + 1)), replace=False)}
    paths, invalid = labels_to_paths(h, labels)
    covered = set().union(*(h.leaf_paths[p].nodes for p in paths)) if paths else set()
    assert covered | invalid == labels
    assert not covered & invalid
    for p in h.leaf_paths:
        assert (p.id in paths) == labels.issuperset(p.nodes)
    bigger, _ = labels_to_paths(h, labels | extra)
    assert paths <= bigger
