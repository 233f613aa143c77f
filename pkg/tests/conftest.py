import numpy as np
import pytest

from hierverb.hierarchy import build_hierarchy

# Taxonomy used in the path-metric walkthrough: gold path 1/3/7, and 10 sits
# under 4, so {1, 3, 10} cannot form a path.
WALKTHROUGH_EDGES = [
    (None, "1"), (None, "2"),
    ("1", "3"), ("1", "4"), ("2", "5"), ("2", "6"),
    ("3", "7"), ("3", "8"), ("4", "9"), ("4", "10"), ("5", "11"), ("6", "12"),
]


@pytest.fixture
def walk():
    return build_hierarchy(WALKTHROUGH_EDGES)


def ids(h, *names):
    return {h.id_of(n) for n in names}


def random_tree_edges(rng, max_nodes=50, max_depth=4):
    """Random tree as an edge list; node names are ``n<i>``."""
    n = int(rng.integers(1, max_nodes + 1))
    edges = []
    depth = {}
    for i in range(n):
        name = f"n{i}"
        candidates = [p for p in depth if depth[p] < max_depth]
        if not depth or rng.random() < 0.2 or not candidates:
            edges.append((None, name))
            depth[name] = 1
        else:
            parent = candidates[int(rng.integers(len(candidates)))]
            edges.append((parent, name))
            depth[name] = depth[parent] + 1
    return edges


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed at the end of the pytest run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("] ")[1].split(".")[0])):
            terminalreporter.write_line(line)
