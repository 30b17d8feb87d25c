"""Shared hypothesis strategies and graph builders for the test suite."""

from hypothesis import strategies as st

from graphprox.graph import LabeledGraph


@st.composite
def small_graphs(draw, min_nodes=1, max_nodes=5, alphabet=("A", "B", "C"), gid=0):
    n = draw(st.integers(min_nodes, max_nodes))
    labels = tuple(draw(st.sampled_from(alphabet)) for _ in range(n))
    pairs = [(u, v) for u in range(n) for v in range(u + 1, n)]
    mask = draw(st.lists(st.booleans(), min_size=len(pairs), max_size=len(pairs)))
    return LabeledGraph(gid, labels, tuple(p for p, keep in zip(pairs, mask) if keep))


def make_graph(labels, edges, gid=0, glabel=None):
    return LabeledGraph(gid, tuple(labels), tuple(edges), glabel)


def path(n, label="A", gid=0):
    return make_graph([label] * n, [(i, i + 1) for i in range(n - 1)], gid)


def cycle(n, label="A", gid=0):
    return make_graph([label] * n, [(i, (i + 1) % n) for i in range(n)], gid)
