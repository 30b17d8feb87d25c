"""Tree search over partial node mappings: exact A* and beam search.

A search state assigns the first ``d`` nodes of ``g1`` (in descending-degree
order, ties by id) to distinct ``g2`` nodes or to deletion.  ``g`` counts the
node edits and the edge edits between already-assigned nodes; the heuristic
bounds the remaining node edits by label-multiset mismatch and the remaining
edge edits by the difference in not-yet-settled edge counts.  Both terms
count disjoint edit operations, so their sum never overestimates.
"""

from __future__ import annotations

import heapq
import math

from ..errors import RefusalError, ResourceError, ValidationError
from ..graph import LabeledGraph
from .core import EXACT, UPPER, GedResult, NodeMapping, edit_path_from_mapping

DEFAULT_NODE_LIMIT = 10
DEFAULT_EXPANSION_LIMIT = 2_000_000

# state layout: (g, images, used_mask, settled_g2_edges, remaining_g2_label_counts);
# a deleted node's image is n2, which has no adjacency bits and sorts after real nodes


class _Problem:
    __slots__ = (
        "g1", "g2", "n1", "n2", "order", "lab1", "lab2", "adj2", "prev_nbrs",
        "rem1_counts", "rem1_edges", "m2", "n_labels",
    )

    def __init__(self, g1: LabeledGraph, g2: LabeledGraph):
        self.g1, self.g2 = g1, g2
        self.n1, self.n2 = g1.n, g2.n
        alphabet = sorted(set(g1.labels) | set(g2.labels))
        lid = {lab: i for i, lab in enumerate(alphabet)}
        self.n_labels = len(alphabet)
        self.order = sorted(range(g1.n), key=lambda u: (-g1.degrees[u], u))
        pos = {u: i for i, u in enumerate(self.order)}
        self.lab1 = [lid[g1.labels[u]] for u in self.order]
        self.lab2 = [lid[lab] for lab in g2.labels]
        self.adj2 = [sum(1 << w for w in g2.neighbors[v]) for v in range(g2.n)]
        # for depth d: positions (< d) of already-assigned g1 neighbours of order[d]
        self.prev_nbrs = [
            tuple(pos[w] for w in g1.neighbors[u] if pos[w] < d) for d, u in enumerate(self.order)
        ]
        self.rem1_counts = []
        self.rem1_edges = []
        for d in range(g1.n + 1):
            counts = [0] * self.n_labels
            for lab in self.lab1[d:]:
                counts[lab] += 1
            self.rem1_counts.append(counts)
            rest = set(self.order[d:])
            self.rem1_edges.append(sum(1 for a, b in g1.edges if a in rest or b in rest))
        self.m2 = g2.num_edges

    def root(self):
        counts = [0] * self.n_labels
        for lab in self.lab2:
            counts[lab] += 1
        root = (0, (), 0, 0, tuple(counts))
        return root, self.heuristic(0, 0, 0, root[4])

    def heuristic(self, depth, used_mask, settled2, counts2) -> int:
        r1 = self.n1 - depth
        r2 = self.n2 - used_mask.bit_count()
        c1 = self.rem1_counts[depth]
        common = 0
        for a, b in zip(c1, counts2):
            common += a if a < b else b
        node_term = (r1 if r1 > r2 else r2) - common
        return node_term + abs(self.rem1_edges[depth] - (self.m2 - settled2))

    def children(self, state):
        """Yield ``(f, g, key, child)`` for every extension of ``state`` by one node."""
        g, images, used, settled2, counts2 = state
        d = len(images)
        lab = self.lab1[d]
        prev = self.prev_nbrs[d]
        n_prev = len(prev)
        d1 = d + 1
        for v in range(self.n2):
            bit = 1 << v
            if used & bit:
                continue
            av = self.adj2[v]
            to_used = (av & used).bit_count()
            matched = 0
            for i in prev:
                if (av >> images[i]) & 1:
                    matched += 1
            lv = self.lab2[v]
            cost = g + (lab != lv) + n_prev + to_used - 2 * matched
            c2 = list(counts2)
            c2[lv] -= 1
            c2 = tuple(c2)
            child = (cost, images + (v,), used | bit, settled2 + to_used, c2)
            f = cost + self.heuristic(d1, used | bit, settled2 + to_used, c2)
            yield f, cost, v, child
        cost = g + 1 + n_prev
        child = (cost, images + (self.n2,), used, settled2, counts2)
        yield cost + self.heuristic(d1, used, settled2, counts2), cost, self.n2, child

    def to_mapping(self, images) -> NodeMapping:
        fwd: list[int | None] = [None] * self.n1
        for i, v in enumerate(images):
            fwd[self.order[i]] = None if v == self.n2 else v
        return NodeMapping(tuple(fwd), self.n2)


def _result(problem: _Problem, images, value: int, bound: str, solver: str) -> GedResult:
    m = problem.to_mapping(images)
    path = edit_path_from_mapping(problem.g1, problem.g2, m)
    assert path.cost == value, (path.cost, value)
    return GedResult(value, bound, solver, path, m)


def ged_exact_astar(
    g1: LabeledGraph,
    g2: LabeledGraph,
    node_limit: int = DEFAULT_NODE_LIMIT,
    expansion_limit: int = DEFAULT_EXPANSION_LIMIT,
    upper_bound: int | None = None,
) -> GedResult:
    """Exact GED by best-first search.

    ``upper_bound`` (any valid upper bound, e.g. from the bipartite solver)
    only prunes states whose f strictly exceeds it.
    """
    biggest = max(g1.n, g2.n)
    if biggest > node_limit:
        raise RefusalError(
            f"exact search refused: {biggest} nodes exceeds node_limit {node_limit}; use an approximate solver"
        )
    problem = _Problem(g1, g2)
    root, h0 = problem.root()
    heap = [(h0, 0, 0, root)]
    counter = 1
    expansions = 0
    n1 = problem.n1
    while heap:
        f, _, _, state = heapq.heappop(heap)
        if len(state[1]) == n1:
            # at full depth the heuristic equals the exact completion cost
            return _result(problem, state[1], f, EXACT, "astar")
        expansions += 1
        if expansions > expansion_limit:
            raise ResourceError(f"A* exceeded expansion_limit {expansion_limit}")
        depth = len(state[1]) + 1
        for cf, _, _, child in problem.children(state):
            if upper_bound is not None and cf > upper_bound:
                continue
            heapq.heappush(heap, (cf, -depth, counter, child))
            counter += 1
    raise ValidationError("upper_bound is below the exact GED")  # pragma: no cover


def ged_beam(g1: LabeledGraph, g2: LabeledGraph, width: float | int | None = 100) -> GedResult:
    """Level-synchronous beam search; ``width`` of None or ``math.inf`` keeps every state."""
    if width is None:
        width = math.inf
    if width != math.inf:
        if int(width) != width or width < 1:
            raise ValidationError(f"beam width must be a positive integer or infinity, got {width!r}")
        width = int(width)
    problem = _Problem(g1, g2)
    root, h0 = problem.root()
    level = [root]
    for _ in range(problem.n1):
        cands = []
        for state in level:
            for f, g, v, child in problem.children(state):
                cands.append((f, g, child[1], child))
        if width != math.inf and len(cands) > width:
            cands = heapq.nsmallest(width, cands, key=lambda t: t[:3])
        level = [c[3] for c in cands]
    # every full-depth state's f is its exact induced cost
    best = None
    for state in level:
        total = state[0] + problem.heuristic(problem.n1, state[2], state[3], state[4])
        key = (total, state[1])
        if best is None or key < best:
            best = key
    solver = "beam(inf)" if width == math.inf else f"beam({width})"
    return _result(problem, best[1], best[0], UPPER, solver)
