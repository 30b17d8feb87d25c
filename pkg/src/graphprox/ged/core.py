"""Node mappings, edit paths and the edit cost a mapping induces (unit costs)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from ..errors import ValidationError
from ..graph import LabeledGraph

EXACT, UPPER, LOWER = "exact", "upper", "lower"


@dataclass(frozen=True)
class NodeInsert:
    label: str


@dataclass(frozen=True)
class NodeDelete:
    node: int


@dataclass(frozen=True)
class NodeRelabel:
    node: int
    label: str


@dataclass(frozen=True)
class EdgeInsert:
    u: int
    v: int


@dataclass(frozen=True)
class EdgeDelete:
    u: int
    v: int


EditOp = Union[NodeInsert, NodeDelete, NodeRelabel, EdgeInsert, EdgeDelete]


@dataclass(frozen=True)
class EditPath:
    """Ordered edit operations turning ``g1`` into a graph isomorphic to ``g2``.

    Existing nodes are addressed by their ``g1`` id; the k-th ``NodeInsert``
    creates node ``g1.n + k``.
    """

    ops: tuple[EditOp, ...] = ()

    @property
    def cost(self) -> int:
        return len(self.ops)

    def __len__(self):
        return len(self.ops)


@dataclass(frozen=True)
class NodeMapping:
    """``forward[u]`` is the ``g2`` node that ``g1`` node ``u`` maps to, or None for deletion.

    ``g2`` nodes outside the image are insertions.
    """

    forward: tuple[int | None, ...]
    n2: int

    def __post_init__(self):
        seen = set()
        for v in self.forward:
            if v is None:
                continue
            if not 0 <= v < self.n2:
                raise ValidationError(f"mapping target {v} outside 0..{self.n2 - 1}")
            if v in seen:
                raise ValidationError(f"mapping is not injective: node {v} used twice")
            seen.add(v)

    @property
    def inserted(self) -> list[int]:
        image = set(v for v in self.forward if v is not None)
        return [v for v in range(self.n2) if v not in image]

    def inverse(self) -> list[int | None]:
        inv: list[int | None] = [None] * self.n2
        for u, v in enumerate(self.forward):
            if v is not None:
                inv[v] = u
        return inv

    def reversed(self) -> NodeMapping:
        return NodeMapping(tuple(self.inverse()), len(self.forward))


@dataclass(frozen=True)
class GedResult:
    value: int
    bound: str
    solver: str
    path: EditPath | None = None
    mapping: NodeMapping | None = None


def _check_mapping(g1: LabeledGraph, g2: LabeledGraph, m: NodeMapping) -> None:
    if len(m.forward) != g1.n or m.n2 != g2.n:
        raise ValidationError(
            f"mapping shape ({len(m.forward)} -> {m.n2}) does not match graphs ({g1.n} -> {g2.n})"
        )


def induced_edit_cost(g1: LabeledGraph, g2: LabeledGraph, m: NodeMapping) -> int:
    _check_mapping(g1, g2, m)
    f = m.forward
    cost = 0
    for u, v in enumerate(f):
        if v is None:
            cost += 1
        elif g1.labels[u] != g2.labels[v]:
            cost += 1
    cost += len(m.inserted)
    kept = 0
    for a, b in g1.edges:
        fa, fb = f[a], f[b]
        if fa is not None and fb is not None and g2.has_edge(fa, fb):
            kept += 1
    # unmatched edges on either side cost one each
    cost += (g1.num_edges - kept) + (g2.num_edges - kept)
    return cost


def edit_path_from_mapping(g1: LabeledGraph, g2: LabeledGraph, m: NodeMapping) -> EditPath:
    _check_mapping(g1, g2, m)
    f = m.forward
    ops: list[EditOp] = []
    for a, b in g1.edges:
        fa, fb = f[a], f[b]
        if fa is None or fb is None or not g2.has_edge(fa, fb):
            ops.append(EdgeDelete(a, b))
    for u, v in enumerate(f):
        if v is None:
            ops.append(NodeDelete(u))
    for u, v in enumerate(f):
        if v is not None and g1.labels[u] != g2.labels[v]:
            ops.append(NodeRelabel(u, g2.labels[v]))
    work_id = m.inverse()
    for k, v in enumerate(m.inserted):
        ops.append(NodeInsert(g2.labels[v]))
        work_id[v] = g1.n + k
    inv = m.inverse()
    for c, d in g2.edges:
        ic, id_ = inv[c], inv[d]
        if ic is None or id_ is None or not g1.has_edge(ic, id_):
            ops.append(EdgeInsert(work_id[c], work_id[d]))
    return EditPath(tuple(ops))


def apply_edit_path(g1: LabeledGraph, path: EditPath) -> LabeledGraph:
    """Replay ``path`` on ``g1``; the result has compacted node ids and keeps ``g1.gid``."""
    labels: dict[int, str] = dict(enumerate(g1.labels))
    edges = set(g1.edges)
    next_id = g1.n
    for op in path.ops:
        if isinstance(op, EdgeDelete):
            key = (min(op.u, op.v), max(op.u, op.v))
            if key not in edges:
                raise ValidationError(f"cannot delete missing edge {key}")
            edges.remove(key)
        elif isinstance(op, EdgeInsert):
            key = (min(op.u, op.v), max(op.u, op.v))
            if key in edges or op.u not in labels or op.v not in labels or op.u == op.v:
                raise ValidationError(f"cannot insert edge {key}")
            edges.add(key)
        elif isinstance(op, NodeDelete):
            if op.node not in labels:
                raise ValidationError(f"cannot delete missing node {op.node}")
            if any(op.node in e for e in edges):
                raise ValidationError(f"node {op.node} still has incident edges")
            del labels[op.node]
        elif isinstance(op, NodeRelabel):
            if op.node not in labels:
                raise ValidationError(f"cannot relabel missing node {op.node}")
            labels[op.node] = op.label
        elif isinstance(op, NodeInsert):
            labels[next_id] = op.label
            next_id += 1
        else:
            raise ValidationError(f"unknown edit operation {op!r}")
    order = sorted(labels)
    compact = {old: new for new, old in enumerate(order)}
    return LabeledGraph(
        g1.gid,
        tuple(labels[i] for i in order),
        tuple((compact[a], compact[b]) for a, b in edges),
        g1.glabel,
    )
