"""Labeled graphs, JSONL corpora, synthetic generation, splits and node features."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError
from .rng import derive_rng

FAMILIES = ("path", "cycle", "star", "complete", "random_tree", "erdos_renyi")


@dataclass(frozen=True)
class LabeledGraph:
    """Undirected node-labeled graph with node ids ``0..N-1``.

    ``edges`` is stored canonically: each pair as ``(min, max)``, sorted.
    """

    gid: int
    labels: tuple[str, ...]
    edges: tuple[tuple[int, int], ...] = ()
    glabel: str | None = None

    def __post_init__(self):
        if not isinstance(self.gid, (int, np.integer)) or isinstance(self.gid, bool) or self.gid < 0:
            raise ValidationError(f"gid must be a non-negative integer, got {self.gid!r}")
        n = len(self.labels)
        if n < 1:
            raise ValidationError(f"graph {self.gid}: at least one node required")
        canon = set()
        for e in self.edges:
            u, v = int(e[0]), int(e[1])
            if u == v:
                raise ValidationError(f"graph {self.gid}: self-loop on node {u}")
            if not (0 <= u < n and 0 <= v < n):
                raise ValidationError(f"graph {self.gid}: edge ({u}, {v}) references a missing node")
            key = (u, v) if u < v else (v, u)
            if key in canon:
                raise ValidationError(f"graph {self.gid}: duplicate edge {key}")
            canon.add(key)
        object.__setattr__(self, "gid", int(self.gid))
        object.__setattr__(self, "labels", tuple(str(x) for x in self.labels))
        object.__setattr__(self, "edges", tuple(sorted(canon)))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def nodes(self) -> list[tuple[int, str]]:
        return list(enumerate(self.labels))

    @cached_property
    def neighbors(self) -> tuple[tuple[int, ...], ...]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        return tuple(tuple(sorted(a)) for a in adj)

    @cached_property
    def degrees(self) -> tuple[int, ...]:
        return tuple(len(a) for a in self.neighbors)

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    def has_edge(self, u: int, v: int) -> bool:
        return ((u, v) if u < v else (v, u)) in self.edge_set

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for u, v in self.edges:
            a[u, v] = a[v, u] = 1.0
        return a

    def to_record(self) -> dict:
        return {
            "gid": self.gid,
            "nodes": [{"id": i, "label": lab} for i, lab in enumerate(self.labels)],
            "edges": [[u, v] for u, v in self.edges],
            "glabel": self.glabel,
        }

    @classmethod
    def from_record(cls, rec: dict) -> LabeledGraph:
        if not isinstance(rec, dict):
            raise ValidationError("graph record must be a JSON object")
        for key in ("gid", "nodes", "edges"):
            if key not in rec:
                raise ValidationError(f"graph record missing field {key!r}")
        nodes = rec["nodes"]
        if not isinstance(nodes, list):
            raise ValidationError("'nodes' must be a list")
        index: dict[int, int] = {}
        labels = []
        for node in nodes:
            nid = node.get("id") if isinstance(node, dict) else None
            if not isinstance(nid, int) or isinstance(nid, bool):
                raise ValidationError(f"graph {rec['gid']}: node id must be an integer")
            if nid in index:
                raise ValidationError(f"graph {rec['gid']}: duplicate node id {nid}")
            index[nid] = len(labels)
            labels.append(node.get("label", ""))
        edges = []
        for e in rec["edges"]:
            if not isinstance(e, list) or len(e) != 2:
                raise ValidationError(f"graph {rec['gid']}: edge must be a [u, v] pair")
            u, v = e
            if u == v:
                raise ValidationError(f"graph {rec['gid']}: self-loop on node {u}")
            if u not in index or v not in index:
                raise ValidationError(f"graph {rec['gid']}: edge [{u}, {v}] references a missing node")
            edges.append((index[u], index[v]))
        glabel = rec.get("glabel")
        return cls(rec["gid"], tuple(labels), tuple(edges), None if glabel is None else str(glabel))


@dataclass(frozen=True)
class LabelVocab:
    labels: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.labels)) != len(self.labels):
            raise ValidationError("vocabulary labels must be distinct")

    @property
    def oov_index(self) -> int:
        return len(self.labels)

    @property
    def width(self) -> int:
        return len(self.labels) + 1

    @cached_property
    def _index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.labels)}

    def index(self, label: str) -> int:
        return self._index.get(label, self.oov_index)


@dataclass(frozen=True)
class Dataset:
    graphs: tuple[LabeledGraph, ...]
    vocab: LabelVocab | None = None
    _by_gid: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        by_gid = {}
        for g in self.graphs:
            if g.gid in by_gid:
                raise ValidationError(f"duplicate gid {g.gid}")
            by_gid[g.gid] = g
        object.__setattr__(self, "_by_gid", by_gid)

    def __len__(self):
        return len(self.graphs)

    def __iter__(self):
        return iter(self.graphs)

    def __getitem__(self, gid: int) -> LabeledGraph:
        try:
            return self._by_gid[gid]
        except KeyError:
            raise ValidationError(f"unknown gid {gid}") from None

    def __contains__(self, gid) -> bool:
        return gid in self._by_gid

    @property
    def gids(self) -> list[int]:
        return [g.gid for g in self.graphs]

    def subset(self, gids: Iterable[int]) -> Dataset:
        return Dataset(tuple(self[g] for g in sorted(gids)), self.vocab)


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    seed: int = 0

    def __post_init__(self):
        if len(self.ratios) != 3:
            raise ConfigError("split needs exactly three ratios")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ConfigError(f"split ratios must sum to 1, got {sum(self.ratios)!r}")
        if any(not (0.0 < r < 1.0) for r in self.ratios):
            raise ConfigError("each split ratio must lie strictly between 0 and 1")


# ---------------------------------------------------------------------------
# IO


def load_dataset(path) -> Dataset:
    graphs = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"malformed JSON: {exc.msg}", line=lineno) from None
            try:
                g = LabeledGraph.from_record(rec)
            except ValidationError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
            if g.gid in seen:
                raise ValidationError(f"line {lineno}: duplicate gid {g.gid}")
            seen.add(g.gid)
            graphs.append(g)
    return Dataset(tuple(graphs))


def dumps_graph(g: LabeledGraph) -> str:
    return json.dumps(g.to_record(), ensure_ascii=False, separators=(",", ":"))


def save_dataset(ds: Dataset | Sequence[LabeledGraph], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for g in ds:
            fh.write(dumps_graph(g) + "\n")


# ---------------------------------------------------------------------------
# splits, vocabulary, features


def split_dataset(ds: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset, Dataset]:
    n = len(ds)
    if n < 5:
        raise ValidationError(f"need at least 5 graphs to split, got {n}")
    n_val = math.floor(n * spec.ratios[1])
    n_test = math.floor(n * spec.ratios[2])
    gids = sorted(ds.gids)
    order = derive_rng(spec.seed, "split").permutation(n)
    shuffled = [gids[i] for i in order]
    val = shuffled[:n_val]
    test = shuffled[n_val:n_val + n_test]
    train = shuffled[n_val + n_test:]
    return ds.subset(train), ds.subset(val), ds.subset(test)


def build_label_vocab(ds: Iterable[LabeledGraph]) -> LabelVocab:
    return LabelVocab(tuple(sorted({lab for g in ds for lab in g.labels})))


def encode_features(g: LabeledGraph, vocab: LabelVocab | None) -> np.ndarray:
    if vocab is None:
        return np.ones((g.n, 1))
    x = np.zeros((g.n, vocab.width))
    x[np.arange(g.n), [vocab.index(lab) for lab in g.labels]] = 1.0
    return x


def permute_nodes(g: LabeledGraph, perm: Sequence[int]) -> LabeledGraph:
    """Relabel node ``i`` as ``perm[i]``."""
    perm = [int(p) for p in perm]
    if sorted(perm) != list(range(g.n)):
        raise ValidationError(f"permutation of {g.n} nodes is not a bijection: {perm}")
    labels = [""] * g.n
    for i, p in enumerate(perm):
        labels[p] = g.labels[i]
    edges = tuple((perm[u], perm[v]) for u, v in g.edges)
    return LabeledGraph(g.gid, tuple(labels), edges, g.glabel)


# ---------------------------------------------------------------------------
# synthetic corpora

_FAMILY_RE = re.compile(r"^(?P<name>[a-z_]+)(?:\((?P<p>[0-9.eE+-]+)\))?$")


@dataclass(frozen=True)
class FamilySpec:
    family: str
    count: int
    size_range: tuple[int, int]
    alphabet: tuple[str, ...] = ("A",)
    p: float = 0.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {', '.join(FAMILIES)}")
        lo, hi = self.size_range
        if lo < 1 or hi < lo:
            raise ConfigError(f"invalid size range {lo}..{hi}")
        if self.count < 0:
            raise ConfigError("family count must be non-negative")
        if not self.alphabet:
            raise ConfigError("label alphabet must not be empty")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"edge probability {self.p} outside [0, 1]")

    @classmethod
    def parse(cls, text: str) -> FamilySpec:
        """Parse ``family:count:lo..hi[:L1,L2,...]``; ``erdos_renyi(p)`` carries its edge probability."""
        parts = text.split(":")
        if len(parts) not in (3, 4):
            raise ConfigError(f"family spec {text!r} must look like family:count:lo..hi[:labels]")
        m = _FAMILY_RE.match(parts[0].strip())
        if not m:
            raise ConfigError(f"bad family name in {text!r}")
        name = m.group("name")
        if name not in FAMILIES and name.endswith("s") and name[:-1] in FAMILIES:
            name = name[:-1]
        try:
            count = int(parts[1])
            lo_s, _, hi_s = parts[2].partition("..")
            lo = int(lo_s)
            hi = int(hi_s) if hi_s else lo
            p = float(m.group("p")) if m.group("p") else 0.5
        except ValueError:
            raise ConfigError(f"bad numbers in family spec {text!r}") from None
        alphabet = ("A",)
        if len(parts) == 4:
            alphabet = tuple(s for s in parts[3].split(",") if s != "") or ("",)
        return cls(name, count, (lo, hi), alphabet, p)


def _family_edges(family: str, n: int, p: float, rng: np.random.Generator) -> list[tuple[int, int]]:
    if family == "path":
        return [(i, i + 1) for i in range(n - 1)]
    if family == "cycle":
        if n < 3:
            return [(i, i + 1) for i in range(n - 1)]
        return [(i, (i + 1) % n) for i in range(n)]
    if family == "star":
        return [(0, i) for i in range(1, n)]
    if family == "complete":
        return [(i, j) for i in range(n) for j in range(i + 1, n)]
    if family == "random_tree":
        return [(int(rng.integers(0, i)), i) for i in range(1, n)]
    if family == "erdos_renyi":
        draws = rng.random(n * (n - 1) // 2)
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        return [e for e, r in zip(pairs, draws) if r < p]
    raise ConfigError(f"unknown family {family!r}")


def synth_generate(family_spec: Sequence[FamilySpec], seed: int) -> Dataset:
    if not family_spec:
        raise ConfigError("empty family spec")
    rng = derive_rng(seed, "synth")
    graphs = []
    gid = 0
    for fs in family_spec:
        for _ in range(fs.count):
            n = int(rng.integers(fs.size_range[0], fs.size_range[1] + 1))
            labels = tuple(fs.alphabet[int(i)] for i in rng.integers(0, len(fs.alphabet), size=n))
            edges = _family_edges(fs.family, n, fs.p, rng)
            graphs.append(LabeledGraph(gid, labels, tuple(edges), fs.family))
            gid += 1
    return Dataset(tuple(graphs))
