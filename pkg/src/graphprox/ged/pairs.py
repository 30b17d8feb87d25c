"""Ground-truth pair tables: GED labeling over a corpus, nGED, CSV IO."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Iterator, Sequence

from ..errors import ConfigError, ParseError, ValidationError
from ..graph import Dataset, LabeledGraph
from ..rng import derive_rng
from .bipartite import ged_bipartite
from .core import EXACT, UPPER, GedResult
from .hed import hed_lower
from .search import DEFAULT_NODE_LIMIT, ged_beam, ged_exact_astar

ALGOS = ("astar", "beam", "bipartite", "hed", "ensemble")
DEFAULT_BEAM_WIDTH = 100
CSV_HEADER = ["gid_i", "gid_j", "ged", "nged", "sim"]


def nged(ged: int, n1: int, n2: int) -> float:
    if n1 < 1 or n2 < 1:
        raise ValidationError("node counts must be positive")
    if ged < 0:
        raise ValidationError("GED must be non-negative")
    return 2.0 * ged / (n1 + n2)


def ensemble_ged(
    g1: LabeledGraph,
    g2: LabeledGraph,
    solver_set: Sequence[str] = ("beam", "bipartite"),
    beam_width: int = DEFAULT_BEAM_WIDTH,
    node_limit: int = DEFAULT_NODE_LIMIT,
) -> GedResult:
    """Minimum over upper-bound solvers, each run in both argument orders.

    ``astar`` in ``solver_set`` is used only when both graphs fit under
    ``node_limit``; when it runs the result is exact.
    """
    unknown = set(solver_set) - {"astar", "beam", "bipartite"}
    if unknown or not solver_set:
        raise ConfigError(f"ensemble solvers must come from astar, beam, bipartite; got {list(solver_set)}")
    results: list[GedResult] = []
    if "bipartite" in solver_set:
        results.append(ged_bipartite(g1, g2))
    if "beam" in solver_set:
        results.append(ged_beam(g1, g2, beam_width))
        back = ged_beam(g2, g1, beam_width)
        results.append(GedResult(back.value, UPPER, back.solver, None, back.mapping.reversed()))
    if "astar" in solver_set and max(g1.n, g2.n) <= node_limit:
        ub = min(r.value for r in results) if results else None
        exact = ged_exact_astar(g1, g2, node_limit=node_limit, upper_bound=ub)
        return GedResult(exact.value, EXACT, "ensemble", exact.path, exact.mapping)
    best = min(results, key=lambda r: r.value)
    return GedResult(best.value, UPPER, "ensemble", None, best.mapping)


def compute_ged(
    g1: LabeledGraph,
    g2: LabeledGraph,
    algo: str = "ensemble",
    beam_width: int = DEFAULT_BEAM_WIDTH,
    solver_set: Sequence[str] = ("beam", "bipartite"),
) -> GedResult:
    if algo == "astar":
        return ged_exact_astar(g1, g2)
    if algo == "beam":
        return ged_beam(g1, g2, beam_width)
    if algo == "bipartite":
        return ged_bipartite(g1, g2)
    if algo == "hed":
        return hed_lower(g1, g2)
    if algo == "ensemble":
        return ensemble_ged(g1, g2, solver_set, beam_width)
    raise ConfigError(f"unknown algorithm {algo!r}; expected one of {', '.join(ALGOS)}")


@dataclass(frozen=True)
class PairRecord:
    gid_i: int
    gid_j: int
    ged: int
    nged: float
    sim: float | None = None

    def __post_init__(self):
        if self.gid_i >= self.gid_j:
            raise ValidationError(f"pair record must have gid_i < gid_j, got ({self.gid_i}, {self.gid_j})")
        if self.ged < 0 or self.nged < 0:
            raise ValidationError("GED values must be non-negative")


class PairTable:
    """Pair records stored once per unordered pair, sorted by ``(gid_i, gid_j)``."""

    def __init__(self, records: Iterable[PairRecord] = ()):
        recs = sorted(records, key=lambda r: (r.gid_i, r.gid_j))
        index = {}
        for r in recs:
            key = (r.gid_i, r.gid_j)
            if key in index:
                raise ValidationError(f"duplicate pair {key}")
            index[key] = r
        self.records: tuple[PairRecord, ...] = tuple(recs)
        self._index = index

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PairRecord]:
        return iter(self.records)

    def __eq__(self, other) -> bool:
        return isinstance(other, PairTable) and self.records == other.records

    def get(self, a: int, b: int) -> PairRecord | None:
        return self._index.get((a, b) if a < b else (b, a))

    def gids(self) -> set[int]:
        return {g for r in self.records for g in (r.gid_i, r.gid_j)}

    def has_sim(self) -> bool:
        return bool(self.records) and all(r.sim is not None for r in self.records)

    def restrict(self, gids: Iterable[int]) -> PairTable:
        """Records whose endpoints both lie in ``gids``."""
        keep = set(gids)
        return PairTable(r for r in self.records if r.gid_i in keep and r.gid_j in keep)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.records:
                w.writerow([r.gid_i, r.gid_j, r.ged, f"{r.nged:.9f}", "" if r.sim is None else repr(r.sim)])

    @classmethod
    def from_csv(cls, path) -> PairTable:
        records = []
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ParseError(f"expected header {','.join(CSV_HEADER)}, got {header}", line=1)
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != 5:
                    raise ParseError(f"expected 5 fields, got {len(row)}", line=lineno)
                try:
                    gi, gj, ged = int(row[0]), int(row[1]), int(row[2])
                    nv = float(row[3])
                    sim = float(row[4]) if row[4] != "" else None
                except ValueError as exc:
                    raise ParseError(str(exc), line=lineno) from None
                if gi > gj:
                    gi, gj = gj, gi
                records.append(PairRecord(gi, gj, ged, nv, sim))
        return cls(records)


def sample_pairs(gids: Sequence[int], pair_budget: int | None, seed: int) -> list[tuple[int, int]]:
    """Uniform sample of unordered pairs without replacement, sorted; all pairs if the budget allows."""
    ordered = sorted(gids)
    n = len(ordered)
    total = n * (n - 1) // 2
    if pair_budget is None or pair_budget >= total:
        return list(combinations(ordered, 2))
    if pair_budget < 0:
        raise ConfigError("pair budget must be non-negative")
    picks = derive_rng(seed, "pairs").choice(total, size=pair_budget, replace=False)
    pairs = [_unrank_pair(int(k), n) for k in picks]
    return sorted((ordered[a], ordered[b]) for a, b in pairs)


def _unrank_pair(k: int, n: int) -> tuple[int, int]:
    # row-major enumeration of (a, b), a < b
    a = 0
    row = n - 1
    while k >= row:
        k -= row
        a += 1
        row -= 1
    return a, a + 1 + k


def _label_one(args) -> int:
    g1, g2, algo, beam_width, solver_set = args
    return compute_ged(g1, g2, algo, beam_width, solver_set).value


def ground_truth_pairs(
    ds: Dataset | Sequence[LabeledGraph],
    pair_budget: int | None = None,
    seed: int = 0,
    solver_set: Sequence[str] = ("beam", "bipartite"),
    beam_width: int = DEFAULT_BEAM_WIDTH,
    jobs: int = 1,
    algo: str = "ensemble",
) -> PairTable:
    """Label sampled pairs with the min over ``solver_set`` (or a single ``algo``)."""
    graphs = {g.gid: g for g in ds}
    if not graphs:
        raise ValidationError("cannot label pairs of an empty dataset")
    pairs = sample_pairs(list(graphs), pair_budget, seed)
    tasks = [(graphs[a], graphs[b], algo, beam_width, tuple(solver_set)) for a, b in pairs]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            values = list(pool.map(_label_one, tasks, chunksize=max(1, len(tasks) // (jobs * 8))))
    else:
        values = [_label_one(t) for t in tasks]
    records = []
    for (a, b), ged in zip(pairs, values):
        records.append(PairRecord(a, b, ged, nged(ged, graphs[a].n, graphs[b].n)))
    return PairTable(records)

