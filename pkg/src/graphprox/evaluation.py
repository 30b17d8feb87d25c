"""Ranking metrics, query ranking, logistic-regression classification and 2-D projection."""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import ParseError, ValidationError
from .ged.pairs import PairTable

MODES = ("distance", "similarity")


# ---------------------------------------------------------------------------
# rank correlation and precision


def kendall_tau_b(x, y) -> float:
    """Kendall tau-b with tie correction; NaN when either side is constant."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValidationError("kendall tau needs at least two observations")
    iu = np.triu_indices(x.size, k=1)
    sx = np.sign(x[:, None] - x[None, :])[iu]
    sy = np.sign(y[:, None] - y[None, :])[iu]
    n_x = np.count_nonzero(sx)  # pairs not tied in x
    n_y = np.count_nonzero(sy)
    if n_x == 0 or n_y == 0:
        return float("nan")
    s = float(np.sum(sx * sy))  # concordant minus discordant
    return s / math.sqrt(float(n_x) * float(n_y))


def top_k(scores, k: int, ids: Sequence[int] | None = None) -> list[int]:
    """Ids of the ``k`` smallest scores, ties broken by ascending id."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    ids = np.arange(scores.size) if ids is None else np.asarray(ids)
    order = np.lexsort((ids, scores))
    return [int(ids[i]) for i in order[:k]]


def precision_at_k(true_scores, pred_scores, k: int, ids: Sequence[int] | None = None) -> float:
    """Overlap of the true and predicted top-k, smaller score = closer."""
    if k <= 0:
        raise ValidationError(f"k must be positive, got {k}")
    n = np.asarray(true_scores).size
    if k > n:
        raise ValidationError(f"k={k} exceeds corpus size {n}")
    return len(set(top_k(true_scores, k, ids)) & set(top_k(pred_scores, k, ids))) / k


# ---------------------------------------------------------------------------
# query ranking


@dataclass(frozen=True)
class Ranking:
    query_gid: int
    items: tuple[tuple[int, float], ...]
    direction: str  # "ascending" (distance) or "descending" (similarity)


def _scores(query_h, corpus_h: np.ndarray, mode: str) -> np.ndarray:
    q = np.asarray(query_h, dtype=np.float64).ravel()
    if corpus_h.ndim != 2 or corpus_h.shape[1] != q.size:
        raise ValidationError(f"query dim {q.size} does not match corpus embeddings {corpus_h.shape}")
    if mode == "distance":
        diff = corpus_h - q
        return np.einsum("ij,ij->i", diff, diff)
    if mode == "similarity":
        return corpus_h @ q
    raise ValidationError(f"unknown ranking mode {mode!r}")


def rank_query(query_h, corpus: Mapping[int, np.ndarray] | tuple[Sequence[int], np.ndarray],
               mode: str = "distance", query_gid: int = -1) -> Ranking:
    if isinstance(corpus, tuple):
        gids, mat = list(corpus[0]), np.asarray(corpus[1], dtype=np.float64)
    else:
        gids = list(corpus)
        mat = np.array([np.asarray(corpus[g], dtype=np.float64).ravel() for g in gids])
    if not gids:
        raise ValidationError("corpus is empty")
    scores = _scores(query_h, mat, mode)
    key = scores if mode == "distance" else -scores
    order = np.lexsort((np.asarray(gids), key))
    items = tuple((int(gids[i]), float(scores[i])) for i in order)
    return Ranking(query_gid, items, "ascending" if mode == "distance" else "descending")


@dataclass
class EvalReport:
    mode: str
    tau: float
    p_at_k: float
    k: int
    mse: float | None
    n_queries: int
    undefined_tau: int = 0
    accuracy: float | None = None
    rankings: list[Ranking] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "tau": self.tau, "p_at_k": self.p_at_k, "k": self.k, "mse": self.mse,
            "n_queries": self.n_queries, "undefined_tau": self.undefined_tau, "accuracy": self.accuracy,
        }


def evaluate_scores(query_gids: Sequence[int], corpus_gids: Sequence[int],
                    scorer: Callable[[int, list[int]], np.ndarray], truth: PairTable,
                    mode: str = "distance", k: int = 10) -> EvalReport:
    """Compare per-query predicted scores with the ground-truth nGED ordering.

    ``scorer(q, gids)`` returns one score per corpus gid (the query itself is
    always excluded from its own corpus).  ``k`` falls back to the corpus size
    on tiny corpora and ``report.k`` records the value used.  Queries whose
    tau is undefined are counted, not averaged.
    """
    if mode not in MODES:
        raise ValidationError(f"unknown ranking mode {mode!r}")
    corpus_gids = list(corpus_gids)
    taus, precs, sq_err, rankings = [], [], [], []
    undefined = 0
    k_used = k
    for qg in query_gids:
        gids = [g for g in corpus_gids if g != qg]
        if not gids:
            raise ValidationError(f"query {qg} has an empty corpus")
        true = np.empty(len(gids))
        for i, g in enumerate(gids):
            rec = truth.get(qg, g)
            if rec is None:
                raise ValidationError(f"no ground truth for pair ({qg}, {g})")
            true[i] = rec.nged
        scores = np.asarray(scorer(qg, gids), dtype=np.float64)
        closeness = scores if mode == "distance" else -scores
        tau = kendall_tau_b(true, closeness)
        if math.isnan(tau):
            undefined += 1
        else:
            taus.append(tau)
        k_used = min(k, len(gids))
        precs.append(precision_at_k(true, closeness, k_used, gids))
        if mode == "distance":
            sq_err.append((scores - true) ** 2)
        order = np.lexsort((np.asarray(gids), closeness))
        items = tuple((int(gids[i]), float(scores[i])) for i in order)
        rankings.append(Ranking(int(qg), items, "ascending" if mode == "distance" else "descending"))
    return EvalReport(
        mode=mode,
        tau=float(np.mean(taus)) if taus else float("nan"),
        p_at_k=float(np.mean(precs)) if precs else float("nan"),
        k=k_used,
        mse=float(np.mean(np.concatenate(sq_err))) if sq_err else None,
        n_queries=len(precs),
        undefined_tau=undefined,
        rankings=rankings,
    )


def evaluate_ranking(query_gids: Sequence[int], query_h: np.ndarray, corpus_gids: Sequence[int],
                     corpus_h: np.ndarray, truth: PairTable, mode: str = "distance", k: int = 10) -> EvalReport:
    """Embedding-based ranking of ``corpus`` for each query, scored against ``truth``."""
    qmap = {int(g): np.asarray(h, dtype=np.float64) for g, h in zip(query_gids, query_h)}
    cmap = {int(g): np.asarray(h, dtype=np.float64) for g, h in zip(corpus_gids, corpus_h)}

    def scorer(q, gids):
        return _scores(qmap[q], np.array([cmap[g] for g in gids]), mode)

    return evaluate_scores(list(qmap), list(cmap), scorer, truth, mode, k)


def write_rankings_csv(rankings: Sequence[Ranking], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_gid", "rank", "gid", "score"])
        for r in sorted(rankings, key=lambda r: r.query_gid):
            for rank, (gid, score) in enumerate(r.items, start=1):
                w.writerow([r.query_gid, rank, gid, f"{score:.9f}"])


# ---------------------------------------------------------------------------
# logistic regression


@dataclass
class LogRegModel:
    classes: tuple[str, ...]
    weights: np.ndarray  # (features, classes) on standardized inputs
    bias: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    loss_history: list[float] = field(default_factory=list, repr=False)

    def logits(self, x) -> np.ndarray:
        z = (np.atleast_2d(np.asarray(x, dtype=np.float64)) - self.mean) / self.std
        return z @ self.weights + self.bias


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def logreg_objective(weights, bias, z, y_onehot, l2) -> float:
    """Mean cross-entropy plus ``l2/2 * ||W||^2`` (bias unregularized)."""
    logits = z @ weights + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return float(-(y_onehot * logp).sum() / z.shape[0] + 0.5 * l2 * np.sum(weights * weights))


def standardize(x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    return (x - mean) / std, mean, std


def logreg_train(embeddings, labels: Sequence[str], l2: float = 1e-3, epochs: int = 500, lr: float = 0.5,
                 seed: int = 0) -> LogRegModel:
    """Multinomial logistic regression by full-batch gradient descent on standardized features.

    Weights start at zero, so the fit is deterministic; ``seed`` is accepted
    for interface symmetry with the other trainers and does not alter it.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != len(labels):
        raise ValidationError(f"{len(labels)} labels for embedding matrix of shape {x.shape}")
    classes = tuple(sorted(set(labels)))
    if len(classes) < 2:
        raise ValidationError("logistic regression needs at least two classes")
    index = {c: i for i, c in enumerate(classes)}
    y = np.zeros((x.shape[0], len(classes)))
    y[np.arange(x.shape[0]), [index[c] for c in labels]] = 1.0
    z, mean, std = standardize(x)
    w = np.zeros((x.shape[1], len(classes)))
    b = np.zeros(len(classes))
    n = x.shape[0]
    history = []
    for _ in range(epochs):
        p = _softmax(z @ w + b)
        err = (p - y) / n
        w -= lr * (z.T @ err + l2 * w)
        b -= lr * err.sum(axis=0)
        history.append(logreg_objective(w, b, z, y, l2))
    return LogRegModel(classes, w, b, mean, std, history)


def logreg_predict(model: LogRegModel, embedding) -> str | list[str]:
    x = np.asarray(embedding, dtype=np.float64)
    idx = np.argmax(model.logits(x), axis=1)
    preds = [model.classes[i] for i in idx]
    return preds[0] if x.ndim == 1 else preds


def accuracy(model: LogRegModel, embeddings, labels: Sequence[str]) -> float:
    preds = logreg_predict(model, np.atleast_2d(embeddings))
    return float(np.mean([p == t for p, t in zip(preds, labels)]))


# ---------------------------------------------------------------------------
# projection and export


def project_2d(embeddings) -> tuple[np.ndarray, bool]:
    """Classical MDS to two dimensions.

    Returns ``(coords, degenerate)``; ``degenerate`` is True when every point
    coincides, in which case the coordinates are all zero.  Each axis is
    flipped so its largest-magnitude coordinate is positive.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValidationError("projection needs at least two points")
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    j = np.eye(n) - np.full((n, n), 1.0 / n)
    b = -0.5 * j @ d2 @ j
    b = (b + b.T) / 2.0
    evals, evecs = np.linalg.eigh(b)
    order = np.argsort(evals)[::-1][:2]
    evals = np.clip(evals[order], 0.0, None)
    scale = max(float(np.abs(b).max()), 1.0)
    if evals[0] <= 1e-12 * scale:
        return np.zeros((n, 2)), True
    evals[evals <= 1e-12 * scale] = 0.0
    coords = evecs[:, order] * np.sqrt(evals)
    if coords.shape[1] < 2:
        coords = np.hstack([coords, np.zeros((n, 2 - coords.shape[1]))])
    for axis in range(2):
        col = coords[:, axis]
        if col[np.argmax(np.abs(col))] < 0:
            coords[:, axis] = -col
    return coords + 0.0, False


def write_embeddings_csv(gids: Sequence[int], embeddings: np.ndarray, path) -> None:
    embeddings = np.asarray(embeddings)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gid"] + [f"e{i}" for i in range(embeddings.shape[1])])
        for g, row in zip(gids, embeddings):
            w.writerow([g] + [f"{v:.9f}" for v in row])


def read_embeddings_csv(path) -> tuple[list[int], np.ndarray]:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "gid":
            raise ParseError("embeddings CSV must start with a 'gid' column", line=1)
        gids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
            try:
                gids.append(int(row[0]))
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), line=lineno) from None
    return gids, np.asarray(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)


def write_projection_csv(gids: Sequence[int], coords: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["gid", "x", "y"])
        for g, (x, y) in zip(gids, coords):
            w.writerow([g, f"{x:.9f}", f"{y:.9f}"])


def label_color(label: str | None) -> str:
    digest = hashlib.md5(str(label).encode("utf-8")).hexdigest()
    return "#" + digest[:6]


def scatter_svg(gids: Sequence[int], coords: np.ndarray, glabels: Sequence[str | None], size: int = 800) -> str:
    coords = np.asarray(coords, dtype=np.float64)
    margin = 40.0
    lo = coords.min(axis=0)
    span = np.maximum(coords.max(axis=0) - lo, 1e-12)
    px = margin + (coords - lo) / span * (size - 2 * margin)
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for g, (x, y), lab in zip(gids, px, glabels):
        # SVG y grows downwards
        lines.append(
            f'<circle cx="{x:.2f}" cy="{size - y:.2f}" r="5" fill="{label_color(lab)}">'
            f"<title>{g} {lab or ''}</title></circle>"
        )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"
