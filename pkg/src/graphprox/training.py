"""Pair sampling, proximity losses, Adam, the training loop and supervised fine-tuning."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, NumericError, ValidationError
from .ged.pairs import PairTable
from .graph import Dataset, LabeledGraph, LabelVocab, build_label_vocab, encode_features
from .model import (
    GraphBatch,
    ModelConfig,
    ModelParams,
    add_class_head,
    build_batch,
    class_logits,
    embed_forward,
    init_params,
)
from .rng import derive_rng

log = logging.getLogger(__name__)

LOSS_MODES = ("distance", "similarity")


@dataclass(frozen=True)
class FineTuneConfig:
    start_iter: int
    class_head_dims: tuple[int, ...] = (64,)
    lr: float | None = None

    @classmethod
    def from_dict(cls, d: Mapping) -> FineTuneConfig:
        d = dict(d)
        if "class_head_dims" in d:
            d["class_head_dims"] = tuple(d["class_head_dims"])
        return cls(**d)


@dataclass(frozen=True)
class TrainConfig:
    batch_pairs: int = 256
    iterations: int = 2000
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    loss_mode: str = "distance"
    target: str = "nged"
    seed: int = 0
    checkpoint_every: int = 100
    max_val_pairs: int = 1000
    fine_tune: FineTuneConfig | None = None

    def __post_init__(self):
        if self.batch_pairs < 1:
            raise ConfigError("batch_pairs must be at least 1")
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"loss_mode must be one of {LOSS_MODES}, got {self.loss_mode!r}")
        if self.target not in ("nged", "ged"):
            raise ConfigError(f"target must be 'nged' or 'ged', got {self.target!r}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> TrainConfig:
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown train config fields: {sorted(extra)}")
        d = dict(d)
        if d.get("fine_tune") is not None and not isinstance(d["fine_tune"], FineTuneConfig):
            d["fine_tune"] = FineTuneConfig.from_dict(d["fine_tune"])
        return cls(**d)


@dataclass
class HistoryEntry:
    iter: int
    train_loss: float
    val_loss: float | None = None
    phase: str = "unsupervised"


@dataclass
class TrainHistory:
    entries: list[HistoryEntry] = field(default_factory=list)
    best_iter: int | None = None

    def record(self, entry: HistoryEntry) -> None:
        if self.entries and entry.iter <= self.entries[-1].iter:
            raise ValidationError("history iterations must be strictly increasing")
        self.entries.append(entry)

    def losses(self, phase: str | None = None) -> list[float]:
        return [e.train_loss for e in self.entries if phase is None or e.phase == phase]

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "train_loss", "val_loss"])
            for e in self.entries:
                w.writerow([e.iter, repr(e.train_loss), "" if e.val_loss is None else repr(e.val_loss)])


# ---------------------------------------------------------------------------
# data plumbing


def corpus_vocab(train: Sequence[LabeledGraph]) -> LabelVocab | None:
    """Vocabulary from the training graphs; None when the corpus is unlabeled (all labels empty)."""
    if all(lab == "" for g in train for lab in g.labels):
        return None
    return build_label_vocab(train)


def feature_width(vocab: LabelVocab | None) -> int:
    return 1 if vocab is None else vocab.width


class EncodedCorpus:
    """Graphs with their node features, batching any subset by gid."""

    def __init__(self, graphs: Sequence[LabeledGraph], vocab: LabelVocab | None, pooling: str):
        self.graphs = {g.gid: g for g in graphs}
        self.vocab = vocab
        self.pooling = pooling
        self.features = {gid: encode_features(g, vocab) for gid, g in self.graphs.items()}
        self._cache: dict[tuple[int, ...], GraphBatch] = {}

    def batch(self, gids: Sequence[int]) -> GraphBatch:
        key = tuple(gids)
        hit = self._cache.get(key)
        if hit is None:
            try:
                graphs = [self.graphs[g] for g in key]
            except KeyError as exc:
                raise ValidationError(f"unknown gid {exc.args[0]}") from None
            hit = build_batch(graphs, self.vocab, self.pooling, [self.features[g] for g in key])
            if len(self._cache) >= 8:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = hit
        return hit


@dataclass
class BatchSample:
    gid_i: np.ndarray
    gid_j: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)


def pair_labels(pairs: PairTable, target: str = "nged", loss_mode: str = "distance") -> np.ndarray:
    if loss_mode == "similarity":
        if not pairs.has_sim():
            raise ValidationError("similarity loss needs a sim value on every pair")
        return np.array([r.sim for r in pairs], dtype=np.float64)
    if target == "ged":
        return np.array([r.ged for r in pairs], dtype=np.float64)
    return np.array([r.nged for r in pairs], dtype=np.float64)


def sample_batch(pairs: PairTable, batch_pairs: int, rng: np.random.Generator, target: str = "nged",
                 loss_mode: str = "distance") -> BatchSample:
    """Uniform draw with replacement of ``batch_pairs`` records."""
    if len(pairs) == 0:
        raise ValidationError("cannot sample from an empty pair table")
    labels = pair_labels(pairs, target, loss_mode)
    idx = rng.integers(0, len(pairs), size=batch_pairs)
    gi = np.array([pairs.records[k].gid_i for k in idx], dtype=np.int64)
    gj = np.array([pairs.records[k].gid_j for k in idx], dtype=np.int64)
    return BatchSample(gi, gj, labels[idx])


# ---------------------------------------------------------------------------
# losses


def distance_loss(h_i, h_j, d) -> Tensor:
    """Mean over rows of ``(||h_i - h_j||^2 - d)^2``."""
    h_i, h_j = ad.as_tensor(h_i), ad.as_tensor(h_j)
    d = np.asarray(d, dtype=np.float64).reshape(-1, 1)
    if d.shape[0] != h_i.shape[0]:
        raise ValidationError(f"{d.shape[0]} labels for {h_i.shape[0]} pairs")
    return ad.mean_all(ad.square(ad.sub(ad.squared_l2_rowdiff(h_i, h_j), d)))


def similarity_loss(h_i, h_j, s) -> Tensor:
    """Mean over rows of ``(h_i . h_j - s)^2``."""
    h_i, h_j = ad.as_tensor(h_i), ad.as_tensor(h_j)
    s = np.asarray(s, dtype=np.float64).reshape(-1, 1)
    if s.shape[0] != h_i.shape[0]:
        raise ValidationError(f"{s.shape[0]} labels for {h_i.shape[0]} pairs")
    return ad.mean_all(ad.square(ad.sub(ad.row_sum(ad.mul(h_i, h_j)), s)))


def _selectors(sample: BatchSample, order: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    pos = {g: i for i, g in enumerate(order)}
    b, n = len(sample), len(order)
    si = np.zeros((b, n))
    sj = np.zeros((b, n))
    si[np.arange(b), [pos[int(g)] for g in sample.gid_i]] = 1.0
    sj[np.arange(b), [pos[int(g)] for g in sample.gid_j]] = 1.0
    return si, sj


def batch_loss(sample: BatchSample, leaves: Mapping[str, Tensor], cfg: ModelConfig, corpus: EncodedCorpus,
               loss_mode: str = "distance") -> Tensor:
    if np.isnan(sample.labels).any():
        raise ValidationError("batch has missing labels")
    order = sorted(set(sample.gid_i.tolist()) | set(sample.gid_j.tolist()))
    h = embed_forward(corpus.batch(order), leaves, cfg)
    si, sj = _selectors(sample, order)
    h_i, h_j = ad.matmul(si, h), ad.matmul(sj, h)
    if loss_mode == "distance":
        return distance_loss(h_i, h_j, sample.labels)
    if loss_mode == "similarity":
        return similarity_loss(h_i, h_j, sample.labels)
    raise ConfigError(f"unknown loss mode {loss_mode!r}")


def loss_distance(sample: BatchSample, params: ModelParams, corpus: EncodedCorpus) -> Tensor:
    return batch_loss(sample, params.leaves(), params.config, corpus, "distance")


def loss_similarity(sample: BatchSample, params: ModelParams, corpus: EncodedCorpus) -> Tensor:
    return batch_loss(sample, params.leaves(), params.config, corpus, "similarity")


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place bias-corrected Adam update of every parameter named in ``grads``."""
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValidationError(f"gradient shape {g.shape} != parameter {name} shape {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    state.t += 1
    t = state.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


def _named_grads(params: ModelParams, leaves: Mapping[str, Tensor], loss: Tensor) -> dict[str, np.ndarray]:
    gmap = ad.backward(loss)
    return {
        name: gmap.get(leaves[name], np.zeros_like(params.tensors[name])) for name in params.trainable_names()
    }


# ---------------------------------------------------------------------------
# loops


def _check_pairs(pairs: PairTable, known: set[int]) -> None:
    for r in pairs:
        for g in (r.gid_i, r.gid_j):
            if g not in known:
                raise ValidationError(f"pair ({r.gid_i}, {r.gid_j}) references unknown gid {g}")


def _fixed_val_pairs(pairs: PairTable, limit: int, seed: int) -> PairTable:
    if len(pairs) <= limit:
        return pairs
    idx = derive_rng(seed, "val-pairs").choice(len(pairs), size=limit, replace=False)
    return PairTable(pairs.records[i] for i in sorted(idx))


def _full_loss(pairs: PairTable, params: ModelParams, corpus: EncodedCorpus, cfg: TrainConfig) -> float:
    labels = pair_labels(pairs, cfg.target, cfg.loss_mode)
    sample = BatchSample(
        np.array([r.gid_i for r in pairs]), np.array([r.gid_j for r in pairs]), labels
    )
    leaves = {k: Tensor(v) for k, v in params.tensors.items()}
    return batch_loss(sample, leaves, params.config, corpus, cfg.loss_mode).item()


def train(splits: tuple[Dataset, Dataset, Dataset], pairs: PairTable, cfg: TrainConfig, model_cfg: ModelConfig,
          val_pairs: PairTable | None = None) -> tuple[ModelParams, TrainHistory]:
    """Unsupervised proximity training, optionally switching to fine-tuning at ``cfg.fine_tune.start_iter``.

    Training pairs are the records of ``pairs`` with both graphs in the
    training split; validation pairs default to those with both graphs in the
    validation split.  Returns the parameters with the lowest validation loss
    (the final ones when no validation pairs exist).
    """
    train_ds, val_ds, test_ds = splits
    known = set(train_ds.gids) | set(val_ds.gids) | set(test_ds.gids)
    _check_pairs(pairs, known)
    if val_pairs is not None:
        _check_pairs(val_pairs, known)
    train_pairs = pairs.restrict(train_ds.gids)
    if val_pairs is None:
        val_pairs = pairs.restrict(val_ds.gids)
    val_pairs = _fixed_val_pairs(val_pairs, cfg.max_val_pairs, cfg.seed)

    vocab = corpus_vocab(train_ds)
    if model_cfg.in_dim != feature_width(vocab):
        raise ConfigError(f"model in_dim {model_cfg.in_dim} != feature width {feature_width(vocab)}")
    params = init_params(model_cfg, cfg.seed)
    history = TrainHistory()
    if cfg.iterations == 0:
        return params, history
    if len(train_pairs) == 0:
        raise ValidationError("no training pairs with both graphs in the training split")

    corpus = EncodedCorpus(list(train_ds) + list(val_ds), vocab, model_cfg.pooling)
    rng = derive_rng(cfg.seed, "sample")
    state = AdamState()
    unsup_iters = cfg.iterations
    if cfg.fine_tune is not None:
        unsup_iters = min(cfg.iterations, max(0, cfg.fine_tune.start_iter))
    best, best_val = None, np.inf
    for it in range(1, unsup_iters + 1):
        sample = sample_batch(train_pairs, cfg.batch_pairs, rng, cfg.target, cfg.loss_mode)
        leaves = params.leaves()
        loss = batch_loss(sample, leaves, model_cfg, corpus, cfg.loss_mode)
        grads = _named_grads(params, leaves, loss)
        adam_step(params.tensors, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps_hat)
        val = None
        if len(val_pairs) and (it % cfg.checkpoint_every == 0 or it == unsup_iters):
            val = _full_loss(val_pairs, params, corpus, cfg)
            if val < best_val:
                best, best_val = params.copy(), val
                history.best_iter = it
        history.record(HistoryEntry(it, loss.item(), val))
        if val is not None:
            log.debug("iter %d train %.6f val %.6f", it, loss.item(), val)
    if best is not None:
        params = best

    if cfg.fine_tune is not None and cfg.iterations > unsup_iters:
        params = fine_tune(
            params, train_ds, cfg, val_ds=val_ds, iterations=cfg.iterations - unsup_iters,
            history=history, first_iter=unsup_iters + 1,
        )
    return params, history


def class_targets(graphs: Sequence[LabeledGraph], classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    y = np.zeros((len(graphs), len(classes)))
    for r, g in enumerate(graphs):
        if g.glabel is None:
            raise ValidationError(f"graph {g.gid} has no class label")
        if g.glabel not in index:
            raise ValidationError(f"graph {g.gid} has unseen class {g.glabel!r}")
        y[r, index[g.glabel]] = 1.0
    return y


def classification_loss(params: ModelParams, leaves: Mapping[str, Tensor], corpus: EncodedCorpus,
                        gids: Sequence[int]) -> Tensor:
    order = sorted(set(int(g) for g in gids))
    h = embed_forward(corpus.batch(order), leaves, params.config)
    pos = {g: i for i, g in enumerate(order)}
    sel = np.zeros((len(gids), len(order)))
    sel[np.arange(len(gids)), [pos[int(g)] for g in gids]] = 1.0
    logits = class_logits(ad.matmul(sel, h), leaves)
    y = class_targets([corpus.graphs[int(g)] for g in gids], params.classes)
    return ad.softmax_cross_entropy(logits, y)


def fine_tune(params: ModelParams, train_ds: Dataset, cfg: TrainConfig, val_ds: Dataset | None = None,
              iterations: int | None = None, history: TrainHistory | None = None,
              first_iter: int = 1) -> ModelParams:
    """Supervised cross-entropy training through a fresh class head; embedding weights keep learning."""
    graphs = list(train_ds)
    missing = [g.gid for g in graphs if g.glabel is None]
    if missing:
        raise ValidationError(f"graphs without class label: {missing[:5]}")
    classes = sorted({g.glabel for g in graphs})
    ft = cfg.fine_tune or FineTuneConfig(start_iter=0)
    lr = ft.lr if ft.lr is not None else cfg.lr
    iterations = cfg.iterations if iterations is None else iterations
    params = add_class_head(params, classes, ft.class_head_dims, cfg.seed)
    vocab = corpus_vocab(graphs)
    val_graphs = [g for g in (val_ds or []) if g.glabel in set(classes)]
    corpus = EncodedCorpus(graphs + val_graphs, vocab, params.config.pooling)
    rng = derive_rng(cfg.seed, "fine-tune")
    gids = np.array([g.gid for g in graphs])
    state = AdamState()
    best, best_val = None, np.inf
    for k in range(iterations):
        batch = gids[rng.integers(0, len(gids), size=2 * cfg.batch_pairs)]
        leaves = params.leaves()
        loss = classification_loss(params, leaves, corpus, batch)
        grads = _named_grads(params, leaves, loss)
        adam_step(params.tensors, grads, state, lr, cfg.beta1, cfg.beta2, cfg.eps_hat)
        it = first_iter + k
        val = None
        if val_graphs and ((k + 1) % cfg.checkpoint_every == 0 or k + 1 == iterations):
            frozen = {n: Tensor(v) for n, v in params.tensors.items()}
            val = classification_loss(params, frozen, corpus, [g.gid for g in val_graphs]).item()
            if val < best_val:
                best, best_val = params.copy(), val
                if history is not None:
                    history.best_iter = it
        if history is not None:
            history.record(HistoryEntry(it, loss.item(), val, phase="fine_tune"))
    return best if best is not None else params
