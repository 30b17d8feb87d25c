"""GIN node encoder, multi-scale node attention pooling and the embedding head.

Graphs are processed in batches: node features of all graphs are stacked,
the adjacency is block diagonal, and a node-to-graph membership matrix turns
per-graph reductions into matrix products.  A single graph is a batch of one.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ParseError, ValidationError
from .graph import LabeledGraph, LabelVocab, encode_features
from .rng import derive_rng

POOLINGS = ("msna", "na_last", "avg", "supersource")
CHECKPOINT_FORMAT = "graphprox-params"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_dim: int
    gin_dims: tuple[int, ...] = (256, 128, 64)
    epsilon_mode: str = "fixed"
    epsilon: float = 0.0
    pooling: str = "msna"
    embed_dim: int = 256
    head_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "gin_dims", tuple(int(d) for d in self.gin_dims))
        if self.head_dims is None:
            object.__setattr__(self, "head_dims", (self.embed_dim, self.embed_dim))
        else:
            object.__setattr__(self, "head_dims", tuple(int(d) for d in self.head_dims))
        if self.in_dim < 1:
            raise ConfigError("in_dim must be positive")
        if not self.gin_dims or any(d < 1 for d in self.gin_dims):
            raise ConfigError("gin_dims needs at least one positive layer width")
        if not self.head_dims or any(d < 1 for d in self.head_dims):
            raise ConfigError("head_dims needs at least one positive layer width")
        if self.head_dims[-1] != self.embed_dim:
            raise ConfigError(f"last head width {self.head_dims[-1]} must equal embed_dim {self.embed_dim}")
        if self.pooling not in POOLINGS:
            raise ConfigError(f"unknown pooling {self.pooling!r}; expected one of {', '.join(POOLINGS)}")
        if self.epsilon_mode not in ("fixed", "learned"):
            raise ConfigError(f"epsilon_mode must be 'fixed' or 'learned', got {self.epsilon_mode!r}")

    @property
    def node_in_dim(self) -> int:
        """Width of node features fed to the first GIN layer."""
        return self.in_dim + 1 if self.pooling == "supersource" else self.in_dim

    @property
    def pooled_dim(self) -> int:
        if self.pooling == "msna":
            return sum(self.gin_dims)
        return self.gin_dims[-1]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gin_dims"] = list(self.gin_dims)
        d["head_dims"] = list(self.head_dims)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> ModelConfig:
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config fields: {sorted(extra)}")
        d = dict(d)
        for key in ("gin_dims", "head_dims"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class ModelParams:
    """Named weight arrays plus the config that fixes their shapes.

    A fine-tuned model also carries a classification head (``cls*`` tensors)
    and the ordered class names it predicts.
    """

    config: ModelConfig
    tensors: dict[str, np.ndarray]
    classes: tuple[str, ...] | None = None
    frozen: frozenset[str] = field(default_factory=frozenset)

    def trainable_names(self) -> list[str]:
        return [k for k in self.tensors if k not in self.frozen]

    def leaves(self) -> dict[str, Tensor]:
        return {k: Tensor(v, requires_grad=k not in self.frozen, name=k) for k, v in self.tensors.items()}

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.classes, self.frozen)

    def epsilon(self, k: int) -> float:
        return float(self.tensors[f"gin{k}.eps"][0, 0])


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    rng = derive_rng(seed, "init")
    t: dict[str, np.ndarray] = {}
    frozen = set()
    d_in = cfg.node_in_dim
    for k, d_out in enumerate(cfg.gin_dims):
        # two-layer MLP, hidden width = output width
        t[f"gin{k}.w1"] = glorot_uniform(rng, d_in, d_out)
        t[f"gin{k}.b1"] = np.zeros((1, d_out))
        t[f"gin{k}.w2"] = glorot_uniform(rng, d_out, d_out)
        t[f"gin{k}.b2"] = np.zeros((1, d_out))
        t[f"gin{k}.eps"] = np.full((1, 1), float(cfg.epsilon))
        if cfg.epsilon_mode == "fixed":
            frozen.add(f"gin{k}.eps")
        d_in = d_out
    if cfg.pooling == "msna":
        for k, d in enumerate(cfg.gin_dims):
            t[f"att{k}.theta"] = glorot_uniform(rng, d, d)
    elif cfg.pooling == "na_last":
        last = len(cfg.gin_dims) - 1
        t[f"att{last}.theta"] = glorot_uniform(rng, cfg.gin_dims[-1], cfg.gin_dims[-1])
    d_in = cfg.pooled_dim
    for i, d_out in enumerate(cfg.head_dims):
        t[f"head{i}.w"] = glorot_uniform(rng, d_in, d_out)
        t[f"head{i}.b"] = np.zeros((1, d_out))
        d_in = d_out
    return ModelParams(cfg, t, frozen=frozenset(frozen))


def add_class_head(params: ModelParams, classes: Sequence[str], hidden: Sequence[int] = (64,), seed: int = 0) -> ModelParams:
    """Return a copy of ``params`` with a fresh classification head on top of the embedding."""
    rng = derive_rng(seed, "class-head")
    out = params.copy()
    for k in [k for k in out.tensors if k.startswith("cls")]:
        del out.tensors[k]
    d_in = params.config.embed_dim
    dims = list(hidden) + [len(classes)]
    for i, d_out in enumerate(dims):
        out.tensors[f"cls{i}.w"] = glorot_uniform(rng, d_in, d_out)
        out.tensors[f"cls{i}.b"] = np.zeros((1, d_out))
        d_in = d_out
    out.classes = tuple(classes)
    return out


# ---------------------------------------------------------------------------
# batching


@dataclass
class GraphBatch:
    gids: list[int]
    x: np.ndarray
    adj: np.ndarray
    member: np.ndarray  # (nodes, graphs) 0/1
    mean_op: np.ndarray  # (graphs, nodes) averaging operator
    readout: np.ndarray | None = None  # (graphs, nodes) picks each supersource row

    @property
    def size(self) -> int:
        return len(self.gids)


def supersource_augment(g: LabeledGraph, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Features and adjacency with an extra node adjacent to every node.

    The extra node gets its own one-hot column so it is distinguishable from
    every real label.  ``g`` is left untouched.
    """
    n, f = x.shape
    xa = np.zeros((n + 1, f + 1))
    xa[:n, :f] = x
    xa[n, f] = 1.0
    aa = np.zeros((n + 1, n + 1))
    aa[:n, :n] = g.adjacency()
    aa[n, :n] = aa[:n, n] = 1.0
    return xa, aa


def build_batch(graphs: Sequence[LabeledGraph], vocab: LabelVocab | None, pooling: str = "msna",
                features: Sequence[np.ndarray] | None = None) -> GraphBatch:
    if not graphs:
        raise ValidationError("cannot build an empty batch")
    if features is None:
        features = [encode_features(g, vocab) for g in graphs]
    xs, adjs = [], []
    for g, x in zip(graphs, features):
        if x.shape[0] != g.n:
            raise ValidationError(f"graph {g.gid}: feature rows {x.shape[0]} != node count {g.n}")
        if pooling == "supersource":
            x, a = supersource_augment(g, x)
        else:
            a = g.adjacency()
        xs.append(x)
        adjs.append(a)
    sizes = [x.shape[0] for x in xs]
    total = sum(sizes)
    adj = np.zeros((total, total))
    member = np.zeros((total, len(graphs)))
    readout = np.zeros((len(graphs), total)) if pooling == "supersource" else None
    start = 0
    for i, (a, s) in enumerate(zip(adjs, sizes)):
        adj[start:start + s, start:start + s] = a
        member[start:start + s, i] = 1.0
        if readout is not None:
            readout[i, start + s - 1] = 1.0
        start += s
    mean_op = member.T / np.asarray(sizes, dtype=np.float64)[:, None]
    return GraphBatch([g.gid for g in graphs], np.vstack(xs), adj, member, mean_op, readout)


# ---------------------------------------------------------------------------
# forward pass


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    ones = np.ones((x.shape[0], 1))
    return ad.add(ad.matmul(x, w), ad.matmul(ones, b))


def gin_layer_forward(u_prev, adj, layer: Mapping[str, Tensor] | None = None, eps=0.0,
                      mlp: Callable[[Tensor], Tensor] | None = None) -> Tensor:
    """``MLP((1 + eps) * u_i + sum of neighbour rows)`` for every node.

    ``eps`` is a float or a 1x1 tensor.  ``layer`` holds ``w1, b1, w2, b2``;
    ``mlp`` replaces the learned MLP (tests use the identity).
    """
    u = ad.as_tensor(u_prev)
    adj = np.asarray(adj, dtype=np.float64)
    if adj.shape != (u.shape[0], u.shape[0]):
        raise ValidationError(f"adjacency {adj.shape} does not match {u.shape[0]} node rows")
    if isinstance(eps, Tensor):
        self_term = ad.add(u, ad.scale(u, eps))
    elif eps == 0.0:
        self_term = u
    else:
        self_term = ad.scale(u, 1.0 + eps)
    z = ad.add(self_term, ad.matmul(adj, u))
    if mlp is not None:
        return mlp(z)
    if layer["w1"].shape[0] != u.shape[1]:
        raise ValidationError(f"GIN layer expects {layer['w1'].shape[0]} input columns, got {u.shape[1]}")
    hidden = ad.relu(linear(z, layer["w1"], layer["b1"]))
    return linear(hidden, layer["w2"], layer["b2"])


def attention_pool(u, theta, member: np.ndarray | None = None, mean_op: np.ndarray | None = None) -> Tensor:
    """Sigmoid-gated node sum; the gate of node n is ``sigmoid(u_n . relu(theta @ mean(U)))``.

    Without ``member``/``mean_op`` all rows form one graph and the result is 1 x D.
    """
    u = ad.as_tensor(u)
    theta = ad.as_tensor(theta)
    n, d = u.shape
    if theta.shape != (d, d):
        raise ValidationError(f"attention matrix {theta.shape} does not match node width {d}")
    if n < 1:
        raise ValidationError("attention pooling needs at least one node")
    if member is None:
        member = np.ones((n, 1))
        mean_op = np.full((1, n), 1.0 / n)
    mean = ad.matmul(mean_op, u)
    context = ad.relu(ad.matmul(mean, ad.transpose(theta)))
    gate = ad.sigmoid(ad.row_sum(ad.mul(u, ad.matmul(member, context))))
    return ad.matmul(member.T, ad.col_broadcast(gate, u))


def _layer(leaves: Mapping[str, Tensor], k: int) -> dict[str, Tensor]:
    return {key: leaves[f"gin{k}.{key}"] for key in ("w1", "b1", "w2", "b2")}


def _eps(leaves: Mapping[str, Tensor], cfg: ModelConfig, k: int):
    t = leaves[f"gin{k}.eps"]
    if cfg.epsilon_mode == "learned":
        return t
    return float(t.data[0, 0])


def node_embeddings(batch: GraphBatch, leaves: Mapping[str, Tensor], cfg: ModelConfig) -> list[Tensor]:
    """Per-layer node embeddings (after the activation), one tensor per GIN layer."""
    if batch.x.shape[1] != cfg.node_in_dim:
        raise ValidationError(f"node features have {batch.x.shape[1]} columns, model expects {cfg.node_in_dim}")
    u = Tensor(batch.x)
    scales = []
    for k in range(len(cfg.gin_dims)):
        u = ad.relu(gin_layer_forward(u, batch.adj, _layer(leaves, k), _eps(leaves, cfg, k)))
        scales.append(u)
    return scales


def pool(batch: GraphBatch, scales: Sequence[Tensor], leaves: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    if cfg.pooling == "msna":
        parts = [
            attention_pool(u, leaves[f"att{k}.theta"], batch.member, batch.mean_op) for k, u in enumerate(scales)
        ]
        return ad.concat_cols(*parts)
    last = len(scales) - 1
    if cfg.pooling == "na_last":
        return attention_pool(scales[last], leaves[f"att{last}.theta"], batch.member, batch.mean_op)
    if cfg.pooling == "avg":
        return ad.matmul(batch.mean_op, scales[last])
    if cfg.pooling == "supersource":
        return ad.matmul(batch.readout, scales[last])
    raise ConfigError(f"unknown pooling {cfg.pooling!r}")


def head_forward(pooled: Tensor, leaves: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    h = pooled
    last = len(cfg.head_dims) - 1
    for i in range(len(cfg.head_dims)):
        h = linear(h, leaves[f"head{i}.w"], leaves[f"head{i}.b"])
        if i < last:
            h = ad.relu(h)
    return h


def embed_forward(batch: GraphBatch, leaves: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    """Graph embeddings for every graph in ``batch``: (graphs, embed_dim)."""
    return head_forward(pool(batch, node_embeddings(batch, leaves, cfg), leaves, cfg), leaves, cfg)


def class_logits(h: Tensor, leaves: Mapping[str, Tensor]) -> Tensor:
    i = 0
    while f"cls{i + 1}.w" in leaves:
        h = ad.relu(linear(h, leaves[f"cls{i}.w"], leaves[f"cls{i}.b"]))
        i += 1
    return linear(h, leaves[f"cls{i}.w"], leaves[f"cls{i}.b"])


@dataclass(frozen=True)
class GraphEmbedding:
    gid: int
    h: np.ndarray


def graph_embed_forward(g: LabeledGraph, features: np.ndarray, params: ModelParams,
                        cfg: ModelConfig | None = None) -> GraphEmbedding:
    cfg = cfg or params.config
    batch = build_batch([g], None, cfg.pooling, features=[features])
    leaves = {k: Tensor(v) for k, v in params.tensors.items()}
    h = embed_forward(batch, leaves, cfg).data[0].copy()
    return GraphEmbedding(g.gid, h)


def embed_graphs(params: ModelParams, graphs: Sequence[LabeledGraph], vocab: LabelVocab | None,
                 chunk: int = 128) -> np.ndarray:
    """Embeddings (no gradients) for ``graphs`` in order, computed in chunks."""
    cfg = params.config
    leaves = {k: Tensor(v) for k, v in params.tensors.items()}
    out = []
    for start in range(0, len(graphs), chunk):
        batch = build_batch(graphs[start:start + chunk], vocab, cfg.pooling)
        out.append(embed_forward(batch, leaves, cfg).data)
    if not out:
        return np.zeros((0, cfg.embed_dim))
    return np.vstack(out)


def predict_distance(h_i, h_j) -> float:
    a, b = np.asarray(h_i, dtype=np.float64).ravel(), np.asarray(h_j, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    diff = a - b
    return float(diff @ diff)


def predict_similarity(h_i, h_j) -> float:
    a, b = np.asarray(h_i, dtype=np.float64).ravel(), np.asarray(h_j, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValidationError(f"embedding dims differ: {a.shape[0]} vs {b.shape[0]}")
    return float(a @ b)


# ---------------------------------------------------------------------------
# checkpoints


def save_params(params: ModelParams, path, extra: Mapping | None = None) -> None:
    blob = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": params.config.to_dict(),
        "classes": None if params.classes is None else list(params.classes),
        "frozen": sorted(params.frozen),
        "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in params.tensors.items()},
        "extra": dict(extra or {}),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_params(path) -> tuple[ModelParams, dict]:
    with open(path, encoding="utf-8") as fh:
        try:
            blob = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"checkpoint is not valid JSON: {exc.msg}", line=exc.lineno) from None
    if blob.get("format") != CHECKPOINT_FORMAT or blob.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: not a version {CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    cfg = ModelConfig.from_dict(blob["config"])
    tensors = {
        k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in blob["tensors"].items()
    }
    classes = tuple(blob["classes"]) if blob.get("classes") is not None else None
    return ModelParams(cfg, tensors, classes, frozenset(blob.get("frozen", []))), blob.get("extra", {})
