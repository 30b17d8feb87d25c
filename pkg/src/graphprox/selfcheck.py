"""Built-in invariant checks run by ``graphprox check``.

Each check builds its own small random inputs from a fixed seed and returns a
``CheckResult``; nothing here reads files.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .ged import bipartite, ged_beam, ged_exact_astar, hed_lower, lsap_solve
from .graph import LabeledGraph, LabelVocab, permute_nodes
from .model import ModelConfig, build_batch, embed_forward, embed_graphs, init_params
from .rng import derive_rng
from .training import distance_loss


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class SelfCheckReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failed(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def lines(self) -> list[str]:
        return [f"{'PASS' if r.passed else 'FAIL'} {r.name}: {r.detail}" for r in self.results]


def random_graph(rng: np.random.Generator, n_min: int, n_max: int, alphabet=("A", "B", "C"),
                 p: float = 0.4, gid: int = 0) -> LabeledGraph:
    n = int(rng.integers(n_min, n_max + 1))
    labels = tuple(str(alphabet[i]) for i in rng.integers(0, len(alphabet), size=n))
    edges = tuple((u, v) for u, v in itertools.combinations(range(n), 2) if rng.random() < p)
    return LabeledGraph(gid, labels, edges)


def check_bound_sandwich(pairs: int = 40, n_max: int = 6, seed: int = 0) -> CheckResult:
    rng = derive_rng(seed, "check-bounds")
    bad = []
    for k in range(pairs):
        g1 = random_graph(rng, 1, n_max, gid=2 * k)
        g2 = random_graph(rng, 1, n_max, gid=2 * k + 1)
        exact = ged_exact_astar(g1, g2).value
        lo = hed_lower(g1, g2).value
        uppers = {
            "bipartite": bipartite.ged_bipartite(g1, g2).value,
            "beam1": ged_beam(g1, g2, 1).value,
            "beam5": ged_beam(g1, g2, 5).value,
        }
        if lo > exact:
            bad.append(f"pair {k}: hed {lo} > exact {exact}")
        bad += [f"pair {k}: {name} {v} < exact {exact}" for name, v in uppers.items() if v < exact]
    detail = f"{pairs} pairs, {len(bad)} violations" + (f" ({bad[0]})" if bad else "")
    return CheckResult("bound-sandwich", not bad, detail)


def check_lsap(matrices: int = 60, n_max: int = 6, seed: int = 0) -> CheckResult:
    rng = derive_rng(seed, "check-lsap")
    bad = 0
    for _ in range(matrices):
        n = int(rng.integers(1, n_max + 1))
        cost = rng.integers(0, 10, size=(n, n)).astype(float)
        _, total = lsap_solve(cost)
        best = min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))
        bad += total != best
    return CheckResult("lsap-brute-force", bad == 0, f"{matrices} matrices, {bad} mismatches")


def _tiny_problem(seed: int):
    rng = derive_rng(seed, "check-grad")
    vocab = LabelVocab(("A", "B"))
    graphs = [random_graph(rng, 3, 5, alphabet=("A", "B"), p=0.6, gid=i) for i in range(4)]
    cfg = ModelConfig(in_dim=vocab.width, gin_dims=(8, 4), pooling="msna", embed_dim=8)
    params = init_params(cfg, seed)
    batch = build_batch(graphs, vocab, cfg.pooling)
    d = np.array([[0.5], [1.25]])
    return cfg, params, batch, d


def kink_free_point(f, params: dict[str, np.ndarray], rng: np.random.Generator, margin: float = 5e-4,
                    nudge: float = 1e-3, tries: int = 200) -> dict[str, np.ndarray]:
    """Nudge ``params`` until every relu input of ``f`` sits at least ``margin`` from zero.

    Zero-initialised biases put dead rows exactly on the kink, so every bias
    first gets a random offset of scale 0.1.  After that, exact zeros are
    structural and are not counted as kinks.
    """
    point = {k: (v + rng.normal(0.0, 0.1, size=v.shape) if ".b" in k else v.copy()) for k, v in params.items()}
    for _ in range(tries):
        leaves = {k: ad.Tensor(v, requires_grad=True) for k, v in point.items()}
        if ad.relu_margin(f(leaves), skip_exact_zeros=True) >= margin:
            return point
        point = {k: v + rng.normal(0.0, nudge, size=v.shape) for k, v in point.items()}
    raise RuntimeError("could not find a point away from relu kinks")


def distance_loss_fn(cfg, batch, frozen, d):
    """Distance loss on pairs (0,1) and (2,3) of a 4-graph batch, as a function of the trainable leaves."""
    sel_i = np.zeros((2, 4))
    sel_j = np.zeros((2, 4))
    sel_i[[0, 1], [0, 2]] = 1.0
    sel_j[[0, 1], [1, 3]] = 1.0

    def loss_fn(leaves):
        full = {**{k: ad.Tensor(v) for k, v in frozen.items()}, **leaves}
        h = embed_forward(batch, full, cfg)
        return distance_loss(ad.matmul(sel_i, h), ad.matmul(sel_j, h), d)

    return loss_fn


def check_gradients(seed: int = 0, tolerance: float = 1e-4) -> CheckResult:
    """Finite differences on the full distance loss plus a direct sigmoid probe."""
    cfg, params, batch, d = _tiny_problem(seed)
    frozen = {k: v for k, v in params.tensors.items() if k in params.frozen}
    trainable = {k: v for k, v in params.tensors.items() if k not in params.frozen}
    loss_fn = distance_loss_fn(cfg, batch, frozen, d)
    point = kink_free_point(loss_fn, trainable, derive_rng(seed, "check-nudge"))
    model_report = ad.finite_diff_check(loss_fn, point, tolerance=tolerance)
    x = derive_rng(seed, "check-sigmoid").normal(size=(3, 4))
    op_report = ad.finite_diff_check(lambda t: ad.mean_all(ad.square(ad.sigmoid(t["x"]))), {"x": x},
                                     tolerance=tolerance)
    passed = model_report.passed and op_report.passed
    worst = max(model_report.max_error, op_report.max_error)
    return CheckResult("gradient-check", passed, f"max relative error {worst:.2e} (tol {tolerance:g})")


def check_permutation_invariance(graphs: int = 8, perms: int = 3, seed: int = 0, atol: float = 1e-9) -> CheckResult:
    rng = derive_rng(seed, "check-perm")
    vocab = LabelVocab(("A", "B", "C"))
    worst = 0.0
    for pooling in ("msna", "na_last", "avg", "supersource"):
        cfg = ModelConfig(in_dim=vocab.width, gin_dims=(8, 4), pooling=pooling, embed_dim=6)
        params = init_params(cfg, seed)
        for k in range(graphs):
            g = random_graph(rng, 2, 7, gid=k)
            base = embed_graphs(params, [g], vocab)[0]
            for _ in range(perms):
                h = embed_graphs(params, [permute_nodes(g, rng.permutation(g.n))], vocab)[0]
                worst = max(worst, float(np.max(np.abs(h - base))))
    return CheckResult("permutation-invariance", worst <= atol, f"max |dh| {worst:.1e} over 4 poolings")


CHECKS = {
    "bound-sandwich": check_bound_sandwich,
    "lsap-brute-force": check_lsap,
    "gradient-check": check_gradients,
    "permutation-invariance": check_permutation_invariance,
}


def self_check(names=None, seed: int = 0) -> SelfCheckReport:
    report = SelfCheckReport()
    for name in names or CHECKS:
        report.results.append(CHECKS[name](seed=seed))
    return report

