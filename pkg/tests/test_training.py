import numpy as np
import pytest

from graphprox import autodiff as ad
from graphprox.autodiff import Tensor
from graphprox.errors import ConfigError, NumericError, ValidationError
from graphprox.ged import PairTable, ground_truth_pairs
from graphprox.ged.pairs import PairRecord
from graphprox.graph import Dataset, FamilySpec, SplitSpec, split_dataset, synth_generate
from graphprox.model import ModelConfig, add_class_head, init_params
from graphprox.selfcheck import check_gradients, kink_free_point
from graphprox.training import (
    AdamState,
    EncodedCorpus,
    FineTuneConfig,
    HistoryEntry,
    TrainConfig,
    TrainHistory,
    adam_step,
    class_targets,
    classification_loss,
    corpus_vocab,
    distance_loss,
    feature_width,
    fine_tune,
    loss_distance,
    loss_similarity,
    sample_batch,
    similarity_loss,
    train,
)


@pytest.fixture(scope="module")
def corpus():
    specs = [FamilySpec.parse(s) for s in ("cycle:20:4..6:A,B", "star:20:4..6:A,B", "path:20:4..6:A,B")]
    ds = synth_generate(specs, 0)
    splits = split_dataset(ds, SplitSpec(seed=0))
    pairs = ground_truth_pairs(ds, algo="bipartite")
    return ds, splits, pairs


def desk_model(splits, pooling="msna"):
    return ModelConfig(in_dim=feature_width(corpus_vocab(splits[0])), gin_dims=(8, 4), embed_dim=8, pooling=pooling)


# -- sampling ----------------------------------------------------------------


def test_single_pair_repeats():
    table = PairTable([PairRecord(0, 1, 2, 0.5)])
    s = sample_batch(table, 4, np.random.default_rng(0))
    assert list(s.gid_i) == [0] * 4 and list(s.gid_j) == [1] * 4 and list(s.labels) == [0.5] * 4


def test_sampling_is_seeded():
    table = PairTable([PairRecord(i, i + 1, 1, 0.1 * i) for i in range(10)])
    a = sample_batch(table, 16, np.random.default_rng(3))
    b = sample_batch(table, 16, np.random.default_rng(3))
    assert np.array_equal(a.gid_i, b.gid_i) and np.array_equal(a.labels, b.labels)


def test_sampling_frequencies_binomial():
    table = PairTable([PairRecord(0, 1, 1, 0.5), PairRecord(0, 2, 2, 1.0)])
    s = sample_batch(table, 10_000, np.random.default_rng(1))
    count = int(np.sum(s.gid_j == 1))
    sigma = np.sqrt(10_000 * 0.25)
    assert abs(count - 5000) <= 5 * sigma


def test_sampling_errors():
    with pytest.raises(ValidationError):
        sample_batch(PairTable(), 2, np.random.default_rng(0))
    with pytest.raises(ValidationError):
        sample_batch(PairTable([PairRecord(0, 1, 1, 0.5)]), 2, np.random.default_rng(0), loss_mode="similarity")


# -- losses ------------------------------------------------------------------


def test_distance_loss_examples():
    assert distance_loss([[1.0, 0.0]], [[0.0, 0.0]], [1.0]).item() == 0.0
    assert distance_loss([[0.3, 0.4]], [[0.3, 0.4]], [0.5]).item() == 0.25


def test_similarity_loss_examples():
    assert similarity_loss([[1.0, 0.0]], [[0.0, 1.0]], [0.0]).item() == 0.0
    assert similarity_loss([[1.0, 0.0]], [[1.0, 0.0]], [0.0]).item() == 1.0


def test_losses_against_hand_sums():
    rng = np.random.default_rng(5)
    hi, hj, d = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.random(3)
    expect_d = sum((np.sum((hi[k] - hj[k]) ** 2) - d[k]) ** 2 for k in range(3)) / 3
    expect_s = sum((hi[k] @ hj[k] - d[k]) ** 2 for k in range(3)) / 3
    assert abs(distance_loss(hi, hj, d).item() - expect_d) <= 1e-12
    assert abs(similarity_loss(hi, hj, d).item() - expect_s) <= 1e-12
    assert distance_loss(hi, hj, d).item() == distance_loss(hj, hi, d).item()


def test_model_losses_and_symmetry(corpus):
    ds, splits, pairs = corpus
    cfg = desk_model(splits)
    params = init_params(cfg, 0)
    enc = EncodedCorpus(list(ds), corpus_vocab(splits[0]), cfg.pooling)
    s = sample_batch(pairs, 6, np.random.default_rng(0))
    flipped = type(s)(s.gid_j, s.gid_i, s.labels)
    a, b = loss_distance(s, params, enc).item(), loss_distance(flipped, params, enc).item()
    assert a >= 0 and abs(a - b) <= 1e-12 * max(1.0, a)
    sim_pairs = PairTable(PairRecord(r.gid_i, r.gid_j, r.ged, r.nged, sim=float(np.exp(-r.nged))) for r in pairs)
    s2 = sample_batch(sim_pairs, 6, np.random.default_rng(0), loss_mode="similarity")
    assert loss_similarity(s2, params, enc).item() >= 0


def test_end_to_end_distance_gradient():
    result = check_gradients(seed=0)
    assert result.passed, result.detail


# -- Adam --------------------------------------------------------------------


def test_adam_first_step():
    p = {"x": np.array([[0.0]])}
    adam_step(p, {"x": np.array([[1.0]])}, AdamState(), lr=0.001)
    assert p["x"][0, 0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-15)


def test_adam_zero_gradient_is_identity_and_moments_decay():
    p = {"x": np.array([[0.5, -2.0]])}
    st = AdamState()
    adam_step(p, {"x": np.array([[1.0, -1.0]])}, st, lr=0.01)
    snap, m1, v1 = p["x"].copy(), st.m["x"].copy(), st.v["x"].copy()
    # from a fresh state a zero gradient must not move anything
    q = {"y": np.array([[3.0]])}
    adam_step(q, {"y": np.zeros((1, 1))}, AdamState(), lr=0.1)
    assert q["y"][0, 0] == 3.0
    # with momentum in place, the parameters keep moving while the moments decay
    adam_step(p, {"x": np.zeros((1, 2))}, st, lr=0.01)
    np.testing.assert_allclose(st.m["x"], 0.9 * m1)
    np.testing.assert_allclose(st.v["x"], 0.999 * v1)
    assert st.t == 2 and not np.array_equal(p["x"], snap)


def test_adam_rejects_nonfinite_without_touching_params():
    p = {"a": np.ones((1, 2)), "b": np.ones((1, 1))}
    st = AdamState()
    with pytest.raises(NumericError):
        adam_step(p, {"a": np.ones((1, 2)), "b": np.array([[np.nan]])}, st, lr=0.1)
    assert np.array_equal(p["a"], np.ones((1, 2))) and st.t == 0


# -- training loop -----------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_pairs=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 0.1})
    cfg = TrainConfig.from_dict({"fine_tune": {"start_iter": 5, "class_head_dims": [16]}})
    assert cfg.fine_tune == FineTuneConfig(5, (16,))


def test_zero_iterations_returns_initial_params(corpus):
    _, splits, pairs = corpus
    cfg = desk_model(splits)
    params, history = train(splits, pairs, TrainConfig(iterations=0, seed=4), cfg)
    init = init_params(cfg, 4)
    assert history.entries == [] and all(np.array_equal(params.tensors[k], init.tensors[k]) for k in init.tensors)


def test_unknown_gid_rejected(corpus):
    _, splits, pairs = corpus
    bad = PairTable(list(pairs.records[:3]) + [PairRecord(0, 999, 1, 0.2)])
    with pytest.raises(ValidationError, match="999"):
        train(splits, bad, TrainConfig(iterations=1), desk_model(splits))


def test_in_dim_mismatch_rejected(corpus):
    _, splits, pairs = corpus
    with pytest.raises(ConfigError):
        train(splits, pairs, TrainConfig(iterations=1), ModelConfig(in_dim=7, gin_dims=(4,), embed_dim=4))


def test_training_reduces_loss_and_is_deterministic(corpus):
    _, splits, pairs = corpus
    cfg = TrainConfig(iterations=500, batch_pairs=64, lr=0.01, seed=2, checkpoint_every=50)
    p1, h1 = train(splits, pairs, cfg, desk_model(splits))
    p2, h2 = train(splits, pairs, cfg, desk_model(splits))
    losses = h1.losses()
    assert len(losses) == 500 and losses[-1] <= 0.5 * losses[0]
    assert h1.entries == h2.entries and h1.best_iter == h2.best_iter
    assert all(np.array_equal(p1.tensors[k], p2.tensors[k]) for k in p1.tensors)
    assert {e.phase for e in h1.entries} == {"unsupervised"}
    vals = [e for e in h1.entries if e.val_loss is not None]
    assert [e.iter for e in vals] == list(range(50, 501, 50))
    assert h1.best_iter == min(vals, key=lambda e: e.val_loss).iter


def test_history_csv(tmp_path):
    h = TrainHistory()
    h.record(HistoryEntry(1, 2.5))
    h.record(HistoryEntry(2, 1.5, 1.75))
    with pytest.raises(ValidationError):
        h.record(HistoryEntry(2, 1.0))
    h.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text().splitlines() == ["iter,train_loss,val_loss", "1,2.5,", "2,1.5,1.75"]


# -- fine-tuning -------------------------------------------------------------


def test_fine_tune_phase_in_history(corpus):
    _, splits, pairs = corpus
    cfg = TrainConfig(iterations=30, batch_pairs=16, lr=0.01, checkpoint_every=10,
                      fine_tune=FineTuneConfig(start_iter=20, class_head_dims=(8,)))
    params, history = train(splits, pairs, cfg, desk_model(splits))
    phases = [e.phase for e in history.entries]
    assert phases == ["unsupervised"] * 20 + ["fine_tune"] * 10
    assert params.classes == ("cycle", "path", "star")
    assert params.tensors["cls1.w"].shape == (8, 3)


def test_fine_tune_single_class_is_zero_loss(corpus):
    _, splits, _ = corpus
    one = Dataset(tuple(g for g in splits[0] if g.glabel == "star"))
    cfg = TrainConfig(iterations=3, batch_pairs=4, lr=0.01)
    history = TrainHistory()
    params = fine_tune(init_params(desk_model(splits), 0), one, cfg, history=history)
    assert params.classes == ("star",)
    assert all(loss == 0.0 for loss in history.losses("fine_tune"))


def test_fine_tune_requires_glabels(corpus):
    _, splits, _ = corpus
    from graphprox.graph import LabeledGraph

    bare = Dataset(tuple(LabeledGraph(g.gid, g.labels, g.edges, None) for g in splits[0]))
    with pytest.raises(ValidationError):
        fine_tune(init_params(desk_model(splits), 0), bare, TrainConfig(iterations=1))


def test_cross_entropy_limit():
    logits = Tensor(50.0 * np.eye(3))
    assert ad.softmax_cross_entropy(logits, np.eye(3)).item() < 1e-20


def test_class_head_gradient(corpus):
    ds, splits, _ = corpus
    params = add_class_head(init_params(desk_model(splits), 1), ["cycle", "path", "star"], (5,))
    enc = EncodedCorpus(list(ds), corpus_vocab(splits[0]), "msna")
    gids = list(splits[0].gids[:6])
    trainable = {k: v for k, v in params.tensors.items() if k not in params.frozen}
    frozen = {k: Tensor(v) for k, v in params.tensors.items() if k in params.frozen}

    def f(leaves):
        return classification_loss(params, {**frozen, **leaves}, enc, gids)

    point = kink_free_point(f, trainable, np.random.default_rng(0))
    report = ad.finite_diff_check(f, point, tolerance=1e-4)
    assert report.passed, report.errors
    y = class_targets([ds[g] for g in gids], params.classes)
    assert np.all(y.sum(axis=1) == 1)
