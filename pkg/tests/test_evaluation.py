import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import kendall_tau_b_loop
from scipy import optimize, stats

from graphprox.errors import ParseError, ValidationError
from graphprox.evaluation import (
    accuracy,
    evaluate_ranking,
    evaluate_scores,
    kendall_tau_b,
    label_color,
    logreg_objective,
    logreg_predict,
    logreg_train,
    precision_at_k,
    project_2d,
    rank_query,
    read_embeddings_csv,
    scatter_svg,
    standardize,
    top_k,
    write_embeddings_csv,
    write_projection_csv,
    write_rankings_csv,
)
from graphprox.ged import PairTable
from graphprox.ged.pairs import PairRecord

# -- Kendall tau-b -----------------------------------------------------------


def test_tau_examples():
    x = [1.0, 2.0, 3.0, 4.0]
    assert kendall_tau_b(x, x) == 1.0
    assert kendall_tau_b(x, x[::-1]) == -1.0
    assert abs(kendall_tau_b(x, [1, 3, 2, 4]) - 4 / 6) < 1e-15


def test_tau_undefined_and_errors():
    assert math.isnan(kendall_tau_b([1, 1, 1], [1, 2, 3]))
    assert math.isnan(kendall_tau_b([1, 2, 3], [5, 5, 5]))
    with pytest.raises(ValidationError):
        kendall_tau_b([1, 2], [1, 2, 3])
    with pytest.raises(ValidationError):
        kendall_tau_b([1], [1])


tie_heavy = st.lists(st.integers(0, 4), min_size=2, max_size=25)


@settings(max_examples=150)
@given(tie_heavy.flatmap(lambda xs: st.tuples(st.just(xs), st.lists(st.integers(0, 4), min_size=len(xs), max_size=len(xs)))))
def test_tau_matches_loop_oracle_and_scipy(xy):
    x, y = xy
    ours = kendall_tau_b(x, y)
    loop = kendall_tau_b_loop(x, y)
    ref = stats.kendalltau(x, y, variant="b").statistic
    if math.isnan(loop):
        assert math.isnan(ours) and math.isnan(ref)
        return
    assert abs(ours - loop) <= 1e-12 and abs(ours - ref) <= 1e-12
    assert -1.0 <= ours <= 1.0
    assert abs(ours - kendall_tau_b(y, x)) <= 1e-12
    assert abs(kendall_tau_b(x, [-v for v in y]) + ours) <= 1e-12


# -- precision at k ----------------------------------------------------------


def test_precision_examples():
    s = [0.1, 0.5, 0.3, 0.9, 0.2]
    assert all(precision_at_k(s, s, k) == 1.0 for k in range(1, 6))
    assert precision_at_k([0, 0, 1, 1], [1, 1, 0, 0], 2) == 0.0
    # true top-3 {a,b,c}, predicted top-3 {a,c,d}
    true = [0.1, 0.2, 0.3, 0.9, 0.8]
    pred = [0.1, 0.9, 0.3, 0.2, 0.8]
    assert precision_at_k(true, pred, 3) == pytest.approx(2 / 3)


def test_precision_errors_and_ties():
    with pytest.raises(ValidationError):
        precision_at_k([1, 2], [1, 2], 0)
    with pytest.raises(ValidationError):
        precision_at_k([1, 2], [1, 2], 3)
    assert top_k([1.0, 0.0, 0.0, 0.0], 2, ids=[9, 7, 3, 5]) == [3, 5]


# -- ranking -----------------------------------------------------------------


def test_rank_query_duplicate_first_and_gid_tiebreak():
    corpus = {4: np.array([1.0, 0.0]), 2: np.array([0.0, 1.0]), 7: np.array([0.0, 0.0])}
    r = rank_query(np.zeros(2), corpus, "distance", query_gid=0)
    assert r.items[0] == (7, 0.0)
    assert [g for g, _ in r.items] == [7, 2, 4]  # 2 and 4 equidistant: lower gid first
    assert r.direction == "ascending"
    s = rank_query(np.array([1.0, 1.0]), corpus, "similarity")
    assert [g for g, _ in s.items] == [2, 4, 7] and s.direction == "descending"
    with pytest.raises(ValidationError):
        rank_query(np.zeros(3), corpus)
    with pytest.raises(ValidationError):
        rank_query(np.zeros(2), {})


def _line_truth(n):
    # graphs on a line: nged = |i - j| / n, so closeness is exactly positional
    return PairTable(PairRecord(i, j, j - i, (j - i) / n) for i in range(n) for j in range(i + 1, n))


def test_evaluate_with_truth_as_prediction_is_perfect():
    truth = _line_truth(12)
    report = evaluate_scores(range(12), range(12), lambda q, gids: [truth.get(q, g).nged for g in gids], truth, k=10)
    assert report.tau == 1.0 and report.p_at_k == 1.0 and report.mse == 0.0
    assert report.n_queries == 12 and report.k == 10


def test_evaluate_embeddings_and_k_fallback(tmp_path):
    n = 6
    truth = _line_truth(n)
    h = np.arange(n, dtype=float)[:, None]  # integers keep symmetric ties exact
    report = evaluate_ranking(list(range(n)), h, list(range(n)), h, truth, k=10)
    # squared distance is monotone in |i - j| so the ordering is exact
    assert report.tau == 1.0 and report.k == n - 1
    sim = evaluate_ranking(list(range(n)), h, list(range(n)), h, truth, mode="similarity")
    assert sim.mse is None and -1.0 <= sim.tau <= 1.0
    write_rankings_csv(report.rankings, tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "query_gid,rank,gid,score" and len(lines) == 1 + n * (n - 1)
    assert lines[1].startswith("0,1,1,")


def test_evaluate_missing_truth_and_undefined_tau():
    truth = PairTable([PairRecord(0, 1, 1, 0.5), PairRecord(0, 2, 1, 0.5), PairRecord(1, 2, 2, 1.0)])
    rep = evaluate_scores([0], [0, 1, 2], lambda q, g: [0.1, 0.2], truth)
    assert rep.undefined_tau == 1 and math.isnan(rep.tau)
    with pytest.raises(ValidationError):
        evaluate_scores([0], [0, 1, 3], lambda q, g: [0.1, 0.2], truth)


# -- logistic regression -----------------------------------------------------


def test_logreg_separable_1d():
    x = np.array([[-3.0], [-2.0], [-1.0], [1.0], [2.0], [3.0]])
    y = ["a", "a", "a", "b", "b", "b"]
    model = logreg_train(x, y)
    assert accuracy(model, x, y) == 1.0
    assert logreg_predict(model, np.array([5.0])) == "b"


def test_logreg_zero_epochs_is_uniform():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(9, 3))
    y = ["a", "b", "c"] * 3
    model = logreg_train(x, y, epochs=0)
    assert np.all(model.logits(x) == 0.0)
    assert accuracy(model, x, y) == pytest.approx(1 / 3)


def test_logreg_rejects_single_class():
    with pytest.raises(ValidationError):
        logreg_train(np.zeros((3, 2)), ["a", "a", "a"])
    with pytest.raises(ValidationError):
        logreg_train(np.zeros((3, 2)), ["a", "b"])


def _reference_optimum(z, y, l2):
    # independent route: quasi-Newton on the flattened objective with its own gradient
    d, c = z.shape[1], y.shape[1]

    def f(theta):
        w, b = theta[: d * c].reshape(d, c), theta[d * c:]
        logits = z @ w + b
        m = logits.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
        p = np.exp(logits - lse[:, None])
        loss = np.mean(lse - (y * logits).sum(axis=1)) + 0.5 * l2 * np.sum(w**2)
        gw = z.T @ (p - y) / len(z) + l2 * w
        gb = (p - y).mean(axis=0)
        return loss, np.concatenate([gw.ravel(), gb])

    res = optimize.minimize(f, np.zeros(d * c + c), jac=True, method="L-BFGS-B",
                            options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000})
    return res.fun


def test_logreg_matches_reference_optimizer():
    rng = np.random.default_rng(4)
    x = np.vstack([rng.normal(0, 1, (10, 2)), rng.normal(1, 1, (10, 2))])
    labels = ["p"] * 10 + ["q"] * 10
    l2 = 0.1
    model = logreg_train(x, labels, l2=l2, epochs=3000, lr=0.5)
    z, _, _ = standardize(x)
    y = np.zeros((20, 2))
    y[:10, 0] = y[10:, 1] = 1.0
    ours = logreg_objective(model.weights, model.bias, z, y, l2)
    assert abs(ours - _reference_optimum(z, y, l2)) <= 1e-6


def test_logreg_objective_monotone_small_lr():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(60, 8))
    labels = [("a", "b", "c")[i % 3] for i in range(60)]
    model = logreg_train(x, labels, lr=1e-3, epochs=200)
    assert np.all(np.diff(model.loss_history) <= 0)


def test_logreg_deterministic():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(12, 4))
    labels = ["a", "b"] * 6
    a, b = logreg_train(x, labels, seed=1), logreg_train(x, labels, seed=1)
    assert np.array_equal(a.weights, b.weights)


# -- projection --------------------------------------------------------------


def pdist(x):
    return np.sqrt(np.sum((x[:, None, :] - x[None, :, :]) ** 2, axis=-1))


def test_project_two_points():
    coords, degenerate = project_2d(np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]))
    assert not degenerate
    np.testing.assert_allclose(np.sort(coords[:, 0]), [-0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(coords[:, 1], 0.0, atol=1e-12)
    assert coords[np.argmax(np.abs(coords[:, 0])), 0] > 0


def test_project_equilateral_triangle():
    tri = np.array([[0.0, 0.0, 5.0], [1.0, 0.0, 5.0], [0.5, np.sqrt(3) / 2, 5.0]])
    coords, _ = project_2d(tri)
    d = pdist(coords)
    assert np.all(np.abs(d[np.triu_indices(3, 1)] - 1.0) <= 1e-9)


def test_project_identical_points():
    coords, degenerate = project_2d(np.ones((4, 3)))
    assert degenerate and np.all(coords == 0.0)
    with pytest.raises(ValidationError):
        project_2d(np.ones((1, 3)))


@settings(max_examples=40)
@given(st.integers(0, 10_000), st.integers(3, 15))
def test_project_preserves_planar_configurations(seed, n):
    rng = np.random.default_rng(seed)
    plane = rng.normal(size=(n, 2)) * 3
    basis, _ = np.linalg.qr(rng.normal(size=(6, 2)))
    x = plane @ basis.T + rng.normal(size=6)
    coords, _ = project_2d(x)
    np.testing.assert_allclose(pdist(coords), pdist(plane), atol=1e-6)


# -- writers -----------------------------------------------------------------


def test_embeddings_csv_round_trip(tmp_path):
    e = np.array([[0.1234567891, -2.0], [3.0, 1e-10]])
    p = tmp_path / "e.csv"
    write_embeddings_csv([5, 9], e, p)
    lines = p.read_text().splitlines()
    assert lines == ["gid,e0,e1", "5,0.123456789,-2.000000000", "9,3.000000000,0.000000000"]
    gids, back = read_embeddings_csv(p)
    assert gids == [5, 9] and np.allclose(back, e, atol=1e-9)


def test_embeddings_csv_parse_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("id,e0\n1,2\n")
    with pytest.raises(ParseError):
        read_embeddings_csv(p)
    p.write_text("gid,e0\n1,2,3\n")
    with pytest.raises(ParseError):
        read_embeddings_csv(p)
    p.write_text("gid,e0\n1,abc\n")
    with pytest.raises(ParseError):
        read_embeddings_csv(p)


def test_projection_and_svg(tmp_path):
    coords = np.array([[0.0, 0.0], [1.0, 2.0], [-1.0, 0.5]])
    write_projection_csv([1, 2, 3], coords, tmp_path / "p.csv")
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "gid,x,y"
    svg = scatter_svg([1, 2, 3], coords, ["cycle", "star", "cycle"])
    assert svg.count("<circle") == 3
    assert 'width="800" height="800"' in svg
    assert svg.count(f'fill="{label_color("cycle")}"') == 2
    assert label_color("cycle") != label_color("star")
    assert label_color("x").startswith("#") and len(label_color("x")) == 7
