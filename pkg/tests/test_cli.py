import csv
import json

import pytest

from graphprox import cli
from graphprox.errors import NumericError, ResourceError
from graphprox.ged import PairTable
from graphprox.graph import SplitSpec, load_dataset, split_dataset


def run_ok(argv, capsys=None):
    code = cli.run([str(a) for a in argv])
    assert code == 0
    return capsys.readouterr().out if capsys else None


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    data, pairs, model = d / "d.jsonl", d / "pairs.csv", d / "m.json"
    assert cli.run(["synth", "--out", str(data), "--spec", "cycle:10:4..6:A,B", "--spec", "star:10:4..6:A,B",
                    "--spec", "path:10:4..6:A,B", "--seed", "3"]) == 0
    assert cli.run(["ged", "--dataset", str(data), "--out", str(pairs), "--algo", "bipartite"]) == 0
    assert cli.run(["train", "--dataset", str(data), "--pairs", str(pairs), "--out", str(model), "--iterations", "40",
                    "--batch-pairs", "16", "--lr", "0.01", "--gin-dims", "8,4", "--embed-dim", "6", "--seed", "1"]) == 0
    return d, data, pairs, model


def test_synth_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for out in (a, b):
        assert cli.run(["synth", "--out", str(out), "--spec", "cycles:20:5..8", "--seed", "1"]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert len(a.read_text().splitlines()) == 20
    cli.run(["synth", "--out", str(b), "--spec", "cycles:20:5..8", "--seed", "2"])
    assert a.read_bytes() != b.read_bytes()


def test_ged_pair_budget_eight(workspace, tmp_path):
    _, data, _, _ = workspace
    out = tmp_path / "p8.csv"
    assert cli.run(["ged", "--dataset", str(data), "--algo", "ensemble", "--pair-budget", "8", "--out", str(out)]) == 0
    rows = out.read_text().splitlines()
    assert rows[0] == "gid_i,gid_j,ged,nged,sim" and len(rows) == 1 + 8


def test_full_labeling_covers_all_pairs(workspace):
    _, data, pairs, _ = workspace
    n = len(load_dataset(data))
    assert len(PairTable.from_csv(pairs)) == n * (n - 1) // 2


def test_rank_with_truth_as_prediction(workspace, capsys):
    _, _, pairs, _ = workspace
    out = run_ok(["rank", "--pairs", pairs, "--predicted-pairs", pairs, "--k", "10"], capsys)
    report = json.loads(out)["distance"]
    assert report["tau"] == 1.0 and report["p_at_k"] == 1.0 and report["k"] == 10


def test_embed_shape_and_rank_from_model(workspace, tmp_path, capsys):
    d, data, pairs, model = workspace
    meta = json.loads(model.read_text())
    test_gids = meta["extra"]["splits"]["test"]
    emb = tmp_path / "e.csv"
    run_ok(["embed", "--model", model, "--dataset", data, "--split", "test", "--out", emb])
    rows = list(csv.reader(emb.open()))
    assert len(rows) - 1 == len(test_gids)
    assert all(len(r) == 6 + 1 for r in rows)
    assert [int(r[0]) for r in rows[1:]] == test_gids

    rank_csv = tmp_path / "r.csv"
    out = run_ok(["rank", "--pairs", pairs, "--model", model, "--dataset", data, "--out", rank_csv], capsys)
    report = json.loads(out)
    assert set(report) == {"distance", "similarity"}
    assert report["distance"]["n_queries"] == len(test_gids)
    assert -1.0 <= report["distance"]["tau"] <= 1.0
    n_train = len(meta["extra"]["splits"]["train"])
    assert len(rank_csv.read_text().splitlines()) == 1 + len(test_gids) * n_train

    out = run_ok(["rank", "--pairs", pairs, "--embeddings", emb, "--mode", "distance"], capsys)
    assert set(json.loads(out)) == {"distance"}


def test_embed_is_reproducible(workspace, tmp_path):
    _, data, pairs, model = workspace
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_ok(["embed", "--model", model, "--dataset", data, "--out", a])
    m2 = tmp_path / "m2.json"
    run_ok(["train", "--dataset", data, "--pairs", pairs, "--out", m2, "--iterations", "40", "--batch-pairs", "16",
            "--lr", "0.01", "--gin-dims", "8,4", "--embed-dim", "6", "--seed", "1"])
    run_ok(["embed", "--model", m2, "--dataset", data, "--out", b])
    assert a.read_bytes() == b.read_bytes()


def test_classify_and_viz(workspace, tmp_path, capsys):
    _, data, _, model = workspace
    rep = json.loads(run_ok(["classify", "--dataset", data, "--model", model, "--epochs", "50"], capsys))
    assert 0.0 <= rep["accuracy"] <= 1.0 and rep["classes"] == ["cycle", "path", "star"]
    pcsv, svg = tmp_path / "p.csv", tmp_path / "p.svg"
    run_ok(["viz", "--dataset", data, "--model", model, "--out-csv", pcsv, "--out-svg", svg])
    assert pcsv.read_text().splitlines()[0] == "gid,x,y"
    assert svg.read_text().count("<circle") == len(load_dataset(data))


def test_config_file_and_flag_precedence(workspace, tmp_path):
    _, data, _, _ = workspace
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"seed": 5, "model": {"embed_dim": 12, "pooling": "avg"},
                                    "train": {"iterations": 7, "lr": 0.02}, "logreg": {"epochs": 9}}))
    args = cli.build_parser().parse_args(["train", "--dataset", str(data), "--out", "x", "--config", str(cfg_path),
                                          "--embed-dim", "4", "--iterations", "3"])
    cfg = cli._load_config(args.config)
    seed, split = cli.resolve_seed_split(args, cfg)
    tcfg, mcfg, logreg = cli.resolve_configs(args, cfg, None, seed)
    assert seed == 5 and split.seed == 5
    assert mcfg.embed_dim == 4 and mcfg.pooling == "avg"
    assert tcfg.iterations == 3 and tcfg.lr == 0.02 and tcfg.seed == 5
    assert logreg == {"l2": 1e-3, "epochs": 9, "lr": 0.5}


@pytest.mark.parametrize("argv, category", [
    (["frobnicate"], "validation"),
    (["synth", "--out", "x.jsonl", "--spec", "blob:3:1..2"], "config"),
    (["ged", "--dataset", "/nonexistent/d.jsonl", "--out", "p.csv"], "io"),
    (["train", "--dataset", "{data}", "--out", "m.json"], "config"),
    (["rank", "--pairs", "{pairs}", "--predicted-pairs", "{pairs}", "--k", "0"], "validation"),
])
def test_errors_are_single_line_with_exit_one(workspace, capsys, tmp_path, monkeypatch, argv, category):
    _, data, pairs, _ = workspace
    monkeypatch.chdir(tmp_path)
    argv = [a.format(data=data, pairs=pairs) for a in argv]
    assert cli.run(argv) == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and err[0].startswith(f"error: {category}: ")


def test_config_rejects_unknown_keys(workspace, tmp_path, capsys):
    _, data, pairs, _ = workspace
    bad = tmp_path / "bad.json"
    bad.write_text('{"optimizer": "sgd"}')
    assert cli.run(["train", "--dataset", str(data), "--pairs", str(pairs), "--out", str(tmp_path / "m"),
                    "--config", str(bad)]) == 1
    assert capsys.readouterr().err.startswith("error: config: ")


@pytest.mark.parametrize("exc", [ResourceError("out of budget"), NumericError("loss became nan")])
def test_resource_and_numeric_exit_two(monkeypatch, capsys, exc):
    def boom(args):
        raise exc

    monkeypatch.setitem(cli.COMMANDS, "check", boom)
    assert cli.run(["check"]) == 2
    line = capsys.readouterr().err.strip()
    assert line == f"error: {exc.category}: {exc}"


def test_check_passes(capsys):
    assert cli.run(["check"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines and all(line.startswith("PASS ") for line in lines)


def test_check_fails_on_injected_sigmoid_bug(monkeypatch, capsys):
    from graphprox import autodiff

    monkeypatch.setattr(autodiff, "_sigmoid_grad", lambda y, g: -g * y * (1.0 - y))
    assert cli.run(["check"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error: check: failed") and "gradient" in err


def test_split_flag_changes_partition(workspace, tmp_path):
    _, data, pairs, _ = workspace
    m = tmp_path / "m.json"
    run_ok(["train", "--dataset", data, "--pairs", pairs, "--out", m, "--iterations", "1", "--split", "0.5,0.25,0.25",
            "--gin-dims", "4", "--embed-dim", "4"])
    splits = json.loads(m.read_text())["extra"]["splits"]
    expect = split_dataset(load_dataset(data), SplitSpec((0.5, 0.25, 0.25), 0))
    assert [splits[k] for k in ("train", "val", "test")] == [part.gids for part in expect]
    assert [len(splits[k]) for k in ("train", "val", "test")] == [16, 7, 7]  # floors for val/test, remainder to train
