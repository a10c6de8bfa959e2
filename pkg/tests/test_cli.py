import dataclasses
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from rmk.cli import EXIT_DATA, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from rmk.config import load_config
from rmk.fixtures import tiny_example, write_fixture_dataset
from rmk.knowledge import FactTriple, retrieve_candidates, save_triple_store
from rmk.model import RMKModel
from rmk.numerics import inject_gradient_fault

DESK = str(Path(__file__).resolve().parents[1] / "configs" / "desk.conf")


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    paths = write_fixture_dataset(root / "data", n_dialogs=8, n_candidates=10)
    conf = root / "run.conf"
    conf.write_text(
        Path(DESK).read_text()
        .replace("paths.dataset =", f"paths.dataset = {paths['dataset']}")
        .replace("paths.triples =", f"paths.triples = {paths['triples']}")
        .replace("paths.features =", f"paths.features = {paths['features']}")
        .replace("optim.epochs = 50", "optim.epochs = 2")
    )
    return root, conf, paths


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def trained(workspace):
    root, conf, _ = workspace
    ckpt = root / "m.ckpt"
    assert main(["train", "--config", str(conf), "--checkpoint", str(ckpt), "--log", str(root / "log1.jsonl")]) == EXIT_OK
    return ckpt


def test_train_logs_decreasing_loss_and_is_deterministic(workspace, trained):
    root, conf, _ = workspace
    first = (root / "log1.jsonl").read_text().splitlines()
    records = [json.loads(line) for line in first]
    assert [r["epoch"] for r in records] == [1, 2]
    assert records[1]["train_loss"] < records[0]["train_loss"]
    assert main(["train", "--config", str(conf), "--checkpoint", str(root / "m2.ckpt"), "--log", str(root / "log2.jsonl")]) == 0
    assert (root / "log2.jsonl").read_text().splitlines() == first
    assert (root / "m2.ckpt").read_bytes() == trained.read_bytes()


def test_eval_twice_identical(workspace, trained, capsys):
    _, conf, _ = workspace
    code, out1, _ = _run(capsys, "eval", "--config", conf, "--checkpoint", trained)
    assert code == EXIT_OK
    _, out2, _ = _run(capsys, "eval", "--config", conf, "--checkpoint", trained)
    assert out1 == out2
    rep = json.loads(out1)["disc"]
    assert rep["r1"] <= rep["r5"] <= rep["r10"] and rep["count"] == 8


def test_eval_manifest_mismatch_is_a_data_error(workspace, trained, capsys):
    _, conf, _ = workspace
    code, _, err = _run(capsys, "eval", "--config", conf, "--checkpoint", trained, "--set", "model.d_h=16", "--set", "model.heads=2")
    assert code == EXIT_DATA and "manifest mismatch" in err


def test_trace_output(workspace, trained, capsys):
    from rmk.data import load_dataset
    from rmk.trace import check_trace

    _, conf, paths = workspace
    ids = [inst.image_id for inst in load_dataset(paths["dataset"])]
    for image_id in ids[:3]:
        code, out, _ = _run(capsys, "trace", "--config", conf, "--checkpoint", trained, "--instance", image_id)
        assert code == EXIT_OK
        rec = json.loads(out)
        assert rec["image_id"] == image_id and check_trace(rec) == []
    code, _, err = _run(capsys, "trace", "--config", conf, "--checkpoint", trained, "--instance", "nope")
    assert code == EXIT_DATA and "unknown instance" in err


def _store(tmp_path, triples):
    p = tmp_path / "t.tsv"
    save_triple_store(p, triples)
    return p


def test_retrieve_single_matching_fact(tmp_path, capsys):
    p = _store(tmp_path, [FactTriple("dog", "AtLocation", "park")])
    code, out, _ = _run(capsys, "retrieve", "--set", f"paths.triples={p}", "--k", 1, "--caption", "dog at location park")
    assert code == EXIT_OK
    assert out == "1\t1.000000\tdog\tAtLocation\tpark\n"


def test_retrieve_matches_library_on_fifty_facts(tmp_path, capsys):
    rng = np.random.default_rng(0)
    words = ["dog", "cat", "park", "ball", "tree", "car", "road", "food", "bowl", "grass", "sky", "kite"]
    triples = [FactTriple(*rng.choice(words, 3)) for _ in range(50)]
    p = _store(tmp_path, triples)
    argv = ["retrieve", "--set", f"paths.triples={p}", "--k", "10", "--caption", "a dog in the park", "--concepts", "ball,tree"]
    code, out, _ = _run(capsys, *argv)
    assert code == EXIT_OK
    _, again, _ = _run(capsys, *argv)
    assert again == out
    want = retrieve_candidates(triples, "a dog in the park", ["ball", "tree"], 10)
    got = [line.split("\t") for line in out.splitlines()]
    assert [(g[2], g[3], g[4]) for g in got] == [(s.fact.subject, s.fact.relation, s.fact.object) for s in want]
    assert [float(g[1]) for g in got] == pytest.approx([s.score for s in want], abs=1e-6)


def test_retrieve_empty_store(tmp_path, capsys):
    p = tmp_path / "empty.tsv"
    p.write_text("")
    code, _, err = _run(capsys, "retrieve", "--set", f"paths.triples={p}", "--caption", "x")
    assert code == EXIT_DATA and "empty" in err


def test_gradcheck_passes_and_lists_every_group(capsys):
    code, out, _ = _run(capsys, "gradcheck", "--config", DESK)
    assert code == EXIT_OK
    lines = out.splitlines()
    assert lines[-1].startswith(f"{len(lines) - 1} parameter groups")
    names = [line.split()[0] for line in lines[:-1]]
    cfg = dataclasses.replace(load_config(DESK).model, mode="both", k_facts=3)
    _, vocab, kb = tiny_example(cfg)
    assert names == list(RMKModel(cfg, vocab, len(kb.relations)).parameters())


def test_gradcheck_detects_corrupted_rule(capsys):
    with inject_gradient_fault("tanh", 1.5):
        code, out, err = _run(capsys, "gradcheck", "--config", DESK)
    assert code == EXIT_NUMERIC
    assert "FAIL" in out and "gradient check failed" in err


@pytest.mark.parametrize(
    "argv,code",
    [
        (["bogus"], EXIT_USAGE),
        (["train", "--set", "model.nope=1"], EXIT_USAGE),
        (["train", "--config", "/no/such.conf"], EXIT_USAGE),
        (["eval"], EXIT_DATA),  # no triple store configured
        (["train", "--set", "paths.triples=/no/such.tsv"], EXIT_DATA),
    ],
)
def test_exit_codes(argv, code, capsys):
    assert _run(capsys, *argv)[0] == code


def test_eval_without_checkpoint_is_usage_error(workspace, capsys):
    _, conf, _ = workspace
    assert _run(capsys, "eval", "--config", conf, "--set", "paths.checkpoint=")[0] == EXIT_USAGE


def test_nan_training_exits_three(workspace, capsys):
    _, conf, _ = workspace
    code, _, err = _run(capsys, "train", "--config", conf, "--set", "optim.lr_init=1e300", "--set", "optim.epochs=3")
    assert code == EXIT_NUMERIC and "epoch" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "rmk.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "gradcheck" in res.stdout
