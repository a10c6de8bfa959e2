import dataclasses
import struct

import numpy as np
import pytest

from rmk.checkpoint import CheckpointError, load_checkpoint, read_checkpoint, save_checkpoint
from rmk.fixtures import tiny_config, tiny_example
from rmk.model import RMKModel, collate
from rmk.text import Vocabulary


@pytest.fixture()
def saved(tmp_path):
    cfg = tiny_config()
    ex, vocab, kb = tiny_example(cfg)
    model = RMKModel(cfg, vocab, len(kb.relations), seed=3)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, model, kb.relations, extra={"seed": 3})
    return path, model, ex, kb, cfg


def test_round_trip_gives_identical_scores(saved):
    path, model, ex, kb, cfg = saved
    back, relations, manifest = load_checkpoint(path, cfg, model.vocab)
    assert relations.names == kb.relations.names
    assert manifest["extra"] == {"seed": 3}
    for name, p in model.named_parameters():
        np.testing.assert_array_equal(dict(back.named_parameters())[name].data, p.data)
    batch = collate([ex], cfg.max_len)
    np.testing.assert_array_equal(back.forward(batch).disc_scores.data, model.forward(batch).disc_scores.data)


def test_runtime_settings_may_differ(saved):
    path, _, _, _, cfg = saved
    back, _, _ = load_checkpoint(path, dataclasses.replace(cfg, dropout=0.3, mode="disc"))
    assert back.config.dropout == 0.3 and back.config.mode == "disc"


def test_shape_setting_mismatch_is_named(saved):
    path, _, _, _, cfg = saved
    with pytest.raises(CheckpointError, match="d_h: checkpoint 8 vs config 16"):
        load_checkpoint(path, dataclasses.replace(cfg, d_h=16))


def test_vocabulary_mismatch(saved):
    path = saved[0]
    with pytest.raises(CheckpointError, match="vocabulary differs"):
        load_checkpoint(path, vocab=Vocabulary(["<pad>", "<unk>", "<s>", "x"]))


def test_bad_magic_version_and_truncation(saved, tmp_path):
    path = saved[0]
    raw = path.read_bytes()
    bad = tmp_path / "bad"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        read_checkpoint(bad)
    bad.write_bytes(raw[:4] + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        read_checkpoint(bad)
    bad.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        read_checkpoint(bad)
    bad.write_bytes(raw + b"\0" * 8)
    with pytest.raises(CheckpointError, match="trailing"):
        read_checkpoint(bad)
    with pytest.raises(CheckpointError, match="cannot read"):
        read_checkpoint(tmp_path / "missing")
