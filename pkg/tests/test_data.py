import json
import logging

import numpy as np
import pytest

from rmk.data import (
    DatasetError,
    DialogInstance,
    ImageFeatures,
    Round,
    corpus_tokens,
    instance_from_json,
    load_dataset,
    load_features,
    save_dataset,
    save_features,
)
from rmk.knowledge import HashedWordVectors, load_triple_store, retrieve_candidates
from rmk.synthetic import SAFE_ANSWER, VocabSpec, generate_synthetic_dataset, split_commonsense_heldout
from rmk.text import tokenize


def _instance(**kw):
    base = dict(
        image_id="img1",
        caption="a dog",
        rounds=[Round("is it big?", "yes")],
        question="what color?",
        candidates=["brown", "red"],
        gt_index=0,
        relevance=[1.0, 0.0],
    )
    base.update(kw)
    return DialogInstance(**base)


def _obj(**kw):
    obj = _instance().to_json()
    obj.update(kw)
    return obj


# -- dataset format ---------------------------------------------------------


def test_round_trip(tmp_path):
    data = generate_synthetic_dataset(0, 5, n_candidates=8)
    p = tmp_path / "d.jsonl"
    save_dataset(p, data.instances)
    assert load_dataset(p) == data.instances


def test_missing_gt_index_names_field():
    obj = _obj()
    del obj["gt_index"]
    with pytest.raises(DatasetError, match=r"\$\.gt_index"):
        instance_from_json(obj)


@pytest.mark.parametrize(
    "change,path",
    [
        ({"candidates": []}, "$.candidates"),
        ({"candidates": ["a", 3]}, "$.candidates[1]"),
        ({"gt_index": 5}, "$.gt_index"),
        ({"gt_index": True}, "$.gt_index"),
        ({"relevance": [1.0]}, "$.relevance"),
        ({"relevance": [1.0, 2.0]}, "$.relevance[1]"),
        ({"rounds": [{"question": "q"}]}, "$.rounds[0].answer"),
        ({"caption": 7}, "$.caption"),
    ],
)
def test_schema_errors_locate_field(change, path):
    with pytest.raises(DatasetError) as info:
        instance_from_json(_obj(**change))
    assert info.value.path == path


def test_candidate_count_enforced():
    with pytest.raises(DatasetError, match="expected 3 candidates"):
        instance_from_json(_obj(), n_candidates=3)


def test_bad_json_line(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text(json.dumps(_obj()) + "\n{oops\n")
    with pytest.raises(DatasetError, match="line 2"):
        load_dataset(p)


def test_empty_dataset_warns(tmp_path, caplog):
    p = tmp_path / "d.jsonl"
    p.write_text("\n")
    with caplog.at_level(logging.WARNING):
        assert load_dataset(p) == []
    assert "no dialog instances" in caplog.text


def test_history_sentences_start_with_caption():
    inst = _instance()
    assert inst.history_sentences() == ["a dog", "is it big? yes"]
    assert inst.answer == "brown"


def test_corpus_tokens_cover_all_text():
    docs = corpus_tokens([_instance()], ["dog at location park"])
    flat = {t for d in docs for t in d}
    assert {"dog", "big", "yes", "color", "brown", "red", "park"} <= flat


# -- feature sidecar --------------------------------------------------------


@pytest.mark.parametrize("name", ["f.bin", "f.json"])
def test_feature_round_trip(tmp_path, name):
    rng = np.random.default_rng(0)
    recs = {"b": ImageFeatures(rng.standard_normal((3, 4)), ["dog", "ünïcode"]), "a": ImageFeatures(rng.standard_normal((1, 4)), [])}
    save_features(tmp_path / name, recs)
    back = load_features(tmp_path / name)
    assert set(back) == {"a", "b"}
    for k in recs:
        np.testing.assert_array_equal(back[k].features, recs[k].features)
        assert back[k].concepts == recs[k].concepts


def test_corrupt_feature_files(tmp_path):
    p = tmp_path / "f.bin"
    p.write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(DatasetError, match="magic"):
        load_features(p)
    save_features(p, {"x": ImageFeatures(np.ones((2, 3)))})
    p.write_bytes(p.read_bytes()[:-10])
    with pytest.raises(DatasetError, match="truncated"):
        load_features(p)


# -- synthetic generator ----------------------------------------------------


def test_same_seed_gives_byte_identical_files(tmp_path):
    a = generate_synthetic_dataset(3, 12, n_candidates=10).write(tmp_path / "a")
    b = generate_synthetic_dataset(3, 12, n_candidates=10).write(tmp_path / "b")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()
    c = generate_synthetic_dataset(4, 12, n_candidates=10).write(tmp_path / "c")
    assert a["dataset"].read_bytes() != c["dataset"].read_bytes()


def test_ten_round_dialogs():
    data = generate_synthetic_dataset(0, 20, n_rounds=10, n_candidates=10)
    for inst in data.instances:
        # nine history rounds plus the question being answered
        assert len(inst.rounds) + 1 == 10
        assert len(inst.candidates) == 10 == len(set(inst.candidates))
        assert inst.relevance[inst.gt_index] == 1.0
        assert inst.relevance[inst.candidates.index(SAFE_ANSWER)] == 0.5


def test_commonsense_answers_are_fact_objects_and_retrievable():
    data = generate_synthetic_dataset(1, 60, n_candidates=10)
    cs = [inst for inst in data.instances if inst.question_type == "commonsense"]
    assert cs
    vectors = HashedWordVectors()
    for inst in cs:
        subject = [o for o in data.spec.objects if f"the {o} " in inst.question][0]
        supporting = [t for t in data.triples if t.subject == subject and t.object == inst.answer]
        assert supporting, inst.question
        concepts = data.features[inst.image_id].concepts
        got = retrieve_candidates(data.triples, inst.caption, concepts, k=2 * len(concepts), vectors=vectors)
        assert any(t in got.facts for t in supporting)


def test_question_kinds_follow_ratios():
    data = generate_synthetic_dataset(2, 300, n_candidates=5)
    kinds = [inst.question_type for inst in data.instances]
    counts = {k: kinds.count(k) / len(kinds) for k in ("vision", "history", "commonsense")}
    assert counts["vision"] == pytest.approx(0.4, abs=0.08)
    assert counts["history"] == pytest.approx(0.3, abs=0.08)
    assert counts["commonsense"] == pytest.approx(0.3, abs=0.08)


def test_history_questions_refer_to_previous_answer():
    data = generate_synthetic_dataset(5, 80, n_candidates=6, kind_ratios=(0, 1, 0))
    for inst in data.instances:
        assert inst.question == "what color is it?"
        obj = inst.rounds[-1].answer.split()[-1]
        assert obj in data.features[inst.image_id].concepts


def test_features_match_scene_objects():
    data = generate_synthetic_dataset(6, 10, n_candidates=6, n_objects=3, d_v=16)
    for inst in data.instances:
        rec = data.features[inst.image_id]
        assert rec.features.shape == (3, 16)
        assert all(c in tokenize(" ".join(rec.concepts)) for c in tokenize(inst.caption) if c in data.spec.objects)


def test_heldout_split_uses_other_group():
    train, held = split_commonsense_heldout(0, 40, 16, n_candidates=8)
    spec = train.spec
    for inst in train.instances:
        if inst.question_type == "commonsense":
            assert any(f"the {o} " in inst.question for o in spec.group("A"))
    assert all(inst.question_type == "commonsense" for inst in held.instances)
    for inst in held.instances:
        assert any(f"the {o} " in inst.question for o in spec.group("B"))
    assert train.triples == held.triples


def test_generated_vocabulary():
    spec = VocabSpec.generated(50, seed=1)
    assert len(spec.objects) == 50
    assert all(len(name) == 5 for name in spec.objects)
    assert len(spec.group("A")) == len(spec.group("B")) == 25
    assert VocabSpec.generated(50, seed=1).objects == spec.objects


def test_generator_argument_errors():
    with pytest.raises(ValueError):
        generate_synthetic_dataset(0, 0)
    with pytest.raises(ValueError):
        generate_synthetic_dataset(0, 3, kind_ratios=(0, 0, 0))
    with pytest.raises(ValueError):
        generate_synthetic_dataset(0, 3, n_objects=6)


def test_triple_store_written_by_generator_loads(tmp_path):
    data = generate_synthetic_dataset(0, 3, n_candidates=5)
    paths = data.write(tmp_path)
    assert load_triple_store(paths["triples"]) == data.triples
