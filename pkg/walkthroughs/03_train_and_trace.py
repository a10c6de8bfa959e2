"""
Training a desk-scale model and reading its reasoning trace
===========================================================

A synthetic world supplies dialogs whose questions need vision, the
dialog history, or a commonsense fact.  We train a small discriminative
model, evaluate it, and print which facts it attended to for one
question.  Training takes about a minute on one core.
"""

import json

from rmk.experiments import dataset_vocabulary, desk_config, featurize_datasets
from rmk.model import RMKModel
from rmk.synthetic import generate_synthetic_dataset
from rmk.trace import build_trace, check_trace
from rmk.training import TrainConfig, evaluate, train

train_set = generate_synthetic_dataset(seed=0, n_images=800, n_rounds=4, n_candidates=10)
val_set = generate_synthetic_dataset(seed=1, n_images=40, n_rounds=4, n_candidates=10, id_prefix="val")

inst = train_set.instances[0]
print("caption :", inst.caption)
for r in inst.rounds:
    print("  Q:", r.question, " A:", r.answer)
print("question:", inst.question, "->", inst.answer)

config = desk_config()
vocab = dataset_vocabulary([train_set])
kb, (examples, val_examples) = featurize_datasets([train_set, val_set], config, vocab)
model = RMKModel(config, vocab, len(kb.relations), seed=0)

print("untrained:", evaluate(model, val_examples)["disc"])
history = train(model, examples, TrainConfig(epochs=20, batch_size=8, lr_init=2e-3), seed=0, val_examples=val_examples)
for rec in history[::4] + history[-1:]:
    print(f"epoch {rec['epoch']}  loss {rec['train_loss']:.3f}  val R@1 {rec['val']['disc']['r1']:.3f}")

# Look inside a commonsense question from the validation split, preferring
# one the model answers correctly.
traces = [build_trace(model, e) for e in val_examples if e.instance.question_type == "commonsense"]
trace = next((t for t in traces if t["gt_rank"] == 1), traces[0])
print()
print("question:", trace["question"])
print("predicted:", trace["predicted_answer"], "| correct:", trace["gt_answer"])
for name, s in trace["structures"].items():
    print(f"top {name} facts:")
    for t in s["top"]:
        print(f"  {t['weight']:.3f}  {t['text']}")
print("problems:", check_trace(trace) or "none")
print("history weights:", json.dumps([round(w, 3) for w in trace["eta"]["history"]]))
