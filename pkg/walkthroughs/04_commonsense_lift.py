"""
What the facts buy
==================

Held-out commonsense questions ask about objects whose questions never
appeared in training.  The only bridge from such an object to its answer
is a retrieved fact, so a model with both fact structures removed should
sit near chance while the full model should not.  One seed takes about a
minute on a single core.
"""

import logging

from rmk.experiments import ABLATIONS, LiftSettings, heldout_r1

logging.basicConfig(level=logging.INFO, format="%(message)s")
logging.getLogger("rmk.training").setLevel(logging.WARNING)  # per-epoch lines

settings = LiftSettings()
print(f"{settings.n_train} training dialogs, {settings.n_heldout} held-out questions, {settings.n_candidates} candidates")
full = heldout_r1(0, ABLATIONS["full"], settings)
bare = heldout_r1(0, ABLATIONS["no_facts"], settings)
print(f"held-out R@1  full {full:.3f}  without facts {bare:.3f}  chance {1 / settings.n_candidates:.3f}")
