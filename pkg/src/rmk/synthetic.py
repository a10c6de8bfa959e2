"""Deterministic toy visual-dialog worlds.

Each image is a scene of distinct objects with a colour and a position.
Detector features are noisy sums of per-object, per-colour and
per-position prototype vectors.  Every object has two commonsense facts
(``AtLocation`` and ``UsedFor``) in the triple store, along with filler
facts about objects that never appear in scenes.

Questions come in three kinds:

* ``vision``: colour of a named object, or whether an object is present;
* ``history``: "what color is it?" where "it" is the object named in the
  previous round's answer;
* ``commonsense``: where an object is usually found, or what it is used
  for; answerable only through the triple store.

Objects are split into two groups that share every location and use word.
Commonsense questions can be restricted to one group, so a model trained
on group ``A`` can be tested on group ``B`` objects whose answers were
never paired with them in training dialogs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import DialogInstance, ImageFeatures, Round, save_dataset, save_features
from .knowledge import FactTriple, save_triple_store

SAFE_ANSWER = "not sure"

_PAIRS = (
    ("plane", "helicopter", "airport", "flying"),
    ("car", "truck", "road", "driving"),
    ("boat", "ship", "ocean", "sailing"),
    ("cow", "sheep", "farm", "farming"),
    ("zebra", "giraffe", "africa", "safari"),
    ("oven", "fridge", "kitchen", "cooking"),
    ("bed", "pillow", "bedroom", "sleeping"),
    ("train", "tram", "station", "commuting"),
    ("surfboard", "umbrella", "beach", "surfing"),
    ("bench", "kite", "park", "resting"),
    ("laptop", "keyboard", "office", "working"),
)

_FILLER = (
    ("tree", "AtLocation", "forest"),
    ("cloud", "AtLocation", "sky"),
    ("fish", "AtLocation", "river"),
    ("book", "UsedFor", "reading"),
    ("cup", "UsedFor", "drinking"),
    ("ball", "UsedFor", "playing"),
    ("lamp", "UsedFor", "lighting"),
    ("chair", "UsedFor", "sitting"),
    ("tent", "AtLocation", "campsite"),
    ("piano", "UsedFor", "music"),
)


@dataclass
class VocabSpec:
    objects: dict[str, tuple[str, str, str]] = field(default_factory=dict)  # name -> (location, use, group)
    colors: tuple[str, ...] = ("red", "blue", "green", "white", "black", "brown", "yellow", "gray", "orange", "pink")
    positions: tuple[str, ...] = ("left", "right", "middle", "front", "back")
    filler_facts: tuple[tuple[str, str, str], ...] = _FILLER

    def __post_init__(self):
        if not self.objects:
            for a, b, loc, use in _PAIRS:
                self.objects[a] = (loc, use, "A")
                self.objects[b] = (loc, use, "B")

    @property
    def locations(self) -> list[str]:
        return sorted({v[0] for v in self.objects.values()})

    @property
    def uses(self) -> list[str]:
        return sorted({v[1] for v in self.objects.values()})

    @classmethod
    def generated(cls, n_objects: int, seed: int = 0) -> "VocabSpec":
        """A large inventory of made-up object names (``bakot``, ``zimul``, ...).

        Locations and uses are the real words of the default spec, assigned
        at random; groups alternate ``A``/``B``.  With thousands of objects a
        model cannot get far by memorising which object goes where.
        """
        if n_objects < 2:
            raise ValueError("need at least two generated objects")
        rng = np.random.default_rng(seed)
        cons, vow = "bdfgklmnprstvz", "aeiou"
        names: list[str] = []
        seen: set[str] = set()
        while len(names) < n_objects:
            c = rng.integers(len(cons), size=3)
            v = rng.integers(len(vow), size=2)
            name = cons[c[0]] + vow[v[0]] + cons[c[1]] + vow[v[1]] + cons[c[2]]
            if name not in seen:
                seen.add(name)
                names.append(name)
        locs = sorted({p[2] for p in _PAIRS})
        uses = sorted({p[3] for p in _PAIRS})
        objects = {
            n: (locs[int(rng.integers(len(locs)))], uses[int(rng.integers(len(uses)))], "AB"[i % 2])
            for i, n in enumerate(names)
        }
        return cls(objects=objects)

    def group(self, name: str) -> list[str]:
        return [o for o, v in self.objects.items() if v[2] == name]

    def validate(self, n_objects: int) -> None:
        if len(self.objects) < max(2, n_objects):
            raise ValueError(f"vocab spec has {len(self.objects)} objects; need at least {max(2, n_objects)}")
        if len(self.colors) < 2:
            raise ValueError("vocab spec needs at least two colours")
        if len(self.positions) < n_objects:
            raise ValueError(f"vocab spec has {len(self.positions)} positions for {n_objects} objects")
        if len(self.locations) < 2 or len(self.uses) < 2:
            raise ValueError("vocab spec needs at least two locations and two uses")

    def triples(self) -> list[FactTriple]:
        out = []
        for o, (loc, use, _) in self.objects.items():
            out.append(FactTriple(o, "AtLocation", loc))
            out.append(FactTriple(o, "UsedFor", use))
        out.extend(FactTriple(*t) for t in self.filler_facts)
        return out


@dataclass
class SyntheticDataset:
    instances: list[DialogInstance]
    triples: list[FactTriple]
    features: dict[str, ImageFeatures]
    spec: VocabSpec

    def write(self, out_dir: str | Path, features_name: str = "features.bin") -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "dataset": out / "dialogs.jsonl",
            "triples": out / "triples.tsv",
            "features": out / features_name,
        }
        save_dataset(paths["dataset"], self.instances)
        save_triple_store(paths["triples"], self.triples)
        save_features(paths["features"], self.features)
        return paths


@dataclass
class _Scene:
    objects: list[str]
    colors: dict[str, str]
    positions: dict[str, str]


def _prototypes(names: Sequence[str], d: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    out = {}
    for n in names:
        v = rng.standard_normal(d)
        out[n] = v / np.linalg.norm(v)
    return out


def generate_synthetic_dataset(
    seed: int,
    n_images: int,
    n_rounds: int = 10,
    n_candidates: int = 100,
    n_objects: int = 4,
    vocab_spec: VocabSpec | None = None,
    d_v: int = 32,
    kind_ratios: tuple[float, float, float] = (0.4, 0.3, 0.3),
    commonsense_group: str | None = None,
    world_seed: int = 0,
    id_prefix: str | None = None,
) -> SyntheticDataset:
    """One dialog instance per image: ``n_rounds - 1`` history rounds plus the
    current question.

    ``world_seed`` fixes the visual prototypes so that separately generated
    splits share one world; ``seed`` drives scenes and dialogs.
    """
    for name, val in (("n_images", n_images), ("n_rounds", n_rounds), ("n_candidates", n_candidates), ("n_objects", n_objects), ("d_v", d_v)):
        if val < 1:
            raise ValueError(f"{name} must be >= 1")
    spec = vocab_spec or VocabSpec()
    spec.validate(n_objects)
    ratios = np.asarray(kind_ratios, dtype=np.float64)
    if ratios.shape != (3,) or (ratios < 0).any() or ratios.sum() <= 0:
        raise ValueError("kind_ratios must be three non-negative weights")
    ratios = ratios / ratios.sum()
    cs_pool = list(spec.objects) if commonsense_group is None else spec.group(commonsense_group)
    if ratios[2] > 0 and not cs_pool:
        raise ValueError(f"no objects in commonsense group {commonsense_group!r}")

    wrng = np.random.default_rng(world_seed)
    obj_proto = _prototypes(sorted(spec.objects), d_v, wrng)
    col_proto = _prototypes(spec.colors, d_v, wrng)
    pos_proto = _prototypes(spec.positions, d_v, wrng)

    rng = np.random.default_rng(seed)
    prefix = id_prefix if id_prefix is not None else f"syn{seed}"
    all_objects = sorted(spec.objects)
    pools = {
        "color": list(spec.colors),
        "yesno": ["yes", "no"],
        "location": spec.locations,
        "use": spec.uses,
        "object": [f"a {o}" for o in all_objects],
    }
    general = sorted(
        set(pools["color"] + pools["yesno"] + pools["location"] + pools["use"] + pools["object"])
        | {f"a {c} {o}" for c in spec.colors for o in all_objects}
    )
    general_set = set(general)

    instances: list[DialogInstance] = []
    features: dict[str, ImageFeatures] = {}
    for i in range(n_images):
        kind = ["vision", "history", "commonsense"][int(rng.choice(3, p=ratios))]
        if kind == "history" and n_rounds < 2:
            kind = "vision"
        objs = list(rng.choice(all_objects, size=n_objects, replace=False))
        if kind == "commonsense" and not set(objs) & set(cs_pool):
            objs[int(rng.integers(n_objects))] = str(rng.choice(sorted(set(cs_pool) - set(objs))))
        objs = [str(o) for o in objs]
        scene = _Scene(
            objs,
            {o: str(rng.choice(spec.colors)) for o in objs},
            dict(zip(objs, (str(p) for p in rng.choice(spec.positions, size=n_objects, replace=False)))),
        )
        image_id = f"{prefix}-{i:05d}"
        feats = np.stack(
            [
                obj_proto[o] + 0.5 * col_proto[scene.colors[o]] + 0.3 * pos_proto[scene.positions[o]] + 0.05 * rng.standard_normal(d_v)
                for o in objs
            ]
        )
        features[image_id] = ImageFeatures(feats, list(objs))

        if len(objs) >= 2:
            caption = f"a {scene.colors[objs[0]]} {objs[0]} next to a {scene.colors[objs[1]]} {objs[1]}"
        else:
            caption = f"a {scene.colors[objs[0]]} {objs[0]}"

        history = [_history_round(scene, all_objects, rng) for _ in range(n_rounds - 1)]
        entailed: set[str] = set()
        if kind == "vision":
            if rng.random() < 0.5:
                o = str(rng.choice(objs))
                question, answer, atype = f"what color is the {o}?", scene.colors[o], "color"
            else:
                present = rng.random() < 0.5
                o = str(rng.choice(objs if present else sorted(set(all_objects) - set(objs))))
                question, answer, atype = f"is there a {o} in the picture?", "yes" if present else "no", "yesno"
        elif kind == "history":
            o = str(rng.choice(objs))
            history[-1] = Round(f"what is on the {scene.positions[o]}?", f"a {o}")
            question, answer, atype = "what color is it?", scene.colors[o], "color"
        else:
            o = str(rng.choice(sorted(set(objs) & set(cs_pool))))
            loc, use, _ = spec.objects[o]
            entailed = {spec.objects[x][0] for x in objs} | {spec.objects[x][1] for x in objs}
            if rng.random() < 0.5:
                question, answer, atype = f"where is the {o} usually found?", loc, "location"
            else:
                question, answer, atype = f"what is the {o} used for?", use, "use"

        cands = _candidates(answer, atype, pools, general, general_set, entailed, n_candidates, rng)
        order = rng.permutation(len(cands))
        cands = [cands[j] for j in order]
        relevance = [1.0 if c == answer else (0.5 if c == SAFE_ANSWER else 0.0) for c in cands]
        instances.append(
            DialogInstance(image_id, caption, history, question, cands, cands.index(answer), relevance, kind)
        )
    return SyntheticDataset(instances, spec.triples(), features, spec)


def _history_round(scene: _Scene, all_objects: list[str], rng: np.random.Generator) -> Round:
    r = rng.random()
    o = str(rng.choice(scene.objects))
    if r < 0.4:
        return Round(f"what color is the {o}?", scene.colors[o])
    if r < 0.7:
        return Round(f"what is on the {scene.positions[o]}?", f"a {o}")
    present = rng.random() < 0.5
    if not present:
        o = str(rng.choice(sorted(set(all_objects) - set(scene.objects))))
    return Round(f"is there a {o} in the picture?", "yes" if present else "no")


def _candidates(answer, atype, pools, general, general_set, entailed, n, rng) -> list[str]:
    out = [answer]
    if n >= 2:
        out.append(SAFE_ANSWER)
    banned = set(out) | (entailed - {answer})
    same = [c for c in pools[atype] if c not in banned]
    n_same = min(len(same), max(1, (n - len(out)) // 2), n - len(out))
    if n_same > 0:
        out.extend(str(c) for c in rng.choice(same, size=n_same, replace=False))
    banned |= set(out)
    need = n - len(out)
    if need > len(general) - len(banned & general_set):
        raise ValueError(f"answer pool too small for {n} candidates")
    # rejection sampling keeps this cheap for very large pools
    while need > 0:
        c = general[int(rng.integers(len(general)))]
        if c not in banned:
            out.append(c)
            banned.add(c)
            need -= 1
    return out


def split_commonsense_heldout(
    seed: int,
    n_train: int,
    n_heldout: int,
    **kwargs,
) -> tuple[SyntheticDataset, SyntheticDataset]:
    """Training split whose commonsense questions only ask about group ``A``
    objects, and a held-out split of commonsense questions about group ``B``.

    Both splits share one world (prototypes and triple store).
    """
    train_ratios = kwargs.pop("kind_ratios", (0.4, 0.3, 0.3))
    train = generate_synthetic_dataset(
        seed, n_train, kind_ratios=train_ratios, commonsense_group="A", id_prefix=f"train{seed}", **kwargs
    )
    heldout = generate_synthetic_dataset(
        seed + 7919, n_heldout, kind_ratios=(0.0, 0.0, 1.0), commonsense_group="B", id_prefix=f"heldout{seed}", **kwargs
    )
    return train, heldout
