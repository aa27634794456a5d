"""Synthetic compositional benchmark and its metrics.

Each scene holds ``N_o`` objects with distinct classes; each object carries
one attribute.  A question names a class, the answer is that object's
attribute.  Some (class, attribute) compositions never occur in training,
some occur rarely; the OOD test asks exactly about those.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .concepts import SceneSpec
from .errors import ConfigError, ContractError
from .numerics import RngState
from .toy_vqa import VqaExample

# substream ids under the dataset seed
_HOLDOUT_STREAM, _RARE_STREAM, _TRAIN_STREAM, _ID_STREAM, _OOD_STREAM = range(5)

SPLIT_NAMES = ("train", "id_test", "ood_test")


@dataclass(frozen=True)
class DatasetConfig:
    num_classes: int = 8
    num_attributes: int = 8
    N_o: int = 8
    train_size: int = 2000
    id_test_size: int = 500
    ood_test_size: int = 500
    holdout_fraction: float = 0.2
    rare_fraction: float = 0.1
    rare_weight: float = 0.05
    tail_quantile: float = 0.2
    sort_objects: bool = False
    seed: int = 0

    def validate(self) -> None:
        if self.num_classes < 2 or self.num_attributes < 2:
            raise ConfigError("need at least 2 classes and 2 attributes")
        if not 2 <= self.N_o <= self.num_classes:
            raise ConfigError("N_o must lie in [2, num_classes] (classes are distinct per scene)")
        if min(self.train_size, self.id_test_size, self.ood_test_size) < 1:
            raise ConfigError("split sizes must be >= 1")
        if not 0 < self.holdout_fraction < 1 or self.rare_fraction < 0:
            raise ConfigError("holdout_fraction must be in (0, 1), rare_fraction >= 0")
        if self.holdout_fraction + self.rare_fraction >= 1:
            raise ConfigError("holdout_fraction + rare_fraction must be < 1")
        if not 0 < self.rare_weight <= 1 or not 0 < self.tail_quantile < 1:
            raise ConfigError("rare_weight must be in (0, 1], tail_quantile in (0, 1)")


@dataclass
class SyntheticSplit:
    train: list[VqaExample]
    id_test: list[VqaExample]
    ood_test: list[VqaExample]
    composition_freq: dict[tuple[int, int], int]
    held_out: list[tuple[int, int]] = field(default_factory=list)
    rare: list[tuple[int, int]] = field(default_factory=list)

    def splits(self) -> dict[str, list[VqaExample]]:
        return {"train": self.train, "id_test": self.id_test, "ood_test": self.ood_test}


def count_compositions(examples: Sequence[VqaExample], num_classes: int,
                       num_attributes: int) -> dict[tuple[int, int], int]:
    """Train frequency of each queried (class, answer) composition, zeros included."""
    freq = {(c, a): 0 for c in range(num_classes) for a in range(num_attributes)}
    for ex in examples:
        freq[(ex.question, ex.answer)] += 1
    return freq


def _select(order, count, allowed_per_class, skip_if_last):
    chosen = []
    for c, a in order:
        if len(chosen) == count:
            break
        if skip_if_last and allowed_per_class[c] <= 1:
            continue
        chosen.append((c, a))
        allowed_per_class[c] -= 1
    return chosen


def generate_dataset(cfg: DatasetConfig) -> SyntheticSplit:
    cfg.validate()
    C, A = cfg.num_classes, cfg.num_attributes
    comps = [(c, a) for c in range(C) for a in range(A)]
    n_hold = max(1, round(cfg.holdout_fraction * C * A))
    n_rare = round(cfg.rare_fraction * C * A)
    if n_hold > C * (A - 1):
        raise ConfigError("every composition of some class would be held out")

    # held-out set: a prefix of a fixed permutation, so larger fractions nest
    perm = RngState(cfg.seed, _HOLDOUT_STREAM).generator().permutation(len(comps))
    per_class = {c: A for c in range(C)}
    held_out = _select([comps[i] for i in perm], n_hold, per_class, skip_if_last=True)
    if len(held_out) < n_hold:
        raise ConfigError("holdout fraction is infeasible")
    held = set(held_out)
    remaining = [comp for comp in comps if comp not in held]
    perm = RngState(cfg.seed, _RARE_STREAM).generator().permutation(len(remaining))
    rare = sorted(remaining[i] for i in perm[:n_rare])
    held_out = sorted(held_out)

    weights = np.ones((C, A))
    for c, a in held_out:
        weights[c, a] = 0.0
    for c, a in rare:
        weights[c, a] = cfg.rare_weight
    probs = weights / weights.sum(axis=1, keepdims=True)

    def scene_for(gen, classes):
        return [(int(c), int(gen.choice(A, p=probs[c]))) for c in classes]

    def in_distribution(stream, size):
        gen = RngState(cfg.seed, stream).generator()
        out = []
        for _ in range(size):
            classes = gen.choice(C, size=cfg.N_o, replace=False)
            if cfg.sort_objects:
                classes = np.sort(classes)
            objects = scene_for(gen, classes)
            qc, qa = objects[int(gen.integers(cfg.N_o))]
            out.append(VqaExample(SceneSpec(tuple(objects)), qc, qa))
        return out

    train = in_distribution(_TRAIN_STREAM, cfg.train_size)
    id_test = in_distribution(_ID_STREAM, cfg.id_test_size)

    targets = held_out + rare
    gen = RngState(cfg.seed, _OOD_STREAM).generator()
    ood = []
    for _ in range(cfg.ood_test_size):
        tc, ta = targets[int(gen.integers(len(targets)))]
        others = gen.choice([c for c in range(C) if c != tc], size=cfg.N_o - 1, replace=False)
        objects = scene_for(gen, others)
        objects.insert(int(gen.integers(cfg.N_o)), (tc, ta))
        if cfg.sort_objects:
            objects.sort()
        ood.append(VqaExample(SceneSpec(tuple(objects)), tc, ta))

    freq = count_compositions(train, C, A)
    return SyntheticSplit(train, id_test, ood, freq, held_out, rare)


# ---------------------------------------------------------------------------
# serialization


def atomic_write(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def examples_to_jsonl(examples: Sequence[VqaExample]) -> str:
    return "".join(json.dumps(ex.to_dict(), separators=(",", ":")) + "\n" for ex in examples)


def examples_from_jsonl(text: str) -> list[VqaExample]:
    return [VqaExample.from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]


def write_split(split: SyntheticSplit, out_dir, cfg: DatasetConfig) -> None:
    out_dir = Path(out_dir)
    for name, examples in split.splits().items():
        atomic_write(out_dir / f"{name}.jsonl", examples_to_jsonl(examples))
    meta = {
        "config": asdict(cfg),
        "counts": [[c, a, n] for (c, a), n in sorted(split.composition_freq.items())],
        "held_out": [list(x) for x in split.held_out],
        "rare": [list(x) for x in split.rare],
    }
    atomic_write(out_dir / "freq.json", json.dumps(meta, indent=1, sort_keys=True) + "\n")


def read_split(out_dir) -> tuple[SyntheticSplit, DatasetConfig]:
    out_dir = Path(out_dir)
    parts = {name: examples_from_jsonl((out_dir / f"{name}.jsonl").read_text(encoding="utf-8"))
             for name in SPLIT_NAMES}
    meta = json.loads((out_dir / "freq.json").read_text(encoding="utf-8"))
    freq = {(c, a): n for c, a, n in meta["counts"]}
    split = SyntheticSplit(parts["train"], parts["id_test"], parts["ood_test"], freq,
                           [tuple(x) for x in meta["held_out"]], [tuple(x) for x in meta["rare"]])
    return split, DatasetConfig(**meta["config"])


# ---------------------------------------------------------------------------
# metrics


@dataclass
class Metrics:
    all: float
    tail: float | None
    head: float | None
    delta: float | None  # None when there is no tail group or tail accuracy is 0
    gap: float | None = None
    n: int = 0
    n_tail: int = 0
    n_head: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(**d)


CSV_FIELDS = ("all", "tail", "head", "delta", "gap")


def relative_imbalance(head: float, tail: float) -> float | None:
    """``(head - tail) / tail`` in percent; undefined for tail accuracy 0."""
    if tail is None or head is None or tail == 0:
        return None
    return (head - tail) / tail * 100.0


def id_ood_gap(id_acc: float, ood_acc: float) -> float:
    return id_acc - ood_acc


def tail_mask(split: Sequence[VqaExample], freq: dict[tuple[int, int], int],
              tail_quantile: float = 0.2) -> np.ndarray:
    """Tail iff the composition count sits in the lowest quantile of its question group."""
    groups: dict[int, list[int]] = {}
    for (c, _), n in freq.items():
        groups.setdefault(c, []).append(n)
    thresholds = {c: float(np.quantile(np.array(v, dtype=float), tail_quantile))
                  for c, v in groups.items()}
    return np.array([freq.get((ex.question, ex.answer), 0) <= thresholds.get(ex.question, -math.inf)
                     for ex in split], dtype=bool)


def compute_metrics(predictions, split: Sequence[VqaExample], freq: dict[tuple[int, int], int],
                    tail_quantile: float = 0.2) -> Metrics:
    preds = np.asarray(predictions)
    if len(preds) != len(split):
        raise ContractError(f"{len(preds)} predictions for {len(split)} examples")
    if len(split) == 0:
        raise ContractError("cannot score an empty split")
    correct = preds == np.array([ex.answer for ex in split])
    tail = tail_mask(split, freq, tail_quantile)

    def acc(mask):
        return float(correct[mask].mean() * 100.0) if mask.any() else None

    tail_acc, head_acc = acc(tail), acc(~tail)
    return Metrics(
        all=float(correct.mean() * 100.0),
        tail=tail_acc,
        head=head_acc,
        delta=relative_imbalance(head_acc, tail_acc),
        n=len(split),
        n_tail=int(tail.sum()),
        n_head=int((~tail).sum()),
    )


def with_gap(id_metrics: Metrics, ood_metrics: Metrics) -> tuple[Metrics, Metrics]:
    gap = id_ood_gap(id_metrics.all, ood_metrics.all)
    id_metrics.gap = gap
    ood_metrics.gap = gap
    return id_metrics, ood_metrics


def metrics_csv_row(label: str, m: Metrics) -> list:
    return [label] + ["" if getattr(m, f) is None else getattr(m, f) for f in CSV_FIELDS]
