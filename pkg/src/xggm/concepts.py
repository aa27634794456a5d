"""Concept vocabulary, pseudo-embeddings, and ground-truth relation matrices."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError

KIND_CODES = {"class": 0, "attribute": 1}


@dataclass(frozen=True)
class ConceptVocabulary:
    num_classes: int
    num_attributes: int
    embed_dim: int = 16
    embed_seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.num_attributes < 2:
            raise ConfigError("need at least 2 classes and 2 attributes")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be positive")

    def embed(self, kind: str, idx: int) -> np.ndarray:
        """Unit-norm pseudo-embedding, a pure function of (embed_seed, kind, idx)."""
        if kind not in KIND_CODES:
            raise ContractError(f"unknown concept kind {kind!r}")
        bound = self.num_classes if kind == "class" else self.num_attributes
        if not 0 <= idx < bound:
            raise IndexError(f"{kind} id {idx} out of range [0, {bound})")
        seq = np.random.SeedSequence([self.embed_seed, KIND_CODES[kind], idx])
        v = np.random.default_rng(seq).standard_normal(self.embed_dim)
        return v / np.linalg.norm(v)

    @cached_property
    def class_table(self) -> np.ndarray:
        return np.stack([self.embed("class", i) for i in range(self.num_classes)])

    @cached_property
    def attribute_table(self) -> np.ndarray:
        return np.stack([self.embed("attribute", i) for i in range(self.num_attributes)])

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ConceptVocabulary":
        return cls(**json.loads(text))


def embed_concept(vocab: ConceptVocabulary, kind: str, idx: int) -> np.ndarray:
    return vocab.embed(kind, idx)


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple((int(c), int(a)) for c, a in self.objects))

    @property
    def num_objects(self) -> int:
        return len(self.objects)

    @property
    def classes(self) -> np.ndarray:
        return np.array([c for c, _ in self.objects], dtype=np.int64)

    @property
    def attributes(self) -> np.ndarray:
        return np.array([a for _, a in self.objects], dtype=np.int64)

    def validate(self, vocab: ConceptVocabulary) -> None:
        if self.num_objects < 2:
            raise ContractError("a scene needs at least 2 objects")
        for c, a in self.objects:
            if not (0 <= c < vocab.num_classes and 0 <= a < vocab.num_attributes):
                raise ContractError(f"object ({c}, {a}) outside the vocabulary")


def gt_relations(classes: np.ndarray, attributes: np.ndarray, vocab: ConceptVocabulary) -> np.ndarray:
    """Batched ground-truth relations for id arrays of shape (..., N_o)."""
    c = vocab.class_table[classes]
    a = vocab.attribute_table[attributes]
    cos = c @ np.swapaxes(a, -1, -2)  # cos[i, j] = <c_i, a_j>
    r = ((cos + np.swapaxes(cos, -1, -2)) / 2.0 + 1.0) / 2.0
    r = np.clip(r, 0.0, 1.0)
    n = r.shape[-1]
    r[..., np.arange(n), np.arange(n)] = 1.0
    return r


def build_gt_relation(scene: SceneSpec, vocab: ConceptVocabulary) -> np.ndarray:
    """R_GT for one scene: symmetrized class/attribute cosine mapped onto [0, 1]."""
    scene.validate(vocab)
    return gt_relations(scene.classes, scene.attributes, vocab)


def node_gt_features(objects: Sequence | np.ndarray):
    """The object features themselves are the node targets (row i is object i)."""
    return objects
