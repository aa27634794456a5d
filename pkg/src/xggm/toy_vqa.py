"""A small VQA model split into a representation part and an answer classifier.

The representation part encodes every object from its class and attribute
embeddings and fuses the pooled objects with the question; the classifier is
a single affine map over the fused vector (optionally plus a graph readout).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .concepts import ConceptVocabulary, SceneSpec
from .errors import ConfigError, ContractError

BCE_CLAMP = 1e-12


@dataclass(frozen=True)
class VqaExample:
    scene: SceneSpec
    question: int  # queried class id
    answer: int  # attribute id of the queried object

    def validate(self) -> None:
        hits = [a for c, a in self.scene.objects if c == self.question]
        if len(hits) != 1:
            raise ContractError(f"queried class {self.question} must appear exactly once in the scene")
        if hits[0] != self.answer:
            raise ContractError("answer does not match the queried object's attribute")

    def to_dict(self) -> dict:
        return {"scene": [list(o) for o in self.scene.objects], "q": self.question, "answer": self.answer}

    @classmethod
    def from_dict(cls, d: dict) -> "VqaExample":
        return cls(SceneSpec(tuple(tuple(o) for o in d["scene"])), int(d["q"]), int(d["answer"]))


@dataclass(frozen=True)
class Batch:
    classes: np.ndarray  # (B, N_o)
    attributes: np.ndarray  # (B, N_o)
    questions: np.ndarray  # (B,)
    answers: np.ndarray  # (B,)

    @classmethod
    def from_examples(cls, examples: Sequence[VqaExample]) -> "Batch":
        if not examples:
            raise ContractError("empty batch")
        n = {ex.scene.num_objects for ex in examples}
        if len(n) != 1:
            raise ContractError("all scenes in a batch need the same number of objects")
        return cls(
            classes=np.array([ex.scene.classes for ex in examples]),
            attributes=np.array([ex.scene.attributes for ex in examples]),
            questions=np.array([ex.question for ex in examples], dtype=np.int64),
            answers=np.array([ex.answer for ex in examples], dtype=np.int64),
        )

    def __len__(self):
        return len(self.questions)

    @property
    def num_objects(self) -> int:
        return self.classes.shape[1]


def init_vqa_params(rng, embed_dim: int, d: int, num_answers: int) -> dict[str, np.ndarray]:
    gen = nx.as_generator(rng)

    def w(fan_in, fan_out):
        return gen.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

    return {
        "vqa.obj.W": w(2 * embed_dim, d),
        "vqa.obj.b": np.zeros(d),
        "vqa.q.W": w(embed_dim, d),
        "vqa.q.b": np.zeros(d),
        "vqa.fuse.W": w(d, d),
        "vqa.fuse.b": np.zeros(d),
        "vqa.cls.W": w(d, num_answers),
        "vqa.cls.b": np.zeros(num_answers),
    }


def _as_batch(examples) -> tuple[Batch, bool]:
    if isinstance(examples, Batch):
        return examples, False
    if isinstance(examples, VqaExample):
        return Batch.from_examples([examples]), True
    return Batch.from_examples(list(examples)), False


def vqa_r_forward(params, examples, vocab: ConceptVocabulary, rng=None, feature_noise: float = 0.0):
    """Cross-modality vector ``x`` and object features ``O``.

    Accepts one :class:`VqaExample` (returns shapes (d,) and (N_o, d)) or a
    batch (leading batch axis on both outputs).
    """
    batch, single = _as_batch(examples)
    d_in = nx.value(params["vqa.obj.W"]).shape[0]
    if d_in != 2 * vocab.embed_dim:
        raise ConfigError(f"object encoder expects {d_in} inputs, vocabulary gives {2 * vocab.embed_dim}")
    obj_in = np.concatenate(
        [vocab.class_table[batch.classes], vocab.attribute_table[batch.attributes]], axis=-1)
    pre = obj_in @ params["vqa.obj.W"] + params["vqa.obj.b"]
    if feature_noise > 0:
        if rng is None:
            raise ContractError("feature noise requested without a random stream")
        pre = pre + nx.gaussian(rng, nx.value(pre).shape, 0.0, feature_noise)
    objects = nx.relu(pre)
    q_emb = vocab.class_table[batch.questions]
    pooled = nx.mean(objects, axis=-2) + (q_emb @ params["vqa.q.W"] + params["vqa.q.b"])
    x = nx.relu(pooled @ params["vqa.fuse.W"] + params["vqa.fuse.b"])
    if single:
        return nx.reshape(x, nx.value(x).shape[1:]), nx.reshape(objects, nx.value(objects).shape[1:])
    return x, objects


def vqa_c_forward(params, x, vbar=None):
    """Answer logits ``W (x + vbar) + b``; without ``vbar`` the classifier sees ``x``."""
    w = params["vqa.cls.W"]
    if nx.value(x).shape[-1] != nx.value(w).shape[0]:
        raise ConfigError(f"classifier expects dimension {nx.value(w).shape[0]}")
    h = x
    if vbar is not None:
        if nx.value(vbar).shape != nx.value(x).shape:
            raise ConfigError(f"readout shape {nx.value(vbar).shape} != {nx.value(x).shape}")
        h = x + vbar
    return h @ w + params["vqa.cls.b"]


def one_hot(answers, num_answers: int) -> np.ndarray:
    answers = np.asarray(answers)
    out = np.zeros(answers.shape + (num_answers,))
    np.put_along_axis(out, answers[..., None], 1.0, axis=-1)
    return out


def bce_loss(logits, target):
    """Mean binary cross-entropy over answer slots (and over the batch)."""
    t = np.asarray(target, dtype=np.float64)
    if nx.value(logits).shape != t.shape:
        raise ContractError(f"logits {nx.value(logits).shape} vs target {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ContractError("targets must be 0 or 1")
    p = nx.clip(nx.sigmoid(logits), BCE_CLAMP, 1.0 - BCE_CLAMP)
    ll = t * nx.log(p) + (1.0 - t) * nx.log(1.0 - p)
    return -nx.mean(ll)


def predict(params, batch: Batch, vocab: ConceptVocabulary, rng=None, feature_noise: float = 0.0) -> np.ndarray:
    x, _ = vqa_r_forward(params, batch, vocab, rng, feature_noise)
    return np.argmax(vqa_c_forward(params, x), axis=-1)
