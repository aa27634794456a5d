"""Registered finite-difference checks: every tape primitive plus both branch losses.

Core cases run at tolerance 1e-4, composite losses at 1e-3.  The CLI
``gradcheck`` command and the test suite share this registry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np

from . import numerics as nx
from .concepts import ConceptVocabulary, SceneSpec
from .toy_vqa import Batch, VqaExample

CORE_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class GradCase:
    name: str
    kind: str  # "core" or "composite"
    f: Callable
    theta: dict

    @property
    def tolerance(self) -> float:
        return CORE_TOL if self.kind == "core" else COMPOSITE_TOL


@dataclass
class CaseResult:
    name: str
    kind: str
    errors: dict[str, float]
    tolerance: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error <= self.tolerance


def core_cases(seed: int = 0) -> Iterator[GradCase]:
    rng = np.random.default_rng(seed)

    def pos(*s):
        return rng.uniform(0.5, 2.0, s)

    def away_from_zero(*s):
        return rng.choice([-1, 1], s) * rng.uniform(0.1, 1, s)

    specs = [
        ("add", lambda p: nx.sum_(nx.sigmoid(p["a"] + p["b"])),
         {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(4)}),
        ("sub", lambda p: nx.sum_(nx.square(p["a"] - p["b"])),
         {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((1, 3))}),
        ("mul", lambda p: nx.sum_(p["a"] * p["b"]),
         {"a": rng.standard_normal((3, 3)), "b": rng.standard_normal((3, 1))}),
        ("div", lambda p: nx.sum_(p["a"] / p["b"]), {"a": rng.standard_normal((2, 5)), "b": pos(5)}),
        ("neg_scale", lambda p: nx.sum_(nx.sigmoid(nx.scale(-p["a"], 1.7))), {"a": rng.standard_normal(4)}),
        ("square", lambda p: nx.sum_(nx.square(p["a"])), {"a": rng.standard_normal((2, 3))}),
        ("sigmoid", lambda p: nx.sum_(nx.sigmoid(p["a"])), {"a": rng.standard_normal((4, 2)) * 3}),
        ("relu", lambda p: nx.sum_(nx.square(nx.relu(p["a"]))), {"a": away_from_zero(3, 4)}),
        ("exp_log", lambda p: nx.sum_(nx.log(nx.exp(p["a"]) + 1.0)), {"a": rng.standard_normal(3)}),
        ("abs", lambda p: nx.sum_(nx.absolute(p["a"])), {"a": away_from_zero(6)}),
        ("clip", lambda p: nx.sum_(nx.square(nx.clip(p["a"], -0.5, 0.5))),
         {"a": np.array([-0.9, -0.2, 0.1, 0.3, 0.8])}),
        ("maximum", lambda p: nx.sum_(nx.square(nx.maximum(p["a"], 0.0))),
         {"a": np.array([-0.9, -0.2, 0.1, 0.3])}),
        ("mean_axis", lambda p: nx.sum_(nx.square(nx.mean(p["a"], axis=-2))), {"a": rng.standard_normal((2, 3, 4))}),
        ("sum_keepdims", lambda p: nx.sum_(nx.sigmoid(nx.sum_(p["a"], axis=-1, keepdims=True))),
         {"a": rng.standard_normal((3, 4))}),
        ("sum_of_squares", lambda p: nx.sum_of_squares(p["a"]), {"a": rng.standard_normal((3, 2))}),
        ("reshape_transpose", lambda p: nx.sum_(nx.sigmoid(nx.transpose(nx.reshape(p["a"], (2, 3))) @ p["b"])),
         {"a": rng.standard_normal(6), "b": rng.standard_normal((2, 2))}),
        ("expand_concat", lambda p: nx.sum_(nx.square(nx.concat([nx.expand_dims(p["a"], 0), p["b"]], axis=0))),
         {"a": rng.standard_normal(3), "b": rng.standard_normal((2, 3))}),
        ("matmul", lambda p: nx.sum_(nx.sigmoid(p["a"] @ p["b"])),
         {"a": rng.standard_normal((2, 3, 4)), "b": rng.standard_normal((4, 5))}),
        ("matmul_vector", lambda p: nx.sum_(nx.sigmoid(p["a"] @ p["b"])),
         {"a": rng.standard_normal(4), "b": rng.standard_normal((4, 3))}),
        ("node_matmul", lambda p: nx.sum_(nx.sigmoid(nx.node_matmul(p["x"], p["w"]))),
         {"x": rng.standard_normal((2, 4, 3)), "w": rng.standard_normal((4, 3, 5))}),
        ("pack_unpack", lambda p: nx.sum_(nx.sigmoid(nx.unpack_upper(nx.pack_upper(p["r"]) * 2.0, 4) @ p["v"])),
         {"r": rng.standard_normal((4, 4)), "v": rng.standard_normal((4, 2))}),
    ]
    for name, f, theta in specs:
        yield GradCase(name, "core", f, theta)


def _tiny_setup(seed: int):
    # imported here: trainer pulls in the whole stack
    from .trainer import TrainConfig, init_params

    cfg = TrainConfig(N_o=4, d=6, embed_dim=6, N_k=2, N_l=2, sigma=0.5, feature_noise=0.1, seed=seed)
    vocab = ConceptVocabulary(5, 4, cfg.embed_dim, seed)
    rng = np.random.default_rng(seed)
    examples = []
    for _ in range(3):
        classes = rng.permutation(5)[:4]
        attrs = rng.integers(4, size=4)
        q = int(rng.integers(4))
        examples.append(VqaExample(SceneSpec(tuple(zip(classes.tolist(), attrs.tolist()))),
                                   int(classes[q]), int(attrs[q])))
    params = init_params(cfg, vocab)
    # nonzero biases so no path is trivially flat
    for name, v in params.items():
        if name.rsplit(".", 1)[1].startswith("b"):
            params[name] = rng.standard_normal(v.shape) * 0.1
    return cfg, vocab, Batch.from_examples(examples), params


def composite_cases(seed: int = 0) -> Iterator[GradCase]:
    from .trainer import node_branch, relation_branch

    cfg, vocab, batch, params = _tiny_setup(seed)
    for name, fwd in (("relation_branch_loss", relation_branch), ("node_branch_loss", node_branch)):
        def f(p, fwd=fwd):
            total, _, _ = fwd(p, batch, cfg, vocab, nx.RngState(seed, 99).generator())
            return total

        yield GradCase(name, "composite", f, params)


def all_cases(seed: int = 0) -> list[GradCase]:
    return list(core_cases(seed)) + list(composite_cases(seed))


def corrupt_gradients(grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Test hook: shift every analytic gradient by one."""
    return {k: v + 1.0 for k, v in grads.items()}


def run_case(case: GradCase, h: float = 1e-5, corrupt: bool = False) -> CaseResult:
    hook = corrupt_gradients if corrupt else None
    errors = nx.grad_check_report(case.f, case.theta, h, analytic_hook=hook)
    return CaseResult(case.name, case.kind, errors, case.tolerance)


def run_suite(seed: int = 0, corrupt: bool = False) -> list[CaseResult]:
    return [run_case(c, corrupt=corrupt) for c in all_cases(seed)]
