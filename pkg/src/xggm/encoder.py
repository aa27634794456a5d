"""Iterative graph encoder shared by the relation and node generative branches.

One iteration runs ``N_l`` message-passing layers with a relation matrix held
fixed, then sums a ReLU projection of every layer's nodes (input included).
Weights are per node: a stack of ``N_o`` matrices, one for each node slot.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import numerics as nx
from .errors import ContractError, DimensionError


def gcn_layer(R, V, W, b):
    """``v'_i = sigmoid((sum_j R[i, j] v_j) @ W[i] + b[i])``."""
    rv, vv, wv = nx.value(R), nx.value(V), nx.value(W)
    n, d = vv.shape[-2:]
    if rv.shape[-2:] != (n, n) or wv.shape != (n, d, d) or nx.value(b).shape != (n, d):
        raise DimensionError(
            f"gcn_layer shapes R{rv.shape} V{vv.shape} W{wv.shape} b{nx.value(b).shape}")
    return nx.sigmoid(nx.node_matmul(nx.matmul(R, V), W) + b)


def encoder_iteration(layers, assembly, V_in, R_fixed):
    """One graph-encoder pass.

    ``layers`` is a list of ``(W, b)`` pairs (possibly empty) and ``assembly``
    the ``(W_a, b_a)`` pair.  Returns the sum over ``l = 0..N_l`` of
    ``relu(V^(l) W_a + b_a)`` where ``V^(0) = V_in``.
    """
    w_a, b_a = assembly
    h = V_in
    out = nx.relu(nx.node_matmul(h, w_a) + b_a)
    for w, b in layers:
        h = gcn_layer(R_fixed, h, w, b)
        out = out + nx.relu(nx.node_matmul(h, w_a) + b_a)
    return out


def relation_from_nodes(V):
    """``sigmoid(V V^T)``, symmetrized so the result is exactly symmetric."""
    gram = nx.matmul(V, nx.transpose(V))
    return nx.sigmoid(nx.scale(gram + nx.transpose(gram), 0.5))


def graph_readout(V):
    return nx.mean(V, axis=-2)


@dataclass
class IterationTrace:
    nodes: list = field(default_factory=list)
    relations: list = field(default_factory=list)
    readouts: list = field(default_factory=list)

    def __len__(self):
        return len(self.nodes)


@dataclass(frozen=True)
class EncoderLayout:
    """Naming and shapes of the encoder parameters inside a flat parameter dict."""

    num_nodes: int
    dim: int
    num_iterations: int = 2
    num_layers: int = 2
    tie_assembly: bool = False
    prefix: str = "enc"

    def layer_names(self, k: int, l: int) -> tuple[str, str]:
        return f"{self.prefix}.{k}.W{l}", f"{self.prefix}.{k}.b{l}"

    def assembly_names(self, k: int) -> tuple[str, str]:
        if self.tie_assembly:
            return f"{self.prefix}.Wa", f"{self.prefix}.ba"
        return f"{self.prefix}.{k}.Wa", f"{self.prefix}.{k}.ba"

    def names(self) -> list[str]:
        out = []
        for k in range(1, self.num_iterations + 1):
            for l in range(self.num_layers):
                out.extend(self.layer_names(k, l))
            for name in self.assembly_names(k):
                if name not in out:
                    out.append(name)
        return out

    def init(self, rng) -> dict[str, np.ndarray]:
        """Weights ~ N(0, 1/d), biases zero."""
        gen = nx.as_generator(rng)
        n, d = self.num_nodes, self.dim
        params = {}
        for name in self.names():
            short = name.rsplit(".", 1)[1]
            if short.startswith("W"):
                params[name] = gen.standard_normal((n, d, d)) / np.sqrt(d)
            else:
                params[name] = np.zeros((n, d))
        return params


class GraphEncoder(Protocol):
    num_iterations: int

    def iterate(self, k: int, V, R): ...


class GcnEncoder:
    """The message-passing encoder, bound to a parameter dict."""

    def __init__(self, params, layout: EncoderLayout):
        missing = [n for n in layout.names() if n not in params]
        if missing:
            raise ContractError(f"missing encoder parameters: {missing[:3]}")
        self.params = params
        self.layout = layout
        self.num_iterations = layout.num_iterations

    def iteration_params(self, k: int):
        if not 1 <= k <= self.num_iterations:
            raise ContractError(f"iteration {k} outside 1..{self.num_iterations}")
        layers = [tuple(self.params[n] for n in self.layout.layer_names(k, l))
                  for l in range(self.layout.num_layers)]
        assembly = tuple(self.params[n] for n in self.layout.assembly_names(k))
        return layers, assembly

    def iterate(self, k: int, V, R):
        layers, assembly = self.iteration_params(k)
        return encoder_iteration(layers, assembly, V, R)
