"""Node generative branch: noisy node init from ``x``, generation under R_GT, losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoder import IterationTrace, graph_readout
from .errors import ContractError, ParameterError
from .rggm import LossBreakdown, moment_fit, score_generated, score_noisy, weighted_total


@dataclass
class NInitResult:
    V_x: object
    V_hat_x: object
    sigma: float


def init_ninit_params(rng, num_nodes: int, d: int, prefix: str = "ninit") -> dict[str, np.ndarray]:
    gen = nx.as_generator(rng)
    return {
        f"{prefix}.W": gen.standard_normal((d, d)) / np.sqrt(d),
        f"{prefix}.b": np.zeros(d),
        # small random start so the nodes differ from the first step
        f"{prefix}.node_bias": gen.standard_normal((num_nodes, d)) / np.sqrt(d),
    }


def n_init(x, params, sigma: float, rng, num_nodes: int, prefix: str = "ninit",
           node_bias: bool = True) -> NInitResult:
    """Tile ``x`` over the nodes, apply the shared FC map, add per-node bias and noise."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    w = params[f"{prefix}.W"]
    if nx.value(w).shape[0] != nx.value(x).shape[-1]:
        raise ContractError("FC weight does not match x")
    tiled = nx.expand_dims(x, -2) + np.zeros((num_nodes, nx.value(x).shape[-1]))
    V_x = nx.matmul(tiled, w) + params[f"{prefix}.b"]
    if node_bias:
        V_x = V_x + params[f"{prefix}.node_bias"]
    V_hat = V_x
    if sigma > 0:
        V_hat = V_x + nx.gaussian(rng, nx.value(V_x).shape, 0.0, sigma)
    return NInitResult(V_x=V_x, V_hat_x=V_hat, sigma=sigma)


def n_gen(enc, V0, R_gt) -> tuple[object, IterationTrace]:
    """Every iteration reuses the fixed ground-truth relations."""
    if enc.num_iterations < 1:
        raise ContractError("need at least one encoder iteration")
    trace = IterationTrace()
    V = V0
    for k in range(1, enc.num_iterations + 1):
        V = enc.iterate(k, V, R_gt)
        trace.nodes.append(V)
        trace.readouts.append(graph_readout(V))
    return V, trace


def gaussian_kl(mu1, var1, mu2, var2):
    """KL(N(mu1, var1) || N(mu2, var2))."""
    return (nx.scale(nx.log(var2) - nx.log(var1), 0.5)
            + (var1 + nx.square(mu1 - mu2)) / nx.scale(var2, 2.0) - 0.5)


def symmetric_gaussian_kl(mu1, var1, mu2, var2):
    return gaussian_kl(mu1, var1, mu2, var2) + gaussian_kl(mu2, var2, mu1, var1)


def _flatten_nodes(v):
    shape = nx.value(v).shape
    return nx.reshape(v, shape[:-2] + (shape[-2] * shape[-1],))


def node_kl(V_g, O, var_floor: float = 1e-6):
    """Symmetric KL between single-Gaussian fits of the two node-feature populations."""
    mu_g, var_g = moment_fit(_flatten_nodes(V_g), var_floor)
    mu_o, var_o = moment_fit(_flatten_nodes(O), var_floor)
    return nx.mean(symmetric_gaussian_kl(mu_g, var_g, mu_o, var_o))


def node_grad_consistency(V_g, V_hat_x, V_x, sigma: float, mode: str = "corrected",
                          var_floor: float = 1e-6):
    gen = score_generated(_flatten_nodes(V_g), var_floor)
    noisy = score_noisy(_flatten_nodes(V_hat_x), _flatten_nodes(V_x), sigma, mode)
    return nx.mean(nx.square(gen - noisy))


def nggm_losses(V_g, V_hat_x, V_x, O, sigma: float, mode: str = "corrected",
                alpha: float = 6.6, beta: float = 0.17, l_bce=0.0, var_floor: float = 1e-6):
    """Total node-branch loss (tape node or array) and its float breakdown."""
    for name, v in (("V_hat_x", V_hat_x), ("V_x", V_x), ("O", O)):
        if nx.value(v).shape != nx.value(V_g).shape:
            raise ContractError(f"{name} shape {nx.value(v).shape} != {nx.value(V_g).shape}")
    l_grad = node_grad_consistency(V_g, V_hat_x, V_x, sigma, mode, var_floor)
    l_dist = node_kl(V_g, O, var_floor)
    total = weighted_total(l_grad, l_dist, l_bce, alpha, beta)
    g, dd, b = (float(nx.value(v)) for v in (l_grad, l_dist, l_bce))
    return total, LossBreakdown(g, dd, b, alpha * g + beta * dd + b, "N")
