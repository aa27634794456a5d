"""Relation generative branch: noisy relation init, regeneration, and its losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .encoder import IterationTrace, graph_readout, relation_from_nodes
from .errors import ContractError, ParameterError

SCORE_MODES = ("squared", "corrected")


@dataclass
class RInitResult:
    r: object  # clean relation vector, entries in (0, 1)
    r_hat: object  # r plus Gaussian noise
    R0: object  # symmetric, unit diagonal


@dataclass(frozen=True)
class LossBreakdown:
    l_grad: float
    l_dist: float
    l_bce: float
    total: float
    branch: str

    def as_row(self, step: int) -> list:
        return [step, self.branch, self.l_grad, self.l_dist, self.l_bce, self.total]


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def r_init(x, W_r, b_r, sigma: float, rng, num_nodes: int) -> RInitResult:
    """``r = sigmoid(W_r x + b_r)``; ``r_hat = r + N(0, sigma^2)``; R0 from ``r_hat``."""
    if sigma < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma}")
    m = num_pairs(num_nodes)
    if nx.value(W_r).shape[0] != m:
        raise ContractError(f"W_r needs {m} rows for {num_nodes} nodes")
    r = nx.sigmoid(nx.matmul(x, nx.transpose(W_r)) + b_r)
    r_hat = r
    if sigma > 0:
        r_hat = r + nx.gaussian(rng, nx.value(r).shape, 0.0, sigma)
    return RInitResult(r=r, r_hat=r_hat, R0=nx.unpack_upper(r_hat, num_nodes))


def r_gen(enc, O, R0) -> tuple[object, IterationTrace]:
    """Nodes start at the object features; each iteration regenerates R from V."""
    if enc.num_iterations < 1:
        raise ContractError("need at least one encoder iteration")
    trace = IterationTrace()
    V, R = O, R0
    for k in range(1, enc.num_iterations + 1):
        V = enc.iterate(k, V, R)
        R = relation_from_nodes(V)
        trace.nodes.append(V)
        trace.relations.append(R)
        trace.readouts.append(graph_readout(V))
    return R, trace


def score_noisy(r_hat, r, sigma: float, mode: str = "corrected"):
    """Score of the Gaussian perturbation kernel at ``r_hat``.

    ``corrected`` is the Gaussian score ``-(r_hat - r) / sigma^2``; ``squared``
    keeps the squared residual ``-(r_hat - r)^2 / sigma^2``.
    """
    if sigma <= 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    if nx.value(r_hat).shape != nx.value(r).shape:
        raise ContractError("r_hat and r differ in shape")
    diff = r_hat - r
    if mode == "corrected":
        return nx.scale(diff, -1.0 / sigma**2)
    if mode == "squared":
        return nx.scale(nx.square(diff), -1.0 / sigma**2)
    raise ContractError(f"unknown score mode {mode!r}")


def moment_fit(values, var_floor: float):
    """Mean and floored population variance along the last axis (kept as size-1 axis)."""
    mu = nx.mean(values, axis=-1, keepdims=True)
    var = nx.mean(nx.square(values - mu), axis=-1, keepdims=True)
    return mu, nx.maximum(var, var_floor)


def score_generated(values, var_floor: float = 1e-6):
    """Score of a moment-matched Gaussian fitted to ``values`` (last axis)."""
    if nx.value(values).shape[-1] < 2:
        raise ContractError("need at least 2 values to fit a density")
    mu, var = moment_fit(values, var_floor)
    return -(values - mu) / var


def loss_grad_consistency(R_g, r_hat, r, sigma: float, mode: str = "corrected",
                          var_floor: float = 1e-6):
    """Mean squared gap between generated and perturbation scores over i<j pairs."""
    gen = score_generated(nx.pack_upper(R_g), var_floor)
    noisy = score_noisy(r_hat, r, sigma, mode)
    if nx.value(gen).shape != nx.value(noisy).shape:
        raise ContractError(f"score shapes {nx.value(gen).shape} vs {nx.value(noisy).shape}")
    return nx.mean(nx.square(gen - noisy))


def hard_histogram(samples: np.ndarray, bins: int) -> np.ndarray:
    s = np.clip(np.asarray(samples, dtype=np.float64), 0.0, 1.0)
    idx = np.minimum((s * bins).astype(np.int64), bins - 1)
    counts = np.zeros(s.shape[:-1] + (bins,))
    for b in range(bins):
        counts[..., b] = np.sum(idx == b, axis=-1)
    return counts / s.shape[-1]


def soft_histogram(samples, bins: int, tau: float):
    """Differentiable histogram: each sample spreads over bins by softmax(-|s - c_b| / tau)."""
    centers = (np.arange(bins) + 0.5) / bins
    dist = nx.absolute(nx.expand_dims(samples, -1) - centers)
    logits = nx.scale(dist, -1.0 / tau)
    # shift by the (constant) row max for stability; it cancels in the ratio
    w = nx.exp(logits - np.max(nx.value(logits), axis=-1, keepdims=True))
    w = w / nx.sum_(w, axis=-1, keepdims=True)
    return nx.mean(w, axis=-2)


def smooth(hist, eps: float, bins: int):
    return (hist + eps) / (1.0 + bins * eps)


def loss_kl_symmetric(p_sample, q_sample, bins: int = 16, eps: float = 1e-3,
                      soft: bool = False, tau: float = 0.01):
    """``KL(p||q) + KL(q||p)`` between eps-smoothed histograms on [0, 1].

    Samples lie on the last axis; leading axes are averaged.  ``soft`` swaps
    the hard counts for the differentiable kernel assignment.
    """
    for s in (p_sample, q_sample):
        if nx.value(s).shape[-1] < 1:
            raise ContractError("empty sample")
    if bins < 2 or eps <= 0:
        raise ParameterError("need bins >= 2 and eps > 0")
    if soft:
        p = smooth(soft_histogram(p_sample, bins, tau), eps, bins)
        q = smooth(soft_histogram(q_sample, bins, tau), eps, bins)
    else:
        p = smooth(hard_histogram(nx.value(p_sample), bins), eps, bins)
        q = smooth(hard_histogram(nx.value(q_sample), bins), eps, bins)
    per = nx.sum_((p - q) * (nx.log(p) - nx.log(q)), axis=-1)
    return nx.mean(per)


def weighted_total(l_grad, l_dist, l_bce, alpha: float, beta: float):
    return nx.scale(l_grad, alpha) + nx.scale(l_dist, beta) + l_bce


def rggm_total_loss(l_grad, l_dist, l_bce, alpha: float = 6.0, beta: float = 72.0,
                    branch: str = "R") -> LossBreakdown:
    g, dd, b = (float(nx.value(v)) for v in (l_grad, l_dist, l_bce))
    return LossBreakdown(g, dd, b, alpha * g + beta * dd + b, branch)
