"""Central finite-difference gradient checking."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError, ParameterError
from .autodiff import Tape, value


def _as_params(theta) -> tuple[dict[str, np.ndarray], bool]:
    if isinstance(theta, Mapping):
        return {k: np.array(v, dtype=np.float64) for k, v in theta.items()}, False
    return {"theta": np.array(theta, dtype=np.float64)}, True


def _call(f, params, single):
    return f(params["theta"]) if single else f(params)


def analytic_gradients(f: Callable, theta) -> dict[str, np.ndarray]:
    params, single = _as_params(theta)
    tape = Tape()
    vars_ = tape.params_from(params)
    loss = _call(f, vars_, single)
    grads, _ = tape.gradients(loss)
    return grads


def numeric_gradients(f: Callable, theta, h: float = 1e-5) -> dict[str, np.ndarray]:
    if h <= 0:
        raise ParameterError(f"step must be positive, got {h}")
    params, single = _as_params(theta)

    def evaluate():
        out = float(np.asarray(value(_call(f, params, single))).reshape(()))
        if not np.isfinite(out):
            raise NumericError("function value is not finite")
        return out

    grads = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = evaluate()
            flat[i] = orig - h
            fm = evaluate()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads[name] = g
    return grads


def relative_errors(analytic, numeric) -> dict[str, float]:
    """Per-parameter max of |analytic - numeric| / max(1, |numeric|)."""
    out = {}
    for name, n in numeric.items():
        a = analytic[name]
        err = np.abs(a - n) / np.maximum(1.0, np.abs(n))
        out[name] = float(err.max()) if err.size else 0.0
    return out


def grad_check_report(f: Callable, theta, h: float = 1e-5,
                      analytic_hook: Callable | None = None) -> dict[str, float]:
    """Compare tape gradients of ``f`` against central differences.

    ``f`` is written with the primitives of :mod:`xggm.numerics.autodiff` and
    receives either a single array or a dict of arrays, mirroring ``theta``.
    ``analytic_hook`` may rewrite the analytic gradients before comparison; it
    exists so harness tests can feed a deliberately wrong gradient.
    """
    analytic = analytic_gradients(f, theta)
    if analytic_hook is not None:
        analytic = analytic_hook(analytic)
    numeric = numeric_gradients(f, theta, h)
    return relative_errors(analytic, numeric)


def grad_check(f: Callable, theta, h: float = 1e-5) -> float:
    report = grad_check_report(f, theta, h)
    return max(report.values(), default=0.0)
