"""Central-difference gradient verification."""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from . import tensor as T
from .tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), 1e-8)


def _scalarize(out: Tensor, weights: np.ndarray | None) -> Tensor:
    if out.size == 1:
        return T.reshape(out, ())
    return T.sum(T.mul(out, Tensor(weights)))


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5, seed: int = 0) -> float:
    """Max relative error between taped and finite-difference gradients of ``f``.

    Non-scalar outputs are reduced with a fixed random projection so that
    every output component contributes.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    x0 = np.array(x.data, dtype=np.float64)
    probe = Tensor(x0, requires_grad=True)
    out = f(probe)
    weights = None
    if out.size != 1:
        weights = np.random.default_rng(seed).standard_normal(out.shape)
    loss = _scalarize(out, weights)
    T.backward(loss, leaves=[probe])
    analytic = probe.grad

    numeric = np.zeros_like(x0)
    flat = x0.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = _scalarize(f(Tensor(x0)), weights).item()
        flat[i] = orig - eps
        down = _scalarize(f(Tensor(x0)), weights).item()
        flat[i] = orig
        num_flat[i] = (up - down) / (2 * eps)
    return float(relative_error(analytic, numeric).max()) if numeric.size else 0.0


def check_parameters(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    eps: float = 1e-5,
    per_param: int = 6,
    seed: int = 0,
) -> dict[str, float]:
    """Gradient check of a scalar ``loss_fn()`` against each named parameter.

    For each parameter a handful of entries is probed: its largest-gradient
    entry plus random entries whose gradient is not negligible relative to
    that maximum (tiny entries are dominated by round-off in the difference
    quotient).  Returns name -> max relative error.
    """
    rng = np.random.default_rng(seed)
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    T.backward(loss, leaves=list(params.values()))
    report: dict[str, float] = {}
    for name, p in params.items():
        g = p.grad.reshape(-1)
        mags = np.abs(g)
        top = int(mags.argmax())
        eligible = np.flatnonzero(mags >= 1e-3 * mags[top]) if mags[top] > 0 else np.arange(g.size)
        extra = rng.choice(eligible, size=min(per_param - 1, eligible.size), replace=False)
        picks = np.unique(np.concatenate([[top], extra]))
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            down = loss_fn().item()
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, float(relative_error(np.array(g[i]), np.array(numeric))))
        report[name] = worst
    return report
