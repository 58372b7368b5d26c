"""Finite-difference verification of analytic gradients.

Central differences in float64 against the tape's backward pass.  The
callable must be deterministic: it is re-evaluated twice per parameter
coordinate with the coordinate nudged by ``eps``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Module, Param


def trainable_params(module: Module) -> dict[str, Param]:
    """Named trainable parameters, the natural argument for grad_check."""
    return {name: p for name, p in module.named_params() if p.trainable}


@dataclass
class GradCheckReport:
    max_rel_error: float
    tol: float
    per_param: dict[str, float]
    worst_param: str | None

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def _rel_error(analytic: float, numeric: float) -> float:
    denom = max(abs(analytic), abs(numeric), 1e-8)
    return abs(analytic - numeric) / denom


def grad_check(fn, params: dict[str, Param], eps: float = 1e-4,
               tol: float = 1e-4) -> GradCheckReport:
    """Compare analytic gradients of a scalar function against central differences.

    ``fn`` takes no arguments and returns a scalar autograd Tensor computed
    from the given params.  Raises on non-finite values anywhere.
    """
    for param in params.values():
        param.zero_grad()
    loss = fn()
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite loss in grad_check forward pass")
    loss.backward()
    analytic = {}
    for name, param in params.items():
        grad = param.grad if param.grad is not None else np.zeros_like(param.data)
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError(f"non-finite analytic gradient for {name}")
        analytic[name] = np.array(grad)

    per_param: dict[str, float] = {}
    worst, worst_name = 0.0, None
    for name, param in params.items():
        flat = param.data.reshape(-1)
        worst_here = 0.0
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + eps
            up = float(fn().data)
            flat[i] = original - eps
            down = float(fn().data)
            flat[i] = original
            if not (np.isfinite(up) and np.isfinite(down)):
                raise FloatingPointError(f"non-finite perturbed loss for {name}")
            numeric = (up - down) / (2.0 * eps)
            err = _rel_error(float(analytic[name].reshape(-1)[i]), numeric)
            worst_here = max(worst_here, err)
        per_param[name] = worst_here
        if worst_here >= worst:
            worst, worst_name = worst_here, name
    return GradCheckReport(max_rel_error=worst, tol=tol, per_param=per_param,
                           worst_param=worst_name)
