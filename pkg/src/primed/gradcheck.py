"""Finite-difference verification of the reverse pass."""
from __future__ import annotations

import numpy as np

from primed.autodiff import Graph


def grad_check(build, params: dict[str, np.ndarray], eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    build(graph, tensors) must return a scalar loss tensor and be a pure
    function of the parameter values: freeze any sampling or data outside
    the closure. The error for one entry is
    |analytic - (f(p+eps) - f(p-eps)) / (2*eps)| / max(1, |analytic|),
    and the maximum over all entries of all parameters is returned.
    """
    g = Graph()
    tensors = {k: g.parameter(v) for k, v in params.items()}
    loss = build(g, tensors)
    grads = g.backward(loss)
    analytic = {k: grads[tensors[k].nid] for k in params}

    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def value_at() -> float:
        gg = Graph()
        tt = {k: gg.parameter(v) for k, v in work.items()}
        return build(gg, tt).item()

    worst = 0.0
    for k in params:
        flat = work[k].ravel()
        an = analytic[k].ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = value_at()
            flat[i] = orig - eps
            down = value_at()
            flat[i] = orig
            fd = (up - down) / (2.0 * eps)
            err = abs(an[i] - fd) / max(1.0, abs(an[i]))
            if err > worst:
                worst = err
    return worst
