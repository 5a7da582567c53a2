"""Adaptive-moment optimizer with decoupled weight decay.

All parameter sets in this package are dicts of named float64 arrays;
step() is functional over them (fresh arrays out) while the first/second
moments live inside the optimizer and advance in place.
"""
from __future__ import annotations

import numpy as np

from primed import kernels as K
from primed.autodiff import ShapeError


class AdamW:
    """Per-entry update, with t the post-increment step count:

        m <- b1*m + (1-b1)*g
        v <- b2*v + (1-b2)*g^2
        p <- p - lr*( (m/(1-b1^t)) / (sqrt(v/(1-b2^t)) + eps) + wd*p )
    """

    def __init__(self, lr: float = 1e-4, weight_decay: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        if lr <= 0.0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        missing = [k for k in params if k not in grads]
        if missing:
            raise KeyError(f"gradients missing for parameters {sorted(missing)}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        out = {}
        for name, p in params.items():
            g = np.ascontiguousarray(grads[name], dtype=np.float64)
            if g.shape != p.shape:
                raise ShapeError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {p.shape}")
            m = self._m.get(name)
            if m is None:
                m = self._m[name] = np.zeros_like(p)
                self._v[name] = np.zeros_like(p)
            new_p = np.array(p, dtype=np.float64, order="C")
            K.adam_step(new_p.ravel(), g.ravel(), m.ravel(), self._v[name].ravel(),
                        self.lr, self.beta1, self.beta2, self.eps,
                        self.weight_decay, bc1, bc2)
            out[name] = new_p
        return out
