"""NumPy implementations of the training-loop kernels.

This is the fallback backend; primed.kernels._core is the compiled twin.
Both expose the same functions with the same semantics. Elementwise math
is written so the two backends agree bitwise (same per-element expression,
no reassociation), which the backend parity tests rely on.
"""
import numpy as np

BACKEND_NAME = "numpy"


def sigmoid_fw(x):
    # Split by sign so exp() never overflows.
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_bw(g, out):
    return g * (out * (1.0 - out))


def tanh_fw(x):
    return np.tanh(x)


def tanh_bw(g, out):
    return g * (1.0 - out * out)


def relu_fw(x):
    return np.maximum(x, 0.0)


def relu_bw(g, x):
    return np.where(x > 0.0, g, 0.0)


def exp_fw(x):
    return np.exp(x)


def exp_bw(g, out):
    return g * out


def log_fw(x):
    return np.log(x)


def log_bw(g, x):
    return g / x


def clip_fw(x, lo, hi):
    return np.clip(x, lo, hi)


def clip_bw(g, x, lo, hi):
    # Zero gradient on the clamped boundary, matching the subgradient choice
    # documented for the clip op.
    return np.where((x > lo) & (x < hi), g, 0.0)


def softmax_fw(x):
    """Row softmax of a rank-2 array, max-shifted for stability."""
    shifted = x - np.max(x, axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=1, keepdims=True)


def softmax_bw(g, p):
    dot = np.sum(g * p, axis=1, keepdims=True)
    return p * (g - dot)


def bce_logits_fw(logits, targets):
    """Elementwise softplus(l) - y*l, the binary cross-entropy on logits."""
    return np.maximum(logits, 0.0) - logits * targets + np.log1p(np.exp(-np.abs(logits)))


def bce_logits_bw(g, logits, targets):
    return g * (sigmoid_fw(logits) - targets)


def sum_all(x):
    return float(np.sum(x))


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, weight_decay, bc1, bc2):
    """One fused optimizer update over flat float64 views, in place.

    bc1/bc2 are the bias-correction denominators 1-beta^t, computed by the
    caller so both backends use identical scalars.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * (grad * grad)
    param -= lr * ((m / bc1) / (np.sqrt(v / bc2) + eps) + weight_decay * param)
