"""Kernel backend selection.

The hot training-loop kernels exist twice: a Cython extension
(primed.kernels._core) and a NumPy fallback (primed.kernels._numpy). The
compiled backend is preferred when importable. Set PRIMED_BACKEND=numpy or
PRIMED_BACKEND=compiled before import to force a choice; call use_backend()
to switch at runtime (the benchmark and parity tests do this).
"""
import os

from primed.kernels import _numpy

try:
    from primed.kernels import _core
except ImportError:
    _core = None

_KERNEL_NAMES = (
    "sigmoid_fw", "sigmoid_bw",
    "tanh_fw", "tanh_bw",
    "relu_fw", "relu_bw",
    "exp_fw", "exp_bw",
    "log_fw", "log_bw",
    "clip_fw", "clip_bw",
    "softmax_fw", "softmax_bw",
    "bce_logits_fw", "bce_logits_bw",
    "sum_all", "adam_step",
)

_active = None


def available_backends() -> tuple[str, ...]:
    if _core is None:
        return ("numpy",)
    return ("numpy", "compiled")


def use_backend(name: str) -> None:
    """Rebind the module-level kernel functions to the named backend."""
    global _active
    if name == "numpy":
        impl = _numpy
    elif name == "compiled":
        if _core is None:
            raise RuntimeError("compiled kernel backend is not built")
        impl = _core
    else:
        raise ValueError(f"unknown backend {name!r}; expected 'numpy' or 'compiled'")
    for fname in _KERNEL_NAMES:
        globals()[fname] = getattr(impl, fname)
    _active = name


def active_backend() -> str:
    return _active


_requested = os.environ.get("PRIMED_BACKEND")
if _requested:
    use_backend(_requested)
else:
    use_backend("compiled" if _core is not None else "numpy")
