"""Backend parity: the compiled kernels and the NumPy kernels must agree.

Elementwise transcendentals may differ by a few ulps between libm and
NumPy, so those comparisons use a tight relative tolerance. The optimizer
kernel is required to be bitwise identical because run reproducibility
rests on it.
"""
import numpy as np
import pytest

from primed import kernels as K
from primed.kernels import _numpy

try:
    from primed.kernels import _core
except ImportError:
    _core = None

needs_compiled = pytest.mark.skipif(_core is None, reason="compiled backend not built")

RTOL = 1e-12


def _cases(rng):
    return [
        rng.standard_normal((1, 1)),
        rng.standard_normal((7, 3)) * 3.0,
        rng.standard_normal((2, 64)) * 0.01,
        np.ascontiguousarray(rng.standard_normal((5, 5)) * 20.0),
    ]


@needs_compiled
@pytest.mark.parametrize("name", ["sigmoid_fw", "tanh_fw", "relu_fw", "exp_fw"])
def test_unary_forward_parity(name):
    rng = np.random.default_rng(hash(name) % 2**32)
    for x in _cases(rng):
        a = getattr(_numpy, name)(x)
        b = getattr(_core, name)(x)
        np.testing.assert_allclose(a, b, rtol=RTOL, atol=0.0)


@needs_compiled
def test_log_forward_parity():
    rng = np.random.default_rng(42)
    for x in _cases(rng):
        x = np.abs(x) + 1e-6
        np.testing.assert_allclose(_numpy.log_fw(x), _core.log_fw(x), rtol=RTOL, atol=0.0)


@needs_compiled
def test_clip_parity_is_exact():
    rng = np.random.default_rng(9)
    x = rng.standard_normal((64, 8)) * 15.0
    assert np.array_equal(_numpy.clip_fw(x, -10.0, 10.0), _core.clip_fw(x, -10.0, 10.0))
    g = rng.standard_normal((64, 8))
    assert np.array_equal(
        _numpy.clip_bw(g, x, -10.0, 10.0), _core.clip_bw(g, x, -10.0, 10.0))


@needs_compiled
def test_backward_parity():
    rng = np.random.default_rng(10)
    for x in _cases(rng):
        g = rng.standard_normal(x.shape)
        sig = _numpy.sigmoid_fw(x)
        tnh = _numpy.tanh_fw(x)
        ex = _numpy.exp_fw(x)
        np.testing.assert_allclose(
            _numpy.sigmoid_bw(g, sig), _core.sigmoid_bw(g, sig), rtol=RTOL, atol=0.0)
        np.testing.assert_allclose(
            _numpy.tanh_bw(g, tnh), _core.tanh_bw(g, tnh), rtol=RTOL, atol=0.0)
        np.testing.assert_allclose(
            _numpy.exp_bw(g, ex), _core.exp_bw(g, ex), rtol=RTOL, atol=0.0)
        assert np.array_equal(_numpy.relu_bw(g, x), _core.relu_bw(g, x))
        pos = np.abs(x) + 0.5
        np.testing.assert_allclose(
            _numpy.log_bw(g, pos), _core.log_bw(g, pos), rtol=RTOL, atol=0.0)


@needs_compiled
def test_softmax_parity():
    rng = np.random.default_rng(11)
    for x in _cases(rng):
        pa = _numpy.softmax_fw(x)
        pb = _core.softmax_fw(x)
        np.testing.assert_allclose(pa, pb, rtol=RTOL, atol=1e-300)
        g = rng.standard_normal(x.shape)
        np.testing.assert_allclose(
            _numpy.softmax_bw(g, pa), _core.softmax_bw(g, pa), rtol=1e-10, atol=1e-15)


@needs_compiled
def test_bce_logits_parity():
    rng = np.random.default_rng(12)
    for scale in (1.0, 50.0, 900.0):
        logits = rng.standard_normal((40, 1)) * scale
        y = rng.integers(0, 2, size=(40, 1)).astype(float)
        np.testing.assert_allclose(
            _numpy.bce_logits_fw(logits, y), _core.bce_logits_fw(logits, y),
            rtol=RTOL, atol=0.0)
        g = rng.standard_normal((40, 1))
        np.testing.assert_allclose(
            _numpy.bce_logits_bw(g, logits, y), _core.bce_logits_bw(g, logits, y),
            rtol=RTOL, atol=1e-300)


@needs_compiled
def test_sum_all_parity():
    rng = np.random.default_rng(13)
    for x in _cases(rng):
        assert _numpy.sum_all(x) == pytest.approx(_core.sum_all(x), rel=1e-14)


@needs_compiled
def test_adam_step_bitwise_parity():
    """Fed identical gradients, the update kernel must produce
    byte-identical parameters on both backends across many steps: the
    optimizer itself must not introduce backend-dependent rounding."""
    rng = np.random.default_rng(14)
    shape = (257,)

    def run(impl):
        p = np.array(rng_init["p"])
        m = np.zeros(shape)
        v = np.zeros(shape)
        for t in range(1, 21):
            g = rng_grads[t - 1]
            bc1 = 1.0 - 0.9 ** t
            bc2 = 1.0 - 0.999 ** t
            impl.adam_step(p, g.copy(), m, v, 1e-3, 0.9, 0.999, 1e-8, 5e-4, bc1, bc2)
        return p, m, v

    rng_init = {"p": rng.standard_normal(shape)}
    rng_grads = [rng.standard_normal(shape) * 0.3 for _ in range(20)]
    pa, ma, va = run(_numpy)
    pb, mb, vb = run(_core)
    assert pa.tobytes() == pb.tobytes()
    assert ma.tobytes() == mb.tobytes()
    assert va.tobytes() == vb.tobytes()


def test_use_backend_rebinds_and_rejects_unknown():
    orig = K.active_backend()
    try:
        K.use_backend("numpy")
        assert K.active_backend() == "numpy"
        assert K.sigmoid_fw is _numpy.sigmoid_fw
        with pytest.raises(ValueError, match="unknown backend"):
            K.use_backend("gpu")
        if "compiled" in K.available_backends():
            K.use_backend("compiled")
            assert K.sigmoid_fw is not _numpy.sigmoid_fw
    finally:
        K.use_backend(orig)
    assert K.active_backend() == orig


def test_available_backends_contains_numpy():
    assert "numpy" in K.available_backends()


def test_sigmoid_extremes_stay_finite_and_bounded():
    x = np.array([[-800.0, -30.0, 0.0, 30.0, 800.0]])
    for name in ("numpy", "compiled"):
        if name not in K.available_backends():
            continue
        impl = _numpy if name == "numpy" else _core
        s = impl.sigmoid_fw(x)
        assert np.all(np.isfinite(s))
        assert np.all((s >= 0.0) & (s <= 1.0))
        assert s[0, 2] == 0.5
