"""Optimizer tests against hand-derived update values."""
import numpy as np
import pytest

from primed.autodiff import Graph, ShapeError
from primed.optim import AdamW


def test_two_steps_match_hand_oracle():
    # worked by hand: with zero moments the first update is
    #   lr*(g/(|g|+eps) + wd*p) = 0.1*(0.5/(0.5+1e-8) + 0.1) -> p = 0.890000002
    # second step: m=0.02, v=0.0031, mhat=0.02/0.19, vhat=0.0031/0.0199
    opt = AdamW(lr=0.1, weight_decay=0.1, beta1=0.9, beta2=0.99, eps=1e-8)
    params = {"p": np.array([1.0])}
    params = opt.step(params, {"p": np.array([0.5])})
    assert params["p"][0] == pytest.approx(0.890000002, abs=1e-15)
    params = opt.step(params, {"p": np.array([-0.25])})
    assert params["p"][0] == pytest.approx(0.8544300597479335, abs=1e-15)
    assert opt.step_count == 2


def test_first_step_is_signed_unit_step_without_decay():
    # bias correction makes mhat=g, vhat=g^2 on step one, so the update is
    # lr*g/(|g|+eps), essentially lr*sign(g)
    opt = AdamW(lr=0.01, weight_decay=0.0)
    g = np.array([3.0, -0.002, 7e5])
    out = opt.step({"p": np.zeros(3)}, {"p": g})
    assert out["p"] == pytest.approx(-0.01 * np.sign(g), rel=1e-5)


def test_zero_gradient_applies_only_decay_scaling():
    opt = AdamW(lr=0.5, weight_decay=0.2)
    out = opt.step({"p": np.array([2.0, -4.0])}, {"p": np.zeros(2)})
    # m and v stay zero, so the whole update is lr*wd*p
    assert out["p"] == pytest.approx([2.0 * 0.9, -4.0 * 0.9], abs=1e-15)


def test_step_is_functional_and_moments_persist():
    opt = AdamW(lr=0.1, weight_decay=0.0)
    p0 = np.array([1.0, 2.0])
    out1 = opt.step({"p": p0}, {"p": np.array([1.0, 1.0])})
    assert p0.tolist() == [1.0, 2.0]
    assert out1["p"] is not p0
    out2 = opt.step(out1, {"p": np.array([1.0, 1.0])})
    # constant gradient keeps shrinking the parameter
    assert np.all(out2["p"] < out1["p"])


def test_determinism_across_fresh_optimizers():
    rng = np.random.default_rng(5)
    grads = [
        {"w": rng.standard_normal((3, 4)), "b": rng.standard_normal(4)}
        for _ in range(6)
    ]

    def run():
        opt = AdamW(lr=0.03, weight_decay=0.01)
        params = {"w": np.ones((3, 4)), "b": np.zeros(4)}
        for g in grads:
            params = opt.step(params, g)
        return params

    a, b = run(), run()
    assert np.array_equal(a["w"], b["w"])
    assert np.array_equal(a["b"], b["b"])


def test_missing_gradient_and_shape_mismatch_raise():
    opt = AdamW()
    with pytest.raises(KeyError, match="'w'"):
        opt.step({"w": np.ones(2)}, {})
    with pytest.raises(ShapeError, match="'w'"):
        opt.step({"w": np.ones(2)}, {"w": np.ones(3)})


def test_constructor_validation():
    with pytest.raises(ValueError):
        AdamW(beta1=1.0)
    with pytest.raises(ValueError):
        AdamW(beta2=-0.1)
    with pytest.raises(ValueError):
        AdamW(lr=0.0)


def test_descends_a_quadratic():
    """Minimize sum((p - 3)^2); the iterates must approach 3."""
    opt = AdamW(lr=0.05, weight_decay=0.0)
    params = {"p": np.zeros(4)}
    for _ in range(2000):
        g = Graph()
        p = g.parameter(params["p"])
        target = g.constant(np.full(4, 3.0))
        diff = g.sub(p, target)
        loss = g.reduce_sum(g.mul(diff, diff))
        grads = g.backward(loss)
        params = opt.step(params, {"p": grads[p.nid]})
    assert params["p"] == pytest.approx(np.full(4, 3.0), abs=1e-2)
