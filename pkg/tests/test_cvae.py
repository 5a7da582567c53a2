"""Conditional VAE tests.

The KL closed form is checked against a Monte Carlo estimate computed here
(sample from the posterior, average the log-density ratio); the ELBO
gradient is checked against finite differences with the sampling noise
frozen outside the loss closure.
"""
import numpy as np
import pytest

from primed.autodiff import Graph, ShapeError
from primed.checkpoint import save_checkpoint, load_checkpoint
from primed.cvae import (
    LOGVAR_MAX,
    CvaeConfig,
    CvaeModel,
    _batch_loss,
    decode,
    elbo,
    encode,
    kl_standard_normal,
    log_likelihood,
    model_from_checkpoint,
    model_meta,
    reparameterize,
    train,
    weighted_elbo_total,
)
from primed.gradcheck import grad_check


def _toy_model(m=5, j=2, k=3, h=8, seed=0):
    return CvaeModel.initialize(m, j, k, h, seed)


def _toy_batch(n=16, m=5, j_attrs=1, seed=1):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, m))
    s = np.zeros((n, 2 * j_attrs))
    cols = rng.integers(0, 2, size=(n, j_attrs))
    for j in range(j_attrs):
        s[np.arange(n), 2 * j + cols[:, j]] = 1.0
    return x, s


# ------------------------------------------------------------------ encode

def test_encode_zero_weights_gives_zero_posterior():
    model = _toy_model()
    model.params = {k: np.zeros_like(v) for k, v in model.params.items()}
    mu, logvar = encode(model, np.ones(5), np.array([1.0, 0.0]))
    assert mu.tolist() == [0.0, 0.0, 0.0]
    assert logvar.tolist() == [0.0, 0.0, 0.0]


def test_encode_shapes_and_determinism():
    model = _toy_model()
    x = np.arange(5.0)
    s = np.array([0.0, 1.0])
    mu1, lv1 = encode(model, x, s)
    mu2, lv2 = encode(model, x, s)
    assert mu1.shape == (3,) and lv1.shape == (3,)
    assert np.array_equal(mu1, mu2) and np.array_equal(lv1, lv2)
    with pytest.raises(ShapeError):
        encode(model, np.ones(4), s)
    with pytest.raises(ShapeError):
        encode(model, x, np.ones(3))


def test_logvar_clamped_at_bounds():
    model = _toy_model()
    model.params["logvar_b"] = np.full((1, 3), 50.0)
    _, logvar = encode(model, np.ones(5), np.array([1.0, 0.0]))
    assert np.all(logvar == LOGVAR_MAX)
    model.params["logvar_b"] = np.full((1, 3), -50.0)
    _, logvar = encode(model, np.ones(5), np.array([1.0, 0.0]))
    assert np.all(logvar == -LOGVAR_MAX)


def test_decode_shape_contract():
    model = _toy_model()
    out = decode(model, np.zeros(3), np.array([1.0, 0.0]))
    assert out.shape == (5,)
    with pytest.raises(ShapeError):
        decode(model, np.zeros(4), np.array([1.0, 0.0]))


# --------------------------------------------------------- reparameterize

def test_reparameterize_closed_forms():
    mu = np.array([1.0, -2.0])
    assert np.array_equal(reparameterize(mu, np.zeros(2), np.zeros(2)), mu)
    e = np.array([0.5, 1.5])
    assert reparameterize(mu, np.zeros(2), e) == pytest.approx(mu + e, abs=0)
    # logvar = 2*ln(3) makes the scale exactly 3
    lv = np.full(2, 2.0 * np.log(3.0))
    assert reparameterize(mu, lv, e) == pytest.approx(mu + 3.0 * e, rel=1e-15)
    with pytest.raises(ShapeError):
        reparameterize(mu, np.zeros(3), e)


def test_reparameterize_gradient_in_mu_is_identity():
    lv = np.array([0.3, -0.7])
    e = np.array([1.1, -0.4])
    h = 1e-6
    for i in range(2):
        mu = np.array([0.2, 0.9])
        up = mu.copy(); up[i] += h
        down = mu.copy(); down[i] -= h
        fd = (reparameterize(up, lv, e) - reparameterize(down, lv, e)) / (2 * h)
        expect = np.zeros(2); expect[i] = 1.0
        assert fd == pytest.approx(expect, abs=1e-9)


# ---------------------------------------------------------------------- KL

def test_kl_closed_form_values():
    assert kl_standard_normal(np.zeros(4), np.zeros(4)) == 0.0
    assert kl_standard_normal(np.array([1.0]), np.array([0.0])) == 0.5
    rng = np.random.default_rng(0)
    for _ in range(50):
        mu = rng.standard_normal(6)
        lv = rng.uniform(-3, 3, size=6)
        assert kl_standard_normal(mu, lv) >= 0.0
    assert kl_standard_normal(np.zeros(3), np.zeros(3)) == 0.0


def mc_kl(mu, logvar, n_samples, seed):
    """Monte Carlo KL(q || N(0,I)): mean of log q(z) - log p(z) under q."""
    rng = np.random.default_rng(seed)
    std = np.exp(0.5 * logvar)
    z = mu + std * rng.standard_normal((n_samples, mu.size))
    log_q = -0.5 * (((z - mu) / std) ** 2 + logvar + np.log(2 * np.pi)).sum(axis=1)
    log_p = -0.5 * (z ** 2 + np.log(2 * np.pi)).sum(axis=1)
    return float(np.mean(log_q - log_p))


def test_kl_matches_monte_carlo():
    rng = np.random.default_rng(3)
    for trial in range(3):
        mu = rng.uniform(-1.5, 1.5, size=4)
        lv = rng.uniform(-1.5, 1.0, size=4)
        est = mc_kl(mu, lv, 10**6, seed=trial)
        assert abs(est - kl_standard_normal(mu, lv)) < 1e-2


# -------------------------------------------------------------------- ELBO

def test_log_likelihood_closed_forms():
    x = np.array([1.0, 2.0])
    assert log_likelihood(x, x) == 0.0
    # squared distance 2 -> term -1
    assert log_likelihood(x, x + np.array([1.0, 1.0])) == -1.0
    d1 = log_likelihood(x, x + 0.5)
    d2 = log_likelihood(x, x + 1.5)
    assert d2 < d1 < 0.0


def test_elbo_deterministic_and_nonpositive():
    model = _toy_model()
    x, s = np.arange(5.0) / 5.0, np.array([1.0, 0.0])
    rng = np.random.default_rng(7)
    eps = rng.standard_normal((4, 3))
    v1 = elbo(model, x, s, eps)
    v2 = elbo(model, x, s, eps)
    assert v1 == v2
    assert v1 <= 0.0
    for seed in range(10):
        e = np.random.default_rng(seed).standard_normal((1, 3))
        assert elbo(model, x, s, e) <= 0.0
    with pytest.raises(ShapeError):
        elbo(model, x, s, np.zeros((2, 4)))


def test_elbo_variance_shrinks_with_more_samples():
    model = _toy_model(seed=5)
    x, s = np.arange(5.0) / 5.0, np.array([0.0, 1.0])
    rng = np.random.default_rng(11)
    small = [elbo(model, x, s, rng.standard_normal((1, 3))) for _ in range(100)]
    big = [elbo(model, x, s, rng.standard_normal((64, 3))) for _ in range(100)]
    assert np.var(big) < np.var(small)


# ---------------------------------------------------------------- training

def test_full_elbo_gradient_matches_finite_differences():
    x, s = _toy_batch(n=4, m=5, seed=2)
    eps = np.random.default_rng(3).standard_normal((2, 4, 3))
    weights = np.random.default_rng(4).uniform(0.5, 2.0, size=4)
    model = CvaeModel.initialize(5, 2, 3, 6, seed=0)

    def build(g, pt):
        return _batch_loss(g, pt, x, s, weights, eps)

    assert grad_check(build, model.params) < 1e-4


def test_doubling_weights_doubles_batch_objective():
    x, s = _toy_batch(n=8, m=5, seed=6)
    eps = np.random.default_rng(7).standard_normal((1, 8, 3))
    w = np.random.default_rng(8).uniform(0.5, 2.0, size=8)
    model = CvaeModel.initialize(5, 2, 3, 6, seed=1)

    def loss_at(weights):
        g = Graph()
        pt = {name: g.parameter(v) for name, v in model.params.items()}
        return _batch_loss(g, pt, x, s, weights, eps).item()

    assert loss_at(2.0 * w) == 2.0 * loss_at(w)


def test_gradient_direction_invariant_to_weight_scale():
    x, s = _toy_batch(n=8, m=5, seed=9)
    eps = np.random.default_rng(10).standard_normal((1, 8, 3))
    w = np.random.default_rng(11).uniform(0.5, 2.0, size=8)
    model = CvaeModel.initialize(5, 2, 3, 6, seed=2)

    def grad_at(weights):
        g = Graph()
        pt = {name: g.parameter(v) for name, v in model.params.items()}
        loss = _batch_loss(g, pt, x, s, weights, eps)
        grads = g.backward(loss)
        flat = np.concatenate([grads[pt[n].nid].ravel() for n in sorted(pt)])
        return flat / np.linalg.norm(flat)

    assert np.max(np.abs(grad_at(w) - grad_at(1000.0 * w))) < 1e-9


def test_training_improves_weighted_elbo():
    x, s = _toy_batch(n=2000, m=8, seed=12)
    w = np.ones(2000)
    cfg = CvaeConfig(latent_dim=4, hidden=16, epochs=30, seed=0)
    model, trace = train(x, s, w, cfg)
    assert len(trace) == 30
    assert trace[-1] > trace[0]
    assert all(np.isfinite(v) for v in trace)


def test_training_deterministic():
    x, s = _toy_batch(n=300, m=6, seed=13)
    w = np.ones(300)
    cfg = CvaeConfig(latent_dim=3, hidden=8, epochs=3, seed=5)
    m1, t1 = train(x, s, w, cfg)
    m2, t2 = train(x, s, w, cfg)
    assert t1 == t2
    for name in m1.params:
        assert np.array_equal(m1.params[name], m2.params[name])


def test_training_input_validation():
    x, s = _toy_batch(n=20, m=4, seed=14)
    cfg = CvaeConfig(latent_dim=2, hidden=4, epochs=1)
    with pytest.raises(ShapeError):
        train(x, s, np.ones(19), cfg)
    with pytest.raises(ValueError, match="non-negative"):
        train(x, s, -np.ones(20), cfg)
    with pytest.raises(ValueError) as exc:
        CvaeConfig(latent_dim=0, samples=0, learning_rate=-1.0)
    msg = str(exc.value)
    assert "latent_dim" in msg and "samples" in msg and "learning_rate" in msg


def test_weighted_elbo_total_matches_per_record_sum():
    model = _toy_model(seed=3)
    x, s = _toy_batch(n=6, m=5, seed=15)
    w = np.random.default_rng(16).uniform(0.5, 2.0, size=6)
    eps = np.random.default_rng(17).standard_normal((2, 6, 3))
    total = weighted_elbo_total(model, x, s, w, eps)
    manual = sum(w[i] * elbo(model, x[i], s[i], eps[:, i, :]) for i in range(6))
    assert total == pytest.approx(manual, rel=1e-12)


def test_checkpoint_round_trip_preserves_inference(tmp_path):
    x, s = _toy_batch(n=200, m=5, seed=18)
    model, _ = train(x, s, np.ones(200),
                     CvaeConfig(latent_dim=3, hidden=8, epochs=2, seed=1))
    path = tmp_path / "cvae.ckpt"
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    save_checkpoint(path, "cvae", model_meta(model), arrays)
    _, meta, arrays2 = load_checkpoint(path, expected_kind="cvae")
    back = model_from_checkpoint(meta, arrays2)
    mu1, lv1 = encode(model, x[0], s[0])
    mu2, lv2 = encode(back, x[0], s[0])
    assert mu1.tobytes() == mu2.tobytes()
    assert lv1.tobytes() == lv2.tobytes()
