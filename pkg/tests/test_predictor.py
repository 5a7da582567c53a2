"""Outcome-model tests: attention semantics, reweighting algebra, and the
shared training loop."""
import numpy as np
import pytest

from primed.data import DataError
from primed.autodiff import ShapeError
from primed.gradcheck import grad_check
from primed.metrics import auroc
from primed.predictor import (
    AttentionPredictor,
    DnnModel,
    PredictorConfig,
    SplitData,
    attention_weights,
    dnn_scores,
    kamiran_weights,
    predict,
    primed_scores,
    stage1_scores,
    stage2_scores,
    train_dnn,
    train_primed,
    train_stage1_only,
    train_stage2_only,
)

M, J, K = 6, 2, 3


def _model(seed=0):
    return AttentionPredictor.initialize(M, J, K, hidden=8, seed=seed)


def _splits(n=400, seed=0, separable=False):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, M))
    groups = rng.integers(0, 2, size=(n, 1))
    s = np.zeros((n, J))
    s[np.arange(n), groups[:, 0]] = 1.0
    if separable:
        y = (x[:, 0] > 0).astype(np.float64)
    else:
        logit = x @ rng.standard_normal(M) + rng.standard_normal(n) * 0.5
        y = (logit > 0).astype(np.float64)
    z = rng.standard_normal((n, K))
    half = n // 2
    tr = SplitData(x[:half], s[:half], y[:half], groups[:half], z[:half])
    va = SplitData(x[half:], s[half:], y[half:], groups[half:], z[half:])
    return tr, va


# --------------------------------------------------------------- attention

def test_attention_uniform_for_zero_logits():
    model = _model()
    model.params["att_x"] = np.zeros((M, K))
    wx, _ = attention_weights(model, np.array([1.0, -2.0, 0.5]))
    assert wx == pytest.approx(np.full(M, 1.0 / M), abs=1e-15)
    model2 = _model(seed=1)
    wx2, ws2 = attention_weights(model2, np.zeros(K))
    assert wx2 == pytest.approx(np.full(M, 1.0 / M), abs=1e-15)
    assert ws2 == pytest.approx(np.full(J, 1.0 / J), abs=1e-15)


def test_attention_closed_form_two_features():
    # logits [ln 3, 0] -> weights [3/4, 1/4]
    model = AttentionPredictor.initialize(2, J, 1, hidden=4, seed=0)
    model.params["att_x"] = np.array([[np.log(3.0)], [0.0]])
    wx, _ = attention_weights(model, np.array([1.0]))
    assert wx == pytest.approx([0.75, 0.25], abs=1e-12)


def test_attention_sums_to_one_and_positive():
    rng = np.random.default_rng(5)
    model = _model(seed=2)
    for _ in range(50):
        wx, ws = attention_weights(model, rng.standard_normal(K) * 3.0)
        assert abs(wx.sum() - 1.0) < 1e-12
        assert abs(ws.sum() - 1.0) < 1e-12
        assert np.all(wx > 0) and np.all(ws > 0)


def test_attention_shift_invariance():
    """Adding a constant row to the logit matrix shifts every logit by the
    same amount and leaves the weights unchanged."""
    model = _model(seed=3)
    z = np.array([0.7, -1.1, 0.4])
    wx_base, _ = attention_weights(model, z)
    shifted = _model(seed=3)
    # choose c so that c @ z = constant: add outer(1, v) with v @ z = 5.0
    v = np.array([5.0 / z[0], 0.0, 0.0])
    shifted.params["att_x"] = shifted.params["att_x"] + np.outer(np.ones(M), v)
    wx_shift, _ = attention_weights(shifted, z)
    assert np.max(np.abs(wx_base - wx_shift)) < 1e-12


def test_attention_rejects_wrong_latent_length():
    with pytest.raises(ShapeError):
        attention_weights(_model(), np.zeros(K + 1))


# ----------------------------------------------------------------- predict

def test_predict_range_and_determinism():
    model = _model(seed=4)
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = predict(model, rng.standard_normal(M), rng.standard_normal(J),
                    rng.standard_normal(K))
        assert 0.0 < p < 1.0
    x, s, z = rng.standard_normal(M), rng.standard_normal(J), rng.standard_normal(K)
    assert predict(model, x, s, z) == predict(model, x, s, z)


def test_predict_zero_inputs_depend_only_on_code():
    """With x = 0 and s = 0 the gated terms vanish, so two models that
    differ only in the input-gating weights agree."""
    a = _model(seed=7)
    b = _model(seed=7)
    b.params = dict(b.params)
    b.params["w1_x"] = a.params["w1_x"] + 3.0
    b.params["w1_s"] = a.params["w1_s"] - 2.0
    z = np.array([0.3, -0.8, 1.2])
    pa = predict(a, np.zeros(M), np.zeros(J), z)
    pb = predict(b, np.zeros(M), np.zeros(J), z)
    assert pa == pb
    # and changing z does change the output
    assert pa != predict(a, np.zeros(M), np.zeros(J), z + 1.0)


def test_predict_monotone_in_logit():
    """Scaling the output layer towards +inf pushes the sigmoid towards 1."""
    model = _model(seed=8)
    x, s, z = np.ones(M), np.ones(J), np.ones(K)
    p0 = predict(model, x, s, z)
    boosted = _model(seed=8)
    boosted.params = dict(boosted.params)
    boosted.params["b2"] = boosted.params["b2"] + 2.0
    assert predict(boosted, x, s, z) > p0


def test_predict_shape_errors():
    model = _model()
    with pytest.raises(ShapeError):
        predict(model, np.zeros(M + 1), np.zeros(J), np.zeros(K))
    with pytest.raises(ShapeError):
        predict(model, np.zeros(M), np.zeros(J + 1), np.zeros(K))
    with pytest.raises(ShapeError):
        predict(model, np.zeros(M), np.zeros(J), np.zeros(K + 1))


# ---------------------------------------------------------------- kamiran

def test_kamiran_hand_oracle():
    # 20 records: P(g=1)=0.5, P(y=1)=0.5, P(g=1,y=1)=0.4
    groups = np.array([1] * 10 + [0] * 10)
    labels = np.array([1] * 8 + [0] * 2 + [1] * 2 + [0] * 8)
    w = kamiran_weights(groups, labels)
    assert w[0] == pytest.approx(0.625)           # (0.5*0.5)/0.4
    assert w[8] == pytest.approx(2.5)             # (0.5*0.5)/0.1
    assert w[10] == pytest.approx(2.5)
    assert w[12] == pytest.approx(0.625)


def test_kamiran_mass_identities():
    rng = np.random.default_rng(9)
    for _ in range(25):
        n = int(rng.integers(40, 400))
        groups = rng.integers(0, 3, size=n)
        labels = rng.integers(0, 2, size=n)
        for g in np.unique(groups):
            for yv in (0, 1):
                if not ((groups == g) & (labels == yv)).any():
                    labels[np.flatnonzero(groups == g)[0]] = yv
        w = kamiran_weights(groups, labels)
        assert w.sum() == pytest.approx(n, rel=1e-9)
        assert w[labels == 1].sum() == pytest.approx((labels == 1).sum(), rel=1e-9)
        assert w[labels == 0].sum() == pytest.approx((labels == 0).sum(), rel=1e-9)
        for g in np.unique(groups):
            assert w[groups == g].sum() == pytest.approx((groups == g).sum(), rel=1e-9)


def test_kamiran_independent_group_and_label_gives_unit_weights():
    groups = np.array([0, 0, 1, 1] * 5)
    labels = np.array([0, 1, 0, 1] * 5)
    assert kamiran_weights(groups, labels) == pytest.approx(np.ones(20), abs=1e-15)


def test_kamiran_empty_cell_error_names_cell():
    groups = np.array([0, 0, 1, 1])
    labels = np.array([0, 1, 1, 1])
    with pytest.raises(DataError, match="group=0, label=0") as exc:
        kamiran_weights(np.array([1, 1, 0, 0]), labels)
    with pytest.raises(ValueError, match="matching vectors"):
        kamiran_weights(groups, labels[:3])


# ---------------------------------------------------------------- training

FAST = PredictorConfig(hidden=8, epochs=25, patience=25, learning_rate=3e-3)


def test_dnn_separates_separable_data():
    tr, va = _splits(n=600, seed=1, separable=True)
    model, trace = train_dnn(tr, va, PredictorConfig(
        hidden=8, epochs=60, patience=60, learning_rate=1e-2))
    scores = dnn_scores(model.params, tr.x, tr.s)
    assert auroc(scores, tr.y.astype(int)) > 0.99
    assert trace[-1] < trace[0]


def test_primed_training_improves_loss_and_is_deterministic():
    tr, va = _splits(n=400, seed=2)
    m1, t1 = train_primed(tr, va, FAST)
    m2, t2 = train_primed(tr, va, FAST)
    assert t1 == t2
    for name in m1.params:
        assert np.array_equal(m1.params[name], m2.params[name])
    assert t1[-1] < t1[0]


def test_all_zero_labels_push_predictions_down():
    tr, va = _splits(n=300, seed=3)
    tr = SplitData(tr.x, tr.s, np.zeros(tr.n), tr.groups, tr.z)
    va = SplitData(va.x, va.s, np.zeros(va.n), va.groups, va.z)
    model, trace = train_primed(tr, va, PredictorConfig(
        hidden=8, epochs=60, patience=60, learning_rate=3e-3))
    scores = primed_scores(model.params, tr.x, tr.s, tr.z)
    assert np.all(scores < 0.5)
    assert trace[-1] < trace[0]


def test_training_requires_code_when_model_needs_it():
    tr, va = _splits(n=100, seed=4)
    tr_noz = SplitData(tr.x, tr.s, tr.y, tr.groups, None)
    with pytest.raises(DataError, match="stage 1 first"):
        train_primed(tr_noz, va, FAST)
    with pytest.raises(DataError, match="stage 1 first"):
        train_stage1_only(tr_noz, va, FAST)


def test_stage2_accepts_same_inputs_as_dnn():
    tr, va = _splits(n=300, seed=5)
    tr_noz = SplitData(tr.x, tr.s, tr.y, tr.groups, None)
    va_noz = SplitData(va.x, va.s, va.y, va.groups, None)
    model, _ = train_stage2_only(tr_noz, va_noz, FAST, latent_dim=K)
    scores = stage2_scores(model.params, va.x, va.s)
    assert scores.shape == (va.n,)
    assert np.all((scores > 0) & (scores < 1))


def test_stage1_no_signal_when_code_is_pure_noise():
    """The code is independent of the labels by construction, so the
    code-only classifier cannot beat chance by a margin."""
    tr, va = _splits(n=2000, seed=6)
    model, _ = train_stage1_only(tr, va, FAST)
    scores = stage1_scores(model.params, va.z)
    assert abs(auroc(scores, va.y.astype(int)) - 0.5) < 0.05


def test_kamiran_mode_changes_training():
    tr, va = _splits(n=400, seed=7)
    # make group 1 mostly positive so the weights are non-trivial
    y = tr.y.copy()
    y[tr.groups[:, 0] == 1] = 1.0
    y[np.flatnonzero(tr.groups[:, 0] == 1)[:3]] = 0.0
    tr = SplitData(tr.x, tr.s, y, tr.groups, tr.z)
    plain, _ = train_dnn(tr, va, FAST)
    rw, _ = train_dnn(tr, va, PredictorConfig(
        hidden=8, epochs=25, patience=25, learning_rate=3e-3,
        reweighting="kamiran"))
    assert any(not np.array_equal(plain.params[k], rw.params[k])
               for k in plain.params)


def test_predictor_loss_gradient_matches_finite_differences():
    tr, _ = _splits(n=8, seed=8)
    model = AttentionPredictor.initialize(M, J, K, hidden=6, seed=1)
    from primed.predictor import _attention_logits, _bce_loss

    def build(g, pt):
        ones = g.constant(np.ones((tr.n, 1)))
        logits = _attention_logits(g, pt, g.constant(tr.x), g.constant(tr.s),
                                   g.constant(tr.z), ones)
        return _bce_loss(g, logits, tr.y)

    assert grad_check(build, model.params) < 1e-4


def test_config_validation_aggregates_problems():
    with pytest.raises(ValueError) as exc:
        PredictorConfig(epochs=0, learning_rate=-1.0, reweighting="smote")
    msg = str(exc.value)
    assert "epochs" in msg and "learning_rate" in msg and "smote" in msg


def test_dnn_initialize_shapes():
    m = DnnModel.initialize(5, 4, hidden=16, seed=0)
    assert m.params["w1_x"].shape == (5, 16)
    assert m.params["w1_s"].shape == (4, 16)
    assert m.params["w2"].shape == (16, 1)
