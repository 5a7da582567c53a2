"""Stage 2 and baselines: outcome models over (x, s, z).

Four model families share one training loop (mini-batch BCE on logits,
adaptive-moment updates, early stopping on validation AUROC):

- AttentionPredictor: the full pipeline head. The substitute confounder z
  gates the inputs through two softmax attention maps, w_x = softmax(A_x z)
  and w_s = softmax(A_s z), and an MLP reads [x*w_x; s*w_s; z].
- DnnModel: plain MLP on [x; s], the unweighted baseline. With kamiran
  reweighting enabled its BCE is weighted per (group, label) cell.
- ProjectionPredictor: the attention head with the CVAE code replaced by a
  learned linear projection of (x, s); isolates what the inferred
  confounder itself contributes.
- LogisticModel: logistic regression on z alone; isolates how much outcome
  signal the confounder carries without the raw inputs.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from primed import kernels as K
from primed import metrics
from primed.autodiff import Graph, ShapeError
from primed.data import Dataset, DataError, encode_sensitive_matrix
from primed.optim import AdamW


@dataclass(frozen=True)
class PredictorConfig:
    hidden: int = 64
    epochs: int = 1000              # upper bound; early stopping usually ends sooner
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    patience: int = 10              # epochs without validation AUROC improvement
    seed: int = 0
    reweighting: str = "none"       # "none" | "kamiran"
    reweight_attribute: int = 0     # sensitive attribute the reweighting balances

    def __post_init__(self):
        problems = []
        if self.reweighting not in ("none", "kamiran"):
            problems.append(f"unknown reweighting mode {self.reweighting!r}")
        if self.patience < 1 or self.epochs < 1 or self.batch_size < 1:
            problems.append("epochs, batch_size and patience must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            problems.append("learning_rate must be > 0 and weight_decay >= 0")
        if self.reweight_attribute < 0:
            problems.append(f"reweight_attribute must be >= 0, got {self.reweight_attribute}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True)
class SplitData:
    """Arrays one split contributes to training: standardized features,
    one-hot sensitive encoding, labels, raw group indices, optional code."""

    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    groups: np.ndarray
    z: np.ndarray | None = None

    @classmethod
    def from_dataset(cls, ds: Dataset, z: np.ndarray | None = None) -> "SplitData":
        return cls(ds.features, encode_sensitive_matrix(ds),
                   ds.labels.astype(np.float64), ds.sensitive, z)

    def with_z(self, z: np.ndarray) -> "SplitData":
        if z.shape[0] != self.n:
            raise ShapeError(f"code rows {z.shape[0]} != split rows {self.n}")
        return SplitData(self.x, self.s, self.y, self.groups, z)

    @property
    def n(self) -> int:
        return self.x.shape[0]


# ------------------------------------------------------------------- models

@dataclass
class AttentionPredictor:
    num_features: int
    encoded_sensitive: int
    latent_dim: int
    hidden: int
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, m, j, k, hidden=64, seed=0):
        rng = np.random.default_rng([seed, 409])

        def dense(fi, fo):
            return rng.standard_normal((fi, fo)) / np.sqrt(fi)

        params = {
            # (m, k): one attention logit per feature from z, softmaxed over features
            "att_x": rng.standard_normal((m, k)) / np.sqrt(k),
            "att_s": rng.standard_normal((j, k)) / np.sqrt(k),
            "w1_x": dense(m, hidden),
            "w1_s": dense(j, hidden),
            "w1_z": dense(k, hidden),
            "b1": np.zeros((1, hidden)),
            "w2": dense(hidden, 1),
            "b2": np.zeros((1, 1)),
        }
        return cls(m, j, k, hidden, params)


@dataclass
class DnnModel:
    num_features: int
    encoded_sensitive: int
    hidden: int
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, m, j, hidden=64, seed=0):
        rng = np.random.default_rng([seed, 521])

        def dense(fi, fo):
            return rng.standard_normal((fi, fo)) / np.sqrt(fi)

        params = {
            "w1_x": dense(m, hidden),
            "w1_s": dense(j, hidden),
            "b1": np.zeros((1, hidden)),
            "w2": dense(hidden, 1),
            "b2": np.zeros((1, 1)),
        }
        return cls(m, j, hidden, params)


@dataclass
class ProjectionPredictor:
    """Attention head fed by a learned linear map of (x, s) instead of a code."""

    num_features: int
    encoded_sensitive: int
    latent_dim: int
    hidden: int
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, m, j, k, hidden=64, seed=0):
        rng = np.random.default_rng([seed, 631])

        def dense(fi, fo):
            return rng.standard_normal((fi, fo)) / np.sqrt(fi)

        base = AttentionPredictor.initialize(m, j, k, hidden, seed)
        params = dict(base.params)
        params["proj_x"] = dense(m, k)
        params["proj_s"] = dense(j, k)
        params["proj_b"] = np.zeros((1, k))
        return cls(m, j, k, hidden, params)


@dataclass
class LogisticModel:
    latent_dim: int
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, k, seed=0):
        rng = np.random.default_rng([seed, 733])
        return cls(k, {"w": rng.standard_normal((k, 1)) / np.sqrt(k),
                       "b": np.zeros((1, 1))})


# ------------------------------------------------------------ numpy forward

def attention_weights(model, z: np.ndarray):
    """(w_x, w_s) for one latent vector; each sums to 1.

    Shifting every attention logit by a constant leaves the weights
    unchanged (softmax shift invariance), so only logit differences matter.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"expected latent vector of length {model.latent_dim}, "
                         f"got shape {z.shape}")
    wx = K.softmax_fw(np.ascontiguousarray((model.params["att_x"] @ z).reshape(1, -1)))
    ws = K.softmax_fw(np.ascontiguousarray((model.params["att_s"] @ z).reshape(1, -1)))
    return wx[0], ws[0]


def primed_scores(params, x, s, z):
    wx = K.softmax_fw(np.ascontiguousarray(z @ params["att_x"].T))
    ws = K.softmax_fw(np.ascontiguousarray(z @ params["att_s"].T))
    h = K.tanh_fw((x * wx) @ params["w1_x"] + (s * ws) @ params["w1_s"]
                  + z @ params["w1_z"] + params["b1"])
    return K.sigmoid_fw(h @ params["w2"] + params["b2"])[:, 0]


def dnn_scores(params, x, s):
    h = K.tanh_fw(x @ params["w1_x"] + s @ params["w1_s"] + params["b1"])
    return K.sigmoid_fw(h @ params["w2"] + params["b2"])[:, 0]


def stage2_scores(params, x, s):
    z = x @ params["proj_x"] + s @ params["proj_s"] + params["proj_b"]
    return primed_scores(params, x, s, z)


def stage1_scores(params, z):
    return K.sigmoid_fw(z @ params["w"] + params["b"])[:, 0]


def predict(model, x: np.ndarray, s: np.ndarray, z: np.ndarray) -> float:
    """Positive-class probability for one record under the full pipeline
    head; sigmoid of the MLP logit, so monotone in that logit."""
    x = np.asarray(x, dtype=np.float64).reshape(1, -1)
    s = np.asarray(s, dtype=np.float64).reshape(1, -1)
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    if x.shape[1] != model.num_features or s.shape[1] != model.encoded_sensitive \
            or z.shape[1] != model.latent_dim:
        raise ShapeError(
            f"expected lengths ({model.num_features}, {model.encoded_sensitive}, "
            f"{model.latent_dim}), got ({x.shape[1]}, {s.shape[1]}, {z.shape[1]})")
    return float(primed_scores(model.params, x, s, z)[0])


# -------------------------------------------------------------- reweighting

def kamiran_weights(groups: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Per-record weight P(g)P(y) / P(g,y) over one sensitive attribute.

    Under these weights group membership and label are independent while
    the weighted totals of every label value (and every group) stay exactly
    what they were, e.g. weighted positive mass equals the raw positive
    count. An empty (group, label) cell has no defined weight and is an
    error.
    """
    groups = np.asarray(groups)
    labels = np.asarray(labels)
    if groups.shape != labels.shape or groups.ndim != 1:
        raise ValueError(f"groups and labels must be matching vectors, got "
                         f"{groups.shape} and {labels.shape}")
    n = groups.size
    weights = np.empty(n, dtype=np.float64)
    for gval in np.unique(groups):
        g_mask = groups == gval
        for yval in (0, 1):
            cell = g_mask & (labels == yval)
            if not cell.any():
                raise DataError(f"kamiran weights undefined: no records with "
                                f"group={gval}, label={yval}")
            weights[cell] = (g_mask.sum() * (labels == yval).sum()) / (n * cell.sum())
    return weights


# ----------------------------------------------------------------- training

def _bias(g, ones_b1, b):
    return g.matmul(ones_b1, b)


def _attention_logits(g, pt, xc, sc, zt, ones_b1):
    wx = g.softmax_rows(g.matmul(zt, g.transpose(pt["att_x"])))
    ws = g.softmax_rows(g.matmul(zt, g.transpose(pt["att_s"])))
    h = g.tanh(g.add(
        g.add(g.matmul(g.mul(xc, wx), pt["w1_x"]),
              g.matmul(g.mul(sc, ws), pt["w1_s"])),
        g.add(g.matmul(zt, pt["w1_z"]), _bias(g, ones_b1, pt["b1"]))))
    return g.add(g.matmul(h, pt["w2"]), _bias(g, ones_b1, pt["b2"]))


def _bce_loss(g, logits, y, weights=None):
    losses = g.bce_logits(logits, g.constant(y.reshape(-1, 1)))
    if weights is not None:
        losses = g.mul(losses, g.constant(weights.reshape(-1, 1)))
    return g.scale(g.reduce_sum(losses), 1.0 / y.size)


def _fit(params, build_batch_loss, val_scores, val_y, config):
    """Shared loop: epochs of shuffled mini-batches, early stopping on
    validation AUROC with the configured patience, best weights restored.

    Returns (best params, per-epoch mean training loss). When validation
    AUROC is undefined (one-class validation labels) there is no stopping
    signal, so training runs to the epoch cap and keeps the final weights.
    """
    opt = AdamW(lr=config.learning_rate, weight_decay=config.weight_decay)
    rng = np.random.default_rng([config.seed, 307])
    n = build_batch_loss.n_train
    best_params = {k: v.copy() for k, v in params.items()}
    best_auroc = -np.inf
    stale = 0
    trace = []
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            g = Graph()
            pt = {name: g.parameter(v) for name, v in params.items()}
            loss = build_batch_loss(g, pt, idx)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch start {start}")
            epoch_loss += loss.item() * idx.size
            grads = g.backward(loss)
            params = opt.step(params, {name: grads[pt[name].nid] for name in pt})
        trace.append(epoch_loss / n)
        try:
            v = metrics.auroc(val_scores(params), val_y)
        except metrics.UndefinedMetricError:
            best_params = {k: v2.copy() for k, v2 in params.items()}
            continue
        if v > best_auroc:
            best_auroc = v
            best_params = {k: v2.copy() for k, v2 in params.items()}
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return best_params, trace


def _require_z(split: SplitData, who: str):
    if split.z is None:
        raise DataError(f"{who} needs substitute confounders; run stage 1 first")


def train_primed(train: SplitData, val: SplitData, config: PredictorConfig,
                 model: AttentionPredictor | None = None):
    """Fit the attention head on (x, s, z); returns (model, loss trace)."""
    _require_z(train, "the full pipeline head")
    _require_z(val, "the full pipeline head")
    if model is None:
        model = AttentionPredictor.initialize(
            train.x.shape[1], train.s.shape[1], train.z.shape[1],
            config.hidden, config.seed)

    def build(g, pt, idx):
        ones_b1 = g.constant(np.ones((idx.size, 1)))
        logits = _attention_logits(g, pt, g.constant(train.x[idx]),
                                   g.constant(train.s[idx]),
                                   g.constant(train.z[idx]), ones_b1)
        return _bce_loss(g, logits, train.y[idx])

    build.n_train = train.n
    model.params, trace = _fit(
        model.params, build,
        lambda p: primed_scores(p, val.x, val.s, val.z), val.y, config)
    return model, trace


def train_dnn(train: SplitData, val: SplitData, config: PredictorConfig,
              model: DnnModel | None = None):
    """Fit the plain MLP baseline, optionally kamiran-reweighted."""
    if model is None:
        model = DnnModel.initialize(train.x.shape[1], train.s.shape[1],
                                    config.hidden, config.seed)
    weights = None
    if config.reweighting == "kamiran":
        weights = kamiran_weights(train.groups[:, config.reweight_attribute], train.y)

    def build(g, pt, idx):
        ones_b1 = g.constant(np.ones((idx.size, 1)))
        h = g.tanh(g.add(
            g.add(g.matmul(g.constant(train.x[idx]), pt["w1_x"]),
                  g.matmul(g.constant(train.s[idx]), pt["w1_s"])),
            _bias(g, ones_b1, pt["b1"])))
        logits = g.add(g.matmul(h, pt["w2"]), _bias(g, ones_b1, pt["b2"]))
        return _bce_loss(g, logits, train.y[idx],
                         None if weights is None else weights[idx])

    build.n_train = train.n
    model.params, trace = _fit(
        model.params, build,
        lambda p: dnn_scores(p, val.x, val.s), val.y, config)
    return model, trace


def train_stage1_only(train: SplitData, val: SplitData, config: PredictorConfig):
    """Logistic regression on the substitute confounder alone."""
    _require_z(train, "the code-only ablation")
    _require_z(val, "the code-only ablation")
    model = LogisticModel.initialize(train.z.shape[1], config.seed)

    def build(g, pt, idx):
        ones_b1 = g.constant(np.ones((idx.size, 1)))
        logits = g.add(g.matmul(g.constant(train.z[idx]), pt["w"]),
                       _bias(g, ones_b1, pt["b"]))
        return _bce_loss(g, logits, train.y[idx])

    build.n_train = train.n
    model.params, trace = _fit(
        model.params, build, lambda p: stage1_scores(p, val.z), val.y, config)
    return model, trace


def train_stage2_only(train: SplitData, val: SplitData, config: PredictorConfig,
                      latent_dim: int = 8):
    """Attention head without stage 1: the code slot is a learned linear
    projection of (x, s) trained jointly with the head."""
    model = ProjectionPredictor.initialize(
        train.x.shape[1], train.s.shape[1], latent_dim, config.hidden, config.seed)

    def build(g, pt, idx):
        ones_b1 = g.constant(np.ones((idx.size, 1)))
        xc = g.constant(train.x[idx])
        sc = g.constant(train.s[idx])
        zt = g.add(g.add(g.matmul(xc, pt["proj_x"]), g.matmul(sc, pt["proj_s"])),
                   _bias(g, ones_b1, pt["proj_b"]))
        logits = _attention_logits(g, pt, xc, sc, zt, ones_b1)
        return _bce_loss(g, logits, train.y[idx])

    build.n_train = train.n
    model.params, trace = _fit(
        model.params, build,
        lambda p: stage2_scores(p, val.x, val.s), val.y, config)
    return model, trace
