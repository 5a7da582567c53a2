"""Stage 1: propensity-weighted conditional VAE over the features.

The encoder reads [x; s_onehot] and emits a Gaussian posterior over a
latent code z; the decoder reconstructs x from [z; s_onehot]. Training
maximizes the propensity-weighted sum of per-record ELBOs, so records from
rare sensitive groups count for more and the learned code cannot simply
ignore them. After training, the posterior mean is the substitute
confounder handed to stage 2.

Conventions fixed here and relied on by the tests:
- posterior log-variance is clamped to [-10, 10] before any use;
- the prior is N(0, I); KL(q || prior) has the closed form
  0.5 * sum(exp(logvar) + mu^2 - 1 - logvar);
- the reconstruction likelihood is a unit-variance Gaussian, so a sample's
  log-likelihood is -0.5 * ||x - xhat||^2 up to an additive constant that
  is dropped (it cancels in gradients). Hence every reported ELBO is <= 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from primed import kernels as K
from primed.autodiff import Graph, ShapeError
from primed.optim import AdamW

LOGVAR_MIN = -10.0
LOGVAR_MAX = 10.0


@dataclass(frozen=True)
class CvaeConfig:
    latent_dim: int = 8
    hidden: int = 64
    samples: int = 1            # Monte Carlo samples per record per step
    epochs: int = 50
    batch_size: int = 128
    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.latent_dim < 1 or self.hidden < 1:
            problems.append("latent_dim and hidden must be >= 1")
        if self.samples < 1:
            problems.append(f"samples must be >= 1, got {self.samples}")
        if self.epochs < 1 or self.batch_size < 1:
            problems.append("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            problems.append("learning_rate must be > 0 and weight_decay >= 0")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass
class CvaeModel:
    num_features: int
    encoded_sensitive: int
    latent_dim: int
    hidden: int
    params: dict[str, np.ndarray]

    @classmethod
    def initialize(cls, num_features: int, encoded_sensitive: int,
                   latent_dim: int = 8, hidden: int = 64, seed: int = 0) -> "CvaeModel":
        rng = np.random.default_rng([seed, 101])
        m, j, k, h = num_features, encoded_sensitive, latent_dim, hidden

        def dense(fan_in, fan_out):
            return rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)

        params = {
            # encoder: first layer split by input block, two heads
            "enc_w_x": dense(m, h),
            "enc_w_s": dense(j, h),
            "enc_b": np.zeros((1, h)),
            "mu_w": dense(h, k),
            "mu_b": np.zeros((1, k)),
            "logvar_w": dense(h, k),
            "logvar_b": np.zeros((1, k)),
            # decoder: [z; s] -> hidden -> x
            "dec_w_z": dense(k, h),
            "dec_w_s": dense(j, h),
            "dec_b": np.zeros((1, h)),
            "out_w": dense(h, m),
            "out_b": np.zeros((1, m)),
        }
        return cls(m, j, k, h, params)


# ------------------------------------------------------------ numpy forward

def _encode_batch(params, x: np.ndarray, s: np.ndarray):
    h = K.tanh_fw(x @ params["enc_w_x"] + s @ params["enc_w_s"] + params["enc_b"])
    mu = h @ params["mu_w"] + params["mu_b"]
    logvar = np.clip(h @ params["logvar_w"] + params["logvar_b"],
                     LOGVAR_MIN, LOGVAR_MAX)
    return mu, logvar


def _decode_batch(params, z: np.ndarray, s: np.ndarray):
    h = K.tanh_fw(z @ params["dec_w_z"] + s @ params["dec_w_s"] + params["dec_b"])
    return h @ params["out_w"] + params["out_b"]


def encode(model: CvaeModel, x: np.ndarray, s: np.ndarray):
    """Posterior (mu, logvar) for one record; logvar already clamped."""
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x.shape != (model.num_features,):
        raise ShapeError(f"expected feature vector of length {model.num_features}, "
                         f"got shape {x.shape}")
    if s.shape != (model.encoded_sensitive,):
        raise ShapeError(f"expected encoded sensitive vector of length "
                         f"{model.encoded_sensitive}, got shape {s.shape}")
    mu, logvar = _encode_batch(model.params, x.reshape(1, -1), s.reshape(1, -1))
    return mu[0], logvar[0]


def decode(model: CvaeModel, z: np.ndarray, s: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"expected latent vector of length {model.latent_dim}, "
                         f"got shape {z.shape}")
    return _decode_batch(model.params, z.reshape(1, -1), s.reshape(1, -1))[0]


def reparameterize(mu: np.ndarray, logvar: np.ndarray, eps: np.ndarray) -> np.ndarray:
    """z = mu + exp(logvar / 2) * eps, elementwise."""
    mu, logvar, eps = (np.asarray(a, dtype=np.float64) for a in (mu, logvar, eps))
    if not (mu.shape == logvar.shape == eps.shape):
        raise ShapeError(f"mu, logvar, eps shapes differ: {mu.shape}, "
                         f"{logvar.shape}, {eps.shape}")
    return mu + np.exp(0.5 * logvar) * eps


def kl_standard_normal(mu: np.ndarray, logvar: np.ndarray) -> float:
    """KL( N(mu, diag(exp(logvar))) || N(0, I) ), closed form, >= 0."""
    mu = np.asarray(mu, dtype=np.float64)
    logvar = np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ShapeError(f"mu shape {mu.shape} != logvar shape {logvar.shape}")
    return float(0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar))


def log_likelihood(x: np.ndarray, xhat: np.ndarray) -> float:
    """Unit-variance Gaussian log-likelihood, constants dropped."""
    d = np.asarray(x, dtype=np.float64) - np.asarray(xhat, dtype=np.float64)
    return float(-0.5 * np.dot(d, d))


def elbo(model: CvaeModel, x: np.ndarray, s: np.ndarray,
         eps: np.ndarray) -> float:
    """Monte Carlo ELBO for one record given (samples, latent_dim) noise.

    -KL + mean over samples of the reconstruction log-likelihood. With the
    dropped likelihood constant this is always <= 0.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.ndim != 2 or eps.shape[1] != model.latent_dim:
        raise ShapeError(f"eps must be (samples, {model.latent_dim}), got {eps.shape}")
    mu, logvar = encode(model, x, s)
    recon = 0.0
    for row in eps:
        z = reparameterize(mu, logvar, row)
        recon += log_likelihood(np.asarray(x, dtype=np.float64), decode(model, z, s))
    return recon / eps.shape[0] - kl_standard_normal(mu, logvar)


# ------------------------------------------------------------- training

def _batch_loss(g: Graph, pt: dict, x: np.ndarray, s: np.ndarray,
                weights: np.ndarray, eps: np.ndarray):
    """Graph for -(1/B) * sum_i w_i * ELBO_i over one batch.

    Biases enter through an all-ones column so every combine is an exact
    matmul; the first layers are split per input block for the same reason.
    """
    b, m = x.shape
    k = eps.shape[2]
    xc = g.constant(x)
    sc = g.constant(s)
    ones_b1 = g.constant(np.ones((b, 1)))
    ones_bk = g.constant(np.ones((b, k)))
    col_k = g.constant(np.ones((k, 1)))
    col_m = g.constant(np.ones((m, 1)))

    h = g.tanh(g.add(g.add(g.matmul(xc, pt["enc_w_x"]), g.matmul(sc, pt["enc_w_s"])),
                     g.matmul(ones_b1, pt["enc_b"])))
    mu = g.add(g.matmul(h, pt["mu_w"]), g.matmul(ones_b1, pt["mu_b"]))
    logvar = g.clip(g.add(g.matmul(h, pt["logvar_w"]), g.matmul(ones_b1, pt["logvar_b"])),
                    LOGVAR_MIN, LOGVAR_MAX)

    # 0.5 * sum_k (exp(lv) + mu^2 - 1 - lv) per record, as a column
    kl_terms = g.sub(g.add(g.exp(logvar), g.mul(mu, mu)), g.add(ones_bk, logvar))
    kl = g.scale(g.matmul(kl_terms, col_k), 0.5)

    std = g.exp(g.scale(logvar, 0.5))
    recon_sum = None
    for l in range(eps.shape[0]):
        z = g.add(mu, g.mul(std, g.constant(eps[l])))
        hd = g.tanh(g.add(g.add(g.matmul(z, pt["dec_w_z"]), g.matmul(sc, pt["dec_w_s"])),
                          g.matmul(ones_b1, pt["dec_b"])))
        xhat = g.add(g.matmul(hd, pt["out_w"]), g.matmul(ones_b1, pt["out_b"]))
        diff = g.sub(xc, xhat)
        sq = g.matmul(g.mul(diff, diff), col_m)
        recon_sum = sq if recon_sum is None else g.add(recon_sum, sq)
    recon = g.scale(recon_sum, -0.5 / eps.shape[0])

    elbo_col = g.sub(recon, kl)
    weighted = g.mul(elbo_col, g.constant(weights.reshape(b, 1)))
    return g.scale(g.reduce_sum(weighted), -1.0 / b)


def weighted_elbo_total(model: CvaeModel, x: np.ndarray, s: np.ndarray,
                        weights: np.ndarray, eps: np.ndarray) -> float:
    """sum_i w_i * ELBO_i over a whole matrix, the trained objective."""
    mu, logvar = _encode_batch(model.params, x, s)
    recon = np.zeros(x.shape[0])
    for l in range(eps.shape[0]):
        z = mu + np.exp(0.5 * logvar) * eps[l]
        xhat = _decode_batch(model.params, z, s)
        recon += -0.5 * np.sum((x - xhat) ** 2, axis=1)
    recon /= eps.shape[0]
    kl = 0.5 * np.sum(np.exp(logvar) + mu * mu - 1.0 - logvar, axis=1)
    return float(np.sum(weights * (recon - kl)))


def train(x: np.ndarray, s: np.ndarray, weights: np.ndarray,
          config: CvaeConfig) -> tuple[CvaeModel, list[float]]:
    """Fit the weighted CVAE; returns the model and the per-epoch objective.

    The trace entry for epoch e is the weighted ELBO total over the full
    training matrix, evaluated with noise drawn from a stream keyed by
    (seed, epoch) so the trace is deterministic.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    n = x.shape[0]
    if s.shape[0] != n or weights.shape != (n,):
        raise ShapeError(f"inconsistent row counts: x {x.shape}, s {s.shape}, "
                         f"weights {weights.shape}")
    if np.any(weights < 0):
        raise ValueError("propensity weights must be non-negative")

    model = CvaeModel.initialize(x.shape[1], s.shape[1], config.latent_dim,
                                 config.hidden, config.seed)
    opt = AdamW(lr=config.learning_rate, weight_decay=config.weight_decay)
    batch_rng = np.random.default_rng([config.seed, 211])
    # one fixed noise draw for the whole trace, so epoch-to-epoch trace
    # differences reflect parameter movement only
    eval_eps = np.random.default_rng([config.seed, 977]).standard_normal(
        (config.samples, n, config.latent_dim))
    trace = []
    for epoch in range(config.epochs):
        order = batch_rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            eps = batch_rng.standard_normal((config.samples, idx.size, config.latent_dim))
            g = Graph()
            pt = {name: g.parameter(v) for name, v in model.params.items()}
            loss = _batch_loss(g, pt, x[idx], s[idx], weights[idx], eps)
            if not np.isfinite(loss.item()):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, batch start {start}")
            grads = g.backward(loss)
            model.params = opt.step(model.params,
                                    {name: grads[pt[name].nid] for name in pt})
        trace.append(weighted_elbo_total(model, x, s, weights, eval_eps))
    return model, trace


def infer_substitute_confounders(model: CvaeModel, x: np.ndarray,
                                 s: np.ndarray) -> np.ndarray:
    """Posterior means for a feature/sensitive matrix pair.

    The mean, not a sample, is the substitute confounder: downstream
    training stays deterministic and the code is the posterior's best
    point summary.
    """
    x = np.asarray(x, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.num_features:
        raise ShapeError(f"expected (n, {model.num_features}) features, got {x.shape}")
    if s.shape != (x.shape[0], model.encoded_sensitive):
        raise ShapeError(f"expected (n, {model.encoded_sensitive}) encoded sensitive "
                         f"matrix, got {s.shape}")
    mu, _ = _encode_batch(model.params, x, s)
    return mu


# ----------------------------------------------------------- checkpointing

def model_meta(model: CvaeModel) -> dict:
    return {
        "num_features": model.num_features,
        "encoded_sensitive": model.encoded_sensitive,
        "latent_dim": model.latent_dim,
        "hidden": model.hidden,
    }


def model_from_checkpoint(meta: dict, arrays: dict[str, np.ndarray],
                          prefix: str = "param.") -> CvaeModel:
    params = {name[len(prefix):]: arr for name, arr in arrays.items()
              if name.startswith(prefix)}
    return CvaeModel(meta["num_features"], meta["encoded_sensitive"],
                     meta["latent_dim"], meta["hidden"], params)
