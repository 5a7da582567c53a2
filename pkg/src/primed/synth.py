"""Synthetic tabular generator with a known confounding structure.

Records are drawn from a linear-Gaussian structural model: a latent
confounder z drives both the features and the outcome, sensitive attributes
shift the features and the outcome logit, and gamma dials how much of the
outcome depends on z. Because z is never included in the emitted dataset,
gamma controls the strength of unobserved confounding, which is the knob
the pilot sweep turns to study disparity.

    s_j ~ Bernoulli(minority_prob)                    per attribute
    z   ~ N(0, I_latent_dim)
    x   = A z + eta * B s_onehot + noise * N(0, I)
    y   ~ Bernoulli(sigmoid(c_x.x + eta*c_s.s_onehot + gamma*c_z.z + b0))

All coefficient matrices are drawn once per seed with N(0,1)/sqrt(fan-in)
entries; b0 is calibrated so the empirical positive rate lands near 0.5.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from primed import metrics
from primed import kernels as K
from primed.data import Dataset, SensitiveSchema, split, standardize


@dataclass(frozen=True)
class SynthConfig:
    n: int = 5000
    num_features: int = 20
    latent_dim: int = 4             # dimension of the true confounder
    num_attributes: int = 1         # binary sensitive attributes
    minority_prob: float = 0.2      # P(category "1") per attribute
    gamma: float = 1.0              # confounder -> outcome strength
    eta: float = 1.5                # sensitive -> feature/outcome strength
    noise: float = 1.0              # feature noise scale
    seed: int = 0

    def __post_init__(self):
        problems = []
        if self.n < 1:
            problems.append(f"n must be >= 1, got {self.n}")
        if self.num_features < 1 or self.latent_dim < 1 or self.num_attributes < 1:
            problems.append("num_features, latent_dim and num_attributes must be >= 1")
        if not 0.0 < self.minority_prob <= 0.5:
            problems.append(f"minority_prob must lie in (0, 0.5], got {self.minority_prob}")
        if self.gamma < 0.0 or self.eta < 0.0:
            problems.append(f"gamma and eta must be >= 0, got {self.gamma}, {self.eta}")
        if self.noise <= 0.0:
            problems.append(f"noise must be > 0, got {self.noise}")
        if problems:
            raise ValueError("; ".join(problems))


@dataclass(frozen=True)
class GroundTruth:
    """Everything the generator knows that the dataset hides."""

    latents: np.ndarray             # (n, latent_dim) true confounders
    latent_loadings: np.ndarray     # (num_features, latent_dim), z -> x
    group_loadings: np.ndarray      # (num_features, encoded_length), s -> x
    feature_coefs: np.ndarray       # outcome coefficients on x
    group_coefs: np.ndarray         # outcome coefficients on one-hot s (pre-eta)
    latent_coefs: np.ndarray        # outcome coefficients on z, gamma included
    intercept: float


def _calibrate_intercept(core: np.ndarray, u: np.ndarray, target: float,
                         tol: float = 0.005) -> float:
    """Intercept making mean(u < sigmoid(core + b0)) land near target.

    With the uniform draws u frozen, the empirical rate is a nondecreasing
    step function of b0, so bisection converges deterministically. The rate
    moves in steps of 1/n, hence for tiny n the closest achievable rate is
    returned rather than one within tol.
    """
    lo, hi = -40.0, 40.0
    best_t, best_gap = 0.0, np.inf
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        rate = float(np.mean(u < K.sigmoid_fw(core + mid)))
        gap = abs(rate - target)
        if gap < best_gap:
            best_t, best_gap = mid, gap
        if gap <= tol:
            return mid
        if rate < target:
            lo = mid
        else:
            hi = mid
    return best_t


def generate(config: SynthConfig) -> tuple[Dataset, GroundTruth]:
    """Draw one dataset plus its hidden ground truth, deterministically.

    Draw order is fixed (coefficients, then attributes, latents, feature
    noise, outcome uniforms), so a given seed always produces the same
    records regardless of how the result is used.
    """
    rng = np.random.default_rng(config.seed)
    n, m, k = config.n, config.num_features, config.latent_dim
    j_enc = 2 * config.num_attributes

    latent_loadings = rng.standard_normal((m, k)) / np.sqrt(k)
    group_loadings = rng.standard_normal((m, j_enc)) / np.sqrt(j_enc)
    feature_coefs = rng.standard_normal(m) / np.sqrt(m)
    group_coefs = rng.standard_normal(j_enc) / np.sqrt(j_enc)
    latent_coefs = rng.standard_normal(k) / np.sqrt(k)

    s_idx = (rng.random((n, config.num_attributes)) < config.minority_prob).astype(np.int64)
    z = rng.standard_normal((n, k))
    x = z @ latent_loadings.T
    s_onehot = np.zeros((n, j_enc), dtype=np.float64)
    for j in range(config.num_attributes):
        s_onehot[np.arange(n), 2 * j + s_idx[:, j]] = 1.0
    x += config.eta * (s_onehot @ group_loadings.T)
    x += config.noise * rng.standard_normal((n, m))

    core = x @ feature_coefs + config.eta * (s_onehot @ group_coefs) \
        + config.gamma * (z @ latent_coefs)
    u = rng.random(n)
    intercept = _calibrate_intercept(core, u, target=0.5)
    y = (u < K.sigmoid_fw(core + intercept)).astype(np.int64)

    schema = SensitiveSchema(tuple(
        (f"group{j}" if config.num_attributes > 1 else "group", ("0", "1"))
        for j in range(config.num_attributes)))
    feature_names = tuple(f"x{i}" for i in range(m))
    dataset = Dataset(x, s_idx, y, feature_names, schema)
    truth = GroundTruth(z, latent_loadings, group_loadings, feature_coefs,
                        group_coefs, config.gamma * latent_coefs, intercept)
    return dataset, truth


# ------------------------------------------------------------------- pilot

@dataclass(frozen=True)
class PilotRun:
    gamma: float
    seed: int
    auroc: float
    disparity: float


@dataclass(frozen=True)
class PilotResult:
    runs: tuple[PilotRun, ...]
    medians: tuple[tuple[float, float, float], ...]  # (gamma, median auroc, median disparity)


def pilot_sweep(base: SynthConfig, gammas, seeds, classifier=None,
                split_ratios=(0.7, 0.2, 0.1)) -> PilotResult:
    """Measure how test disparity of a plain DNN scales with confounding.

    For every (gamma, seed): regenerate the data, split, train the baseline
    classifier, and record test AUROC plus the subgroup AUROC gap on the
    first sensitive attribute. Medians are taken over seeds per gamma level.
    """
    from primed.predictor import PredictorConfig, train_dnn, dnn_scores, SplitData

    gammas = [float(g) for g in gammas]
    seeds = [int(s) for s in seeds]
    if not gammas:
        raise ValueError("pilot_sweep: empty gamma list")
    if not seeds:
        raise ValueError("pilot_sweep: empty seed list")
    if classifier is None:
        classifier = PredictorConfig()

    runs = []
    for gamma in gammas:
        for seed in seeds:
            cfg = replace(base, gamma=gamma, seed=seed)
            dataset, _ = generate(cfg)
            train_ds, val_ds, test_ds = split(dataset, split_ratios, seed)
            (train_ds, val_ds, test_ds), _, _ = standardize(train_ds, val_ds, test_ds)
            tr = SplitData.from_dataset(train_ds)
            va = SplitData.from_dataset(val_ds)
            te = SplitData.from_dataset(test_ds)
            model, _ = train_dnn(tr, va, replace(classifier, seed=seed))
            scores = dnn_scores(model.params, te.x, te.s)
            per_group = metrics.subgroup_auroc(scores, te.y, test_ds.sensitive[:, 0])
            runs.append(PilotRun(gamma, seed, metrics.auroc(scores, te.y),
                                 metrics.disparity(per_group)))

    medians = []
    for gamma in gammas:
        rows = [r for r in runs if r.gamma == gamma]
        medians.append((gamma,
                        float(np.median([r.auroc for r in rows])),
                        float(np.median([r.disparity for r in rows]))))
    return PilotResult(tuple(runs), tuple(medians))
