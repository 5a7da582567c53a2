"""Experiment harness: config parsing/validation, the compare and pilot
runs, latent export, and artifact writing.

Every run is driven by one JSON config. Validation reports every problem
it can find in one pass rather than stopping at the first. All artifacts
are written without timestamps so a rerun with the same config produces
byte-identical files.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, fields, asdict, replace

import numpy as np

from primed import cvae, metrics
from primed.checkpoint import save_checkpoint, load_checkpoint
from primed.data import (Dataset, DataError, load_csv, split_indices, standardize,
                         attribute_frequencies, propensity_weights)
from primed.predictor import (PredictorConfig, SplitData, train_dnn, train_primed,
                              train_stage1_only, train_stage2_only, dnn_scores,
                              primed_scores, stage1_scores, stage2_scores)
from primed.synth import SynthConfig, generate, pilot_sweep

METHODS = ("dnn", "reweighted", "primed", "stage1_only", "stage2_only")


class ConfigError(ValueError):
    """Invalid experiment configuration; carries every diagnostic found."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(self.diagnostics))


@dataclass(frozen=True)
class SplitSpec:
    ratios: tuple[float, float, float] = (0.7, 0.2, 0.1)
    seed: int = 0


@dataclass(frozen=True)
class CsvSpec:
    path: str
    features: tuple[str, ...]
    sensitive: tuple[str, ...]
    label: str
    missing: str = "strict"


@dataclass(frozen=True)
class ExperimentConfig:
    synth: SynthConfig | None
    csv: CsvSpec | None
    split: SplitSpec
    cvae: cvae.CvaeConfig
    predictor: PredictorConfig
    methods: tuple[str, ...]
    threshold: float = 0.5
    output_dir: str | None = None

    def snapshot(self) -> dict:
        """JSON-ready view of the fully defaulted config, minus output_dir
        (an environment detail, not part of the experiment's identity)."""
        out = {
            "dataset": ({"synth": asdict(self.synth)} if self.synth is not None
                        else {"csv": asdict(self.csv)}),
            "split": asdict(self.split),
            "cvae": asdict(self.cvae),
            "predictor": asdict(self.predictor),
            "methods": list(self.methods),
            "threshold": self.threshold,
        }
        return out


_FIELD_TYPES = {
    SynthConfig: {"n": int, "num_features": int, "latent_dim": int,
                  "num_attributes": int, "minority_prob": float, "gamma": float,
                  "eta": float, "noise": float, "seed": int},
    cvae.CvaeConfig: {"latent_dim": int, "hidden": int, "samples": int,
                      "epochs": int, "batch_size": int, "learning_rate": float,
                      "weight_decay": float, "seed": int},
    PredictorConfig: {"hidden": int, "epochs": int, "batch_size": int,
                      "learning_rate": float, "weight_decay": float,
                      "patience": int, "seed": int, "reweighting": str,
                      "reweight_attribute": int},
    CsvSpec: {"path": str, "label": str, "missing": str},
}


def _build_section(cls, obj, label, diags):
    if not isinstance(obj, dict):
        diags.append(f"{label}: expected an object, got {type(obj).__name__}")
        return None
    names = {f.name for f in fields(cls)}
    for key in sorted(set(obj) - names):
        diags.append(f"{label}: unknown key {key!r}")
    kwargs = {}
    types = _FIELD_TYPES.get(cls, {})
    for key, value in obj.items():
        if key not in names:
            continue
        want = types.get(key)
        if want is int and (isinstance(value, bool) or not isinstance(value, int)):
            diags.append(f"{label}.{key}: expected an integer, got {value!r}")
            continue
        if want is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                diags.append(f"{label}.{key}: expected a number, got {value!r}")
                continue
            value = float(value)
        if want is str and not isinstance(value, str):
            diags.append(f"{label}.{key}: expected a string, got {value!r}")
            continue
        if isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        diags.append(f"{label}: {exc}")
        return None


def parse_config(obj: dict, base_dir: str = ".") -> ExperimentConfig:
    """Build an ExperimentConfig from parsed JSON; every violation found is
    reported together in one ConfigError."""
    diags: list[str] = []
    if not isinstance(obj, dict):
        raise ConfigError(["top level: expected a JSON object"])

    known_top = {"dataset", "split", "cvae", "predictor", "methods",
                 "threshold", "output_dir"}
    for key in sorted(set(obj) - known_top):
        diags.append(f"top level: unknown key {key!r}")

    synth_cfg = csv_cfg = None
    dataset = obj.get("dataset")
    if dataset is None:
        diags.append("dataset: section is required")
    elif not isinstance(dataset, dict):
        diags.append("dataset: expected an object")
    elif set(dataset) == {"synth"}:
        synth_cfg = _build_section(SynthConfig, dataset["synth"], "dataset.synth", diags)
    elif set(dataset) == {"csv"}:
        csv_cfg = _build_section(CsvSpec, dataset["csv"], "dataset.csv", diags)
        if csv_cfg is not None:
            if not csv_cfg.features:
                diags.append("dataset.csv.features: at least one feature column")
            if not csv_cfg.sensitive:
                diags.append("dataset.csv.sensitive: at least one sensitive column")
            if csv_cfg.missing not in ("strict", "impute"):
                diags.append(f"dataset.csv.missing: expected 'strict' or 'impute', "
                             f"got {csv_cfg.missing!r}")
            if not os.path.isabs(csv_cfg.path):
                csv_cfg = replace(csv_cfg, path=os.path.join(base_dir, csv_cfg.path))
    else:
        diags.append("dataset: exactly one of 'synth' or 'csv' is required")

    split_cfg = _build_section(SplitSpec, obj.get("split", {}), "split", diags)
    if split_cfg is not None:
        r = split_cfg.ratios
        if (not isinstance(r, tuple) or len(r) != 3
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in r)):
            diags.append(f"split.ratios: expected 3 numbers, got {r!r}")
        else:
            split_cfg = replace(split_cfg, ratios=tuple(float(v) for v in r))
            if any(v <= 0 for v in split_cfg.ratios):
                diags.append(f"split.ratios: all ratios must be positive, got {r!r}")
            elif abs(sum(split_cfg.ratios) - 1.0) > 1e-9:
                diags.append(f"split.ratios: must sum to 1, got sum {sum(r)!r}")
        if not isinstance(split_cfg.seed, int) or isinstance(split_cfg.seed, bool):
            diags.append(f"split.seed: expected an integer, got {split_cfg.seed!r}")

    cvae_cfg = _build_section(cvae.CvaeConfig, obj.get("cvae", {}), "cvae", diags)
    pred_cfg = _build_section(PredictorConfig, obj.get("predictor", {}), "predictor", diags)

    methods = obj.get("methods", ["dnn", "primed"])
    if (not isinstance(methods, list) or not methods
            or not all(isinstance(m, str) for m in methods)):
        diags.append("methods: expected a non-empty list of method names")
        methods = []
    else:
        for m in methods:
            if m not in METHODS:
                diags.append(f"methods: unknown method {m!r}; valid: {', '.join(METHODS)}")
        seen = set()
        dupes = sorted({m for m in methods if m in seen or seen.add(m)})
        if dupes:
            diags.append(f"methods: duplicate entries {dupes}")

    threshold = obj.get("threshold", 0.5)
    if isinstance(threshold, bool) or not isinstance(threshold, (int, float)):
        diags.append(f"threshold: expected a number, got {threshold!r}")
    elif not 0.0 < float(threshold) < 1.0:
        diags.append(f"threshold: must lie in (0, 1), got {threshold!r}")

    output_dir = obj.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        diags.append(f"output_dir: expected a string path, got {output_dir!r}")

    if pred_cfg is not None and synth_cfg is not None:
        if pred_cfg.reweight_attribute >= synth_cfg.num_attributes:
            diags.append(
                f"predictor.reweight_attribute: index {pred_cfg.reweight_attribute} "
                f"out of range for {synth_cfg.num_attributes} synthetic attribute(s)")
    if pred_cfg is not None and csv_cfg is not None:
        if pred_cfg.reweight_attribute >= len(csv_cfg.sensitive):
            diags.append(
                f"predictor.reweight_attribute: index {pred_cfg.reweight_attribute} "
                f"out of range for {len(csv_cfg.sensitive)} sensitive column(s)")

    if diags:
        raise ConfigError(diags)
    if output_dir is not None and not os.path.isabs(output_dir):
        output_dir = os.path.join(base_dir, output_dir)
    return ExperimentConfig(synth_cfg, csv_cfg, split_cfg, cvae_cfg, pred_cfg,
                            tuple(methods), float(threshold), output_dir)


def validate_config(path) -> ExperimentConfig:
    """Parse and fully validate a config file."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"{path}: file not found"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON: {exc}"]) from None
    return parse_config(obj, base_dir=os.path.dirname(os.path.abspath(path)))


# ----------------------------------------------------------------- running

def materialize_dataset(config: ExperimentConfig) -> Dataset:
    if config.synth is not None:
        return generate(config.synth)[0]
    spec = config.csv
    return load_csv(spec.path, spec.features, spec.sensitive, spec.label, spec.missing)


@dataclass
class MethodResult:
    method: str
    report: metrics.MetricsReport | None
    scores: np.ndarray | None
    trace: list[float]
    error: str | None = None


@dataclass
class CompareResult:
    config: ExperimentConfig
    split_hash: str
    test_ids: np.ndarray
    test_dataset: Dataset
    methods: list[MethodResult]
    cvae_trace: list[float] | None
    cvae_model: cvae.CvaeModel | None
    predictor_models: dict[str, object]
    feature_mean: np.ndarray
    feature_std: np.ndarray


def _hash_split(parts) -> str:
    h = hashlib.sha256()
    for arr in parts:
        h.update(np.ascontiguousarray(arr, dtype=np.int64).tobytes())
    return h.hexdigest()[:16]


def run_compare(config: ExperimentConfig) -> CompareResult:
    """Train every configured method on one shared split materialization.

    Methods that need the substitute confounder share a single stage-1
    model, so their differences are attributable to stage 2 alone. A method
    failure stops the run (the caller still holds the completed rows).
    """
    ds = materialize_dataset(config)
    parts = split_indices(ds.n, config.split.ratios, config.split.seed)
    split_hash = _hash_split(parts)
    train_ds, val_ds, test_ds = (ds.subset(p) for p in parts)
    (train_sd, val_sd, test_sd), mean, std = standardize(train_ds, val_ds, test_ds)

    tr = SplitData.from_dataset(train_sd)
    va = SplitData.from_dataset(val_sd)
    te = SplitData.from_dataset(test_sd)

    cvae_model = None
    cvae_trace = None
    if any(m in ("primed", "stage1_only") for m in config.methods):
        freq = attribute_frequencies(train_ds)
        weights = propensity_weights(freq, train_ds).values
        cvae_model, cvae_trace = cvae.train(tr.x, tr.s, weights, config.cvae)
        tr = tr.with_z(cvae.infer_substitute_confounders(cvae_model, tr.x, tr.s))
        va = va.with_z(cvae.infer_substitute_confounders(cvae_model, va.x, va.s))
        te = te.with_z(cvae.infer_substitute_confounders(cvae_model, te.x, te.s))

    results: list[MethodResult] = []
    models: dict[str, object] = {}
    failure = None
    for method in config.methods:
        try:
            pcfg = replace(config.predictor,
                           reweighting="kamiran" if method == "reweighted" else "none")
            if method == "dnn" or method == "reweighted":
                model, trace = train_dnn(tr, va, pcfg)
                scores = dnn_scores(model.params, te.x, te.s)
            elif method == "primed":
                model, trace = train_primed(tr, va, pcfg)
                scores = primed_scores(model.params, te.x, te.s, te.z)
            elif method == "stage1_only":
                model, trace = train_stage1_only(tr, va, pcfg)
                scores = stage1_scores(model.params, te.z)
            elif method == "stage2_only":
                model, trace = train_stage2_only(tr, va, pcfg, config.cvae.latent_dim)
                scores = stage2_scores(model.params, te.x, te.s)
            else:
                raise ValueError(f"unknown method {method!r}")
            rep = metrics.report(scores, test_ds.labels, test_ds.sensitive,
                                 ds.schema, config.threshold)
            results.append(MethodResult(method, rep, scores, trace))
            models[method] = model
        except Exception as exc:
            results.append(MethodResult(method, None, None, [], error=str(exc)))
            failure = RuntimeError(f"training failed for method {method!r}: {exc}")
            break

    out = CompareResult(config, split_hash, parts[2], test_ds, results,
                        cvae_trace, cvae_model, models, mean, std)
    if failure is not None:
        failure.partial = out
        raise failure
    return out


# ------------------------------------------------------------------ writing

def _write_csv_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(row) + "\n")


def _fmt(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_compare_outputs(result: CompareResult, out_dir) -> list[str]:
    """Write every artifact of a compare run; returns the file list.

    summary.json indexes the artifacts; everything is timestamp-free.
    """
    os.makedirs(out_dir, exist_ok=True)
    config = result.config
    written: list[tuple[str, str]] = []  # (relative name, kind)

    def path_of(name):
        return os.path.join(out_dir, name)

    with open(path_of("config.json"), "w") as fh:
        json.dump(config.snapshot(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(("config.json", "json"))

    schema = result.test_dataset.schema
    header = ["method", "status", "auroc"]
    for name in schema.names:
        header += [f"disparity_{name}", f"tpr_gap_{name}", f"fpr_gap_{name}"]
    header.append("split_hash")
    rows = []
    for mr in sorted(result.methods, key=lambda m: m.method):
        if mr.report is None:
            row = [mr.method, "failed", "NA"] + ["NA"] * (3 * len(schema.names))
        else:
            row = [mr.method, "ok", _fmt(mr.report.overall_auroc)]
            for attr in mr.report.attributes:
                row += [_fmt(attr.disparity), _fmt(attr.tpr_gap), _fmt(attr.fpr_gap)]
        row.append(result.split_hash)
        rows.append(row)
    _write_csv_rows(path_of("results.csv"), header, rows)
    written.append(("results.csv", "csv"))

    results_doc = {
        "split_hash": result.split_hash,
        "methods": {
            mr.method: ({"status": "failed", "error": mr.error} if mr.report is None
                        else {"status": "ok", "report": mr.report.to_dict()})
            for mr in result.methods
        },
    }
    with open(path_of("results.json"), "w") as fh:
        json.dump(results_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    written.append(("results.json", "json"))

    for mr in result.methods:
        if mr.report is None:
            continue
        metrics.write_report_csv(mr.report, path_of(f"metrics_{mr.method}.csv"))
        written.append((f"metrics_{mr.method}.csv", "csv"))
        metrics.write_report_json(mr.report, path_of(f"metrics_{mr.method}.json"))
        written.append((f"metrics_{mr.method}.json", "json"))

        ids = result.test_ids
        te = result.test_dataset
        score_rows = []
        for i in range(te.n):
            row = [str(int(ids[i])), repr(float(mr.scores[i])), str(int(te.labels[i]))]
            row += [te.category_of(i, j) for j in range(schema.num_attributes)]
            score_rows.append(row)
        _write_csv_rows(path_of(f"scores_{mr.method}.csv"),
                        ["record_id", "score", "label"] + list(schema.names), score_rows)
        written.append((f"scores_{mr.method}.csv", "csv"))

        _write_csv_rows(path_of(f"trace_{mr.method}.csv"),
                        ["epoch", "train_loss"],
                        [[str(e), repr(v)] for e, v in enumerate(mr.trace)])
        written.append((f"trace_{mr.method}.csv", "csv"))

    if result.cvae_trace is not None:
        _write_csv_rows(path_of("trace_cvae.csv"),
                        ["epoch", "weighted_elbo"],
                        [[str(e), repr(v)] for e, v in enumerate(result.cvae_trace)])
        written.append(("trace_cvae.csv", "csv"))

    if result.cvae_model is not None:
        save_cvae_checkpoint(path_of("cvae.ckpt"), result.cvae_model, config,
                             result.feature_mean, result.feature_std, schema)
        written.append(("cvae.ckpt", "checkpoint"))

    for method, model in result.predictor_models.items():
        arrays = {f"param.{k}": v for k, v in model.params.items()}
        arrays["feature_mean"] = result.feature_mean
        arrays["feature_std"] = result.feature_std
        save_checkpoint(path_of(f"model_{method}.ckpt"), method,
                        {"predictor": asdict(config.predictor)}, arrays)
        written.append((f"model_{method}.ckpt", "checkpoint"))

    summary = {
        "split_hash": result.split_hash,
        "methods": {mr.method: ("failed" if mr.error is not None else "ok")
                    for mr in result.methods},
        "files": [{"name": name, "kind": kind} for name, kind in sorted(written)],
    }
    with open(path_of("summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return [name for name, _ in written] + ["summary.json"]


def save_cvae_checkpoint(path, model: cvae.CvaeModel, config: ExperimentConfig,
                         mean, std, schema) -> None:
    meta = {
        **cvae.model_meta(model),
        "cvae": asdict(config.cvae),
        "schema": [[name, list(cats)] for name, cats in schema.attributes],
    }
    arrays = {f"param.{k}": v for k, v in model.params.items()}
    arrays["feature_mean"] = np.asarray(mean, dtype=np.float64)
    arrays["feature_std"] = np.asarray(std, dtype=np.float64)
    save_checkpoint(path, "cvae", meta, arrays)


def load_cvae_checkpoint(path):
    """Returns (model, meta, feature_mean, feature_std, schema attributes)."""
    _, meta, arrays = load_checkpoint(path, expected_kind="cvae")
    model = cvae.model_from_checkpoint(meta, arrays)
    schema_attrs = tuple((name, tuple(cats)) for name, cats in meta["schema"])
    return model, meta, arrays["feature_mean"], arrays["feature_std"], schema_attrs


# ------------------------------------------------------------------- pilot

def run_pilot(config: ExperimentConfig, gammas, seeds, out_dir=None):
    """Run the gamma sweep and optionally write its row/median tables."""
    if config.synth is None:
        raise ConfigError(["pilot runs need a synthetic dataset section"])
    if not list(gammas):
        raise ConfigError(["pilot: empty gamma list"])
    if not list(seeds):
        raise ConfigError(["pilot: empty seed list"])
    result = pilot_sweep(config.synth, gammas, seeds,
                         classifier=config.predictor,
                         split_ratios=config.split.ratios)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_csv_rows(os.path.join(out_dir, "pilot_runs.csv"),
                        ["gamma", "seed", "auroc", "disparity"],
                        [[repr(r.gamma), str(r.seed), repr(r.auroc), repr(r.disparity)]
                         for r in result.runs])
        _write_csv_rows(os.path.join(out_dir, "pilot_medians.csv"),
                        ["gamma", "median_auroc", "median_disparity"],
                        [[repr(g), repr(a), repr(d)] for g, a, d in result.medians])
        with open(os.path.join(out_dir, "pilot.json"), "w") as fh:
            json.dump({
                "runs": [{"gamma": r.gamma, "seed": r.seed, "auroc": r.auroc,
                          "disparity": r.disparity} for r in result.runs],
                "medians": [{"gamma": g, "median_auroc": a, "median_disparity": d}
                            for g, a, d in result.medians],
            }, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return result


# ------------------------------------------------------------ latent export

def _encode_with_stored_schema(dataset: Dataset, stored_attrs) -> np.ndarray:
    """One-hot encode under the checkpoint's category order, not the
    dataset's load order; unseen categories are an error."""
    if tuple(name for name, _ in stored_attrs) != dataset.schema.names:
        raise DataError(
            f"sensitive attributes {dataset.schema.names} do not match the "
            f"checkpoint's {tuple(name for name, _ in stored_attrs)}")
    n = dataset.n
    total = sum(len(cats) for _, cats in stored_attrs)
    out = np.zeros((n, total), dtype=np.float64)
    offset = 0
    for j, (name, cats) in enumerate(stored_attrs):
        index_of = {c: i for i, c in enumerate(cats)}
        for i in range(n):
            cat = dataset.category_of(i, j)
            if cat not in index_of:
                raise DataError(f"attribute {name!r}: category {cat!r} was not "
                                f"present when the model was trained")
            out[i, offset + index_of[cat]] = 1.0
        offset += len(cats)
    return out


def export_latent(checkpoint_path, dataset: Dataset, out_path) -> None:
    """Write per-record substitute confounders with group columns.

    Features are standardized with the statistics stored in the checkpoint
    so the codes match what the training run would have produced.
    """
    model, _, mean, std, stored_attrs = load_cvae_checkpoint(checkpoint_path)
    if dataset.num_features != model.num_features:
        raise DataError(f"dataset has {dataset.num_features} features; the "
                        f"checkpoint was trained on {model.num_features}")
    x = (dataset.features - mean) / std
    s = _encode_with_stored_schema(dataset, stored_attrs)
    z = cvae.infer_substitute_confounders(model, x, s)
    header = (["record_id"] + [f"z{i + 1}" for i in range(model.latent_dim)]
              + list(dataset.schema.names))
    rows = []
    for i in range(dataset.n):
        row = [str(i)] + [repr(float(v)) for v in z[i]]
        row += [dataset.category_of(i, j) for j in range(dataset.schema.num_attributes)]
        rows.append(row)
    _write_csv_rows(out_path, header, rows)
