"""Dataset model: CSV ingestion, splitting, encoding, propensity weights.

A Dataset is a frozen bundle of a float64 feature matrix, integer category
indices for the sensitive attributes, and binary labels. Category indices
point into a SensitiveSchema, which owns the attribute names and the
category vocabulary per attribute.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np


class DataError(ValueError):
    """Malformed input data or an operation misapplied to a dataset."""


@dataclass(frozen=True)
class SensitiveSchema:
    """Ordered (name, categories) pairs for the sensitive attributes."""

    attributes: tuple[tuple[str, tuple[str, ...]], ...]

    def __post_init__(self):
        names = [a[0] for a in self.attributes]
        if len(set(names)) != len(names):
            raise DataError(f"duplicate sensitive attribute names: {names}")
        for name, cats in self.attributes:
            if len(cats) == 0:
                raise DataError(f"attribute {name!r} has no categories")
            if len(set(cats)) != len(cats):
                raise DataError(f"attribute {name!r} has duplicate categories: {cats}")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a[0] for a in self.attributes)

    @property
    def num_attributes(self) -> int:
        return len(self.attributes)

    def categories(self, j: int) -> tuple[str, ...]:
        return self.attributes[j][1]

    @property
    def encoded_length(self) -> int:
        """Length of the concatenated one-hot encoding."""
        return sum(len(cats) for _, cats in self.attributes)


@dataclass(frozen=True)
class Record:
    """One row: feature vector, category indices, binary label."""

    x: np.ndarray
    s: tuple[int, ...]
    y: int


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray        # (n, m) float64
    sensitive: np.ndarray       # (n, num_attributes) int64 category indices
    labels: np.ndarray          # (n,) int64 in {0, 1}
    feature_names: tuple[str, ...]
    schema: SensitiveSchema

    def __post_init__(self):
        feats = np.ascontiguousarray(self.features, dtype=np.float64)
        sens = np.ascontiguousarray(self.sensitive, dtype=np.int64)
        labs = np.ascontiguousarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise DataError(f"features must be rank-2, got shape {feats.shape}")
        n = feats.shape[0]
        if n == 0:
            raise DataError("dataset has no records")
        if sens.shape != (n, self.schema.num_attributes):
            raise DataError(
                f"sensitive index shape {sens.shape} does not match "
                f"{n} records x {self.schema.num_attributes} attributes")
        if labs.shape != (n,):
            raise DataError(f"label shape {labs.shape} does not match {n} records")
        if len(self.feature_names) != feats.shape[1]:
            raise DataError(
                f"{len(self.feature_names)} feature names for {feats.shape[1]} columns")
        if not np.all(np.isfinite(feats)):
            raise DataError("features contain non-finite values")
        if not np.all((labs == 0) | (labs == 1)):
            raise DataError("labels must be 0 or 1")
        for j, (name, cats) in enumerate(self.schema.attributes):
            col = sens[:, j]
            if col.min() < 0 or col.max() >= len(cats):
                raise DataError(f"attribute {name!r} has out-of-range category indices")
        for arr in (feats, sens, labs):
            arr.flags.writeable = False
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "sensitive", sens)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "feature_names", tuple(self.feature_names))

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def record(self, i: int) -> Record:
        return Record(self.features[i], tuple(int(v) for v in self.sensitive[i]),
                      int(self.labels[i]))

    def category_of(self, i: int, j: int) -> str:
        return self.schema.categories(j)[self.sensitive[i, j]]

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.sensitive[idx], self.labels[idx],
                       self.feature_names, self.schema)

    def equals(self, other: "Dataset") -> bool:
        """Field-for-field equality, comparing categories by value.

        Category index order is an encoding artifact of load order, so two
        datasets are equal when every record carries the same feature values,
        the same category strings and the same label under the same names.
        """
        if self.feature_names != other.feature_names:
            return False
        if self.schema.names != other.schema.names:
            return False
        if self.features.shape != other.features.shape:
            return False
        if not np.array_equal(self.features, other.features):
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        for j in range(self.schema.num_attributes):
            mine = [self.category_of(i, j) for i in range(self.n)]
            theirs = [other.category_of(i, j) for i in range(other.n)]
            if mine != theirs:
                return False
        return True


# ---------------------------------------------------------------------- CSV

def load_csv(path, feature_columns, sensitive_columns, label_column,
             missing: str = "strict") -> Dataset:
    """Read a header-first CSV into a Dataset.

    Categories are assigned indices in first-appearance order. Missing
    feature cells (empty strings) are an error under missing='strict' and
    column-mean imputed under missing='impute'. Labels must parse to 0 or 1.
    """
    if missing not in ("strict", "impute"):
        raise DataError(f"unknown missing-value policy {missing!r}")
    feature_columns = list(feature_columns)
    sensitive_columns = list(sensitive_columns)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        col_index = {name: i for i, name in enumerate(header)}
        unknown = [c for c in feature_columns + sensitive_columns + [label_column]
                   if c not in col_index]
        if unknown:
            raise DataError(f"{path}: columns not in header: {unknown}")

        feat_idx = [col_index[c] for c in feature_columns]
        sens_idx = [col_index[c] for c in sensitive_columns]
        lab_idx = col_index[label_column]

        rows_x, rows_s, rows_y = [], [], []
        cats: list[dict[str, int]] = [{} for _ in sensitive_columns]
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}: row {line_no} has {len(row)} fields, "
                                f"header has {len(header)}")
            xs = []
            for c, i in zip(feature_columns, feat_idx):
                cell = row[i].strip()
                if cell == "":
                    if missing == "strict":
                        raise DataError(
                            f"{path}: missing value at row {line_no}, column {c!r}")
                    xs.append(np.nan)
                    continue
                try:
                    xs.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: non-numeric value {cell!r} at row {line_no}, "
                        f"column {c!r}") from None
            ss = []
            for j, i in enumerate(sens_idx):
                cell = row[i].strip()
                ss.append(cats[j].setdefault(cell, len(cats[j])))
            cell = row[lab_idx].strip()
            try:
                y = float(cell)
            except ValueError:
                y = None
            if y not in (0.0, 1.0):
                raise DataError(f"{path}: label {cell!r} at row {line_no}, column "
                                f"{label_column!r} is not 0 or 1")
            rows_x.append(xs)
            rows_s.append(ss)
            rows_y.append(int(y))

    if not rows_x:
        raise DataError(f"{path}: no data rows")
    features = np.asarray(rows_x, dtype=np.float64)
    if missing == "impute":
        for col in range(features.shape[1]):
            mask = np.isnan(features[:, col])
            if mask.all():
                raise DataError(
                    f"{path}: column {feature_columns[col]!r} has no observed values")
            if mask.any():
                features[mask, col] = features[~mask, col].mean()
    schema = SensitiveSchema(tuple(
        (name, tuple(c.keys())) for name, c in zip(sensitive_columns, cats)))
    return Dataset(features, np.asarray(rows_s, dtype=np.int64),
                   np.asarray(rows_y, dtype=np.int64),
                   tuple(feature_columns), schema)


def save_csv(dataset: Dataset, path) -> None:
    """Write the CSV that load_csv reads: features, categories, then label."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dataset.feature_names) + list(dataset.schema.names) + ["y"])
        for i in range(dataset.n):
            row = [repr(float(v)) for v in dataset.features[i]]
            row += [dataset.category_of(i, j)
                    for j in range(dataset.schema.num_attributes)]
            row.append(str(int(dataset.labels[i])))
            writer.writerow(row)


# -------------------------------------------------------------------- splits

def split_indices(n: int, ratios, seed: int):
    """Disjoint exhaustive index arrays for train/validation/test.

    A seeded permutation is cut at round(n * cumulative_ratio); the last
    split takes the remainder, so sizes always sum to n.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3:
        raise DataError(f"need 3 split ratios, got {len(ratios)}")
    if any(r <= 0.0 for r in ratios):
        raise DataError(f"split ratios must be positive, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got sum {sum(ratios)!r}")
    perm = np.random.default_rng(seed).permutation(n)
    b1 = round(n * ratios[0])
    b2 = round(n * (ratios[0] + ratios[1]))
    parts = perm[:b1], perm[b1:b2], perm[b2:]
    if any(len(p) == 0 for p in parts):
        raise DataError(f"split of {n} records at ratios {ratios} leaves an empty part")
    return parts


def split(dataset: Dataset, ratios, seed: int):
    """Split into (train, validation, test) datasets."""
    tr, va, te = split_indices(dataset.n, ratios, seed)
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


# ----------------------------------------------------- frequencies / weights

@dataclass(frozen=True)
class FrequencyTable:
    """Per-attribute empirical category frequencies from one split."""

    attribute_names: tuple[str, ...]
    tables: tuple[dict[int, float], ...]

    def frequency(self, j: int, category_index: int) -> float:
        return self.tables[j][category_index]


@dataclass(frozen=True)
class PropensityWeights:
    values: np.ndarray
    normalized: bool


def attribute_frequencies(dataset: Dataset) -> FrequencyTable:
    """Empirical frequency of each observed category, per attribute.

    Compute this on the training split only; applying the table to other
    splits reuses the training frequencies.
    """
    tables = []
    for j in range(dataset.schema.num_attributes):
        col = dataset.sensitive[:, j]
        values, counts = np.unique(col, return_counts=True)
        tables.append({int(v): float(c) / dataset.n for v, c in zip(values, counts)})
    return FrequencyTable(dataset.schema.names, tuple(tables))


def propensity_weights(freq: FrequencyTable, dataset: Dataset,
                       normalize: bool = True) -> PropensityWeights:
    """Per-record weight 1 / prod_j freq(s_ij), optionally scaled to mean 1.

    Rare attribute combinations get large weights, so a model trained under
    these weights cannot ignore small groups. A category absent from the
    frequency table (unseen at fit time) is an error.
    """
    n = dataset.n
    w = np.ones(n, dtype=np.float64)
    for j, name in enumerate(freq.attribute_names):
        table = freq.tables[j]
        col = dataset.sensitive[:, j]
        for idx in np.unique(col):
            if int(idx) not in table:
                cat = dataset.schema.categories(j)[int(idx)]
                raise DataError(
                    f"attribute {name!r}: category {cat!r} was not present "
                    f"when frequencies were computed")
        lut = np.zeros(int(col.max()) + 1, dtype=np.float64)
        for idx, f in table.items():
            if idx < lut.size:
                lut[idx] = f
        w /= lut[col]
    if normalize:
        w = w / w.mean()
    return PropensityWeights(w, normalized=normalize)


# ------------------------------------------------------------------ encoding

def encode_sensitive(record: Record, schema: SensitiveSchema) -> np.ndarray:
    """Concatenated one-hot encoding of one record's category indices."""
    out = np.zeros(schema.encoded_length, dtype=np.float64)
    offset = 0
    for j, (_, cats) in enumerate(schema.attributes):
        out[offset + record.s[j]] = 1.0
        offset += len(cats)
    return out


def encode_sensitive_matrix(dataset: Dataset) -> np.ndarray:
    """(n, encoded_length) one-hot matrix for all records."""
    schema = dataset.schema
    out = np.zeros((dataset.n, schema.encoded_length), dtype=np.float64)
    offset = 0
    for j, (_, cats) in enumerate(schema.attributes):
        out[np.arange(dataset.n), offset + dataset.sensitive[:, j]] = 1.0
        offset += len(cats)
    return out


def standardize(train: Dataset, *others: Dataset):
    """Zero-mean unit-variance features, fit on train and applied everywhere.

    Returns ((train', others'...), mean, std). Constant columns keep their
    zero variance out of the denominator (std clamped to 1).
    """
    mean = train.features.mean(axis=0)
    std = train.features.std(axis=0)
    std = np.where(std == 0.0, 1.0, std)
    out = []
    for ds in (train,) + others:
        if ds.num_features != train.num_features:
            raise DataError(
                f"cannot standardize {ds.num_features} columns with statistics "
                f"for {train.num_features}")
        out.append(replace(ds, features=(ds.features - mean) / std))
    return tuple(out), mean, std
