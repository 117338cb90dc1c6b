"""
Datasets: the two-region simulation, CSV ingestion and stratified splits.

Random streams are numpy PCG64 generators; seeds are expanded with
``SeedSequence`` so train and test draws are independent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from sklearn.model_selection import train_test_split

from .core import Dataset, Task
from .exceptions import ArgumentError, DataFormatError, SchemaError

logger = logging.getLogger(__name__)

REGION_LINEAR = 0
REGION_CIRCULAR = 1


@dataclass(frozen=True)
class SimulationConfig:
    n_train: int = 1000
    n_test: int = 500
    offset: float = 1.0
    covariance_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 2 or self.n_test < 2:
            raise ArgumentError(f"n_train and n_test must be >= 2, got {self.n_train}, {self.n_test}.")
        if not self.offset > 0:
            raise ArgumentError(f"offset must be > 0, got {self.offset}.")
        if not self.covariance_scale > 0:
            raise ArgumentError(f"covariance_scale must be > 0, got {self.covariance_scale}.")


def label_linear(features: np.ndarray, offset: float) -> np.ndarray:
    """1{x1 + x2 > -t}."""
    return (features[:, 0] + features[:, 1] > -offset).astype(np.int64)


def label_circular(features: np.ndarray, offset: float) -> np.ndarray:
    """1{||x - (t, 0)|| < 1}."""
    return (np.hypot(features[:, 0] - offset, features[:, 1]) < 1.0).astype(np.int64)


def _draw_two_region(n: int, cfg: SimulationConfig, rng: np.random.Generator) -> Dataset:
    n_linear = n // 2
    n_circular = n - n_linear
    t = cfg.offset

    linear = rng.multivariate_normal([-t, 0.0], cfg.covariance_scale * np.eye(2), size=n_linear)
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n_circular)
    radius = np.sqrt(rng.uniform(0.0, 2.0, size=n_circular))
    circular = np.column_stack([t + radius * np.cos(theta), radius * np.sin(theta)])

    features = np.vstack([linear, circular])
    # labels come from the stored coordinates
    labels = np.concatenate([label_linear(linear, t), label_circular(circular, t)])
    regions = np.concatenate([np.full(n_linear, REGION_LINEAR), np.full(n_circular, REGION_CIRCULAR)])
    return Dataset(features=features, labels=labels, task=Task.CLASSIFICATION, regions=regions,
                   feature_names=("x1", "x2"), class_names=("0", "1"))


def simulate_two_region(cfg: SimulationConfig) -> Tuple[Dataset, Dataset]:
    train_seq, test_seq = np.random.SeedSequence(cfg.seed).spawn(2)
    train = _draw_two_region(cfg.n_train, cfg, np.random.default_rng(train_seq))
    test = _draw_two_region(cfg.n_test, cfg, np.random.default_rng(test_seq))
    logger.info(f"Simulated two-region data: {train.n} train / {test.n} test rows (seed={cfg.seed})")
    return train, test


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    label_col: str = "label"
    task: Task = Task.CLASSIFICATION
    feature_cols: Optional[Tuple[str, ...]] = None
    region_col: Optional[str] = None


def _parse_float(cell: str, row: int, column: str) -> float:
    try:
        value = float(cell)
    except (TypeError, ValueError):
        raise DataFormatError(f"Row {row}, column {column!r}: cannot parse {cell!r} as a number.") from None
    if not np.isfinite(value):
        raise DataFormatError(f"Row {row}, column {column!r}: {cell!r} is not a finite number.")
    return value


def load_csv(path, schema: CsvSchema) -> Dataset:
    """
    Read a comma-separated file with a header row.

    Cells are parsed with ``float`` (dot decimal point, locale-independent).
    Row numbers in errors count the header as row 1. Classification labels
    map to dense indices in first-appearance order.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"CSV file {path} does not exist.")
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise DataFormatError(f"CSV file {path} is empty.") from None
    if frame.empty:
        raise DataFormatError(f"CSV file {path} has a header but no rows.")

    task = Task(schema.task)
    feature_cols = list(schema.feature_cols) if schema.feature_cols else [
        c for c in frame.columns if c not in (schema.label_col, schema.region_col)
    ]
    missing = [c for c in [schema.label_col, *feature_cols, schema.region_col] if c and c not in frame.columns]
    if missing:
        raise SchemaError(f"CSV file {path} lacks columns {missing}; found {list(frame.columns)}.")
    if not feature_cols:
        raise SchemaError(f"CSV file {path} has no feature columns.")

    features = np.empty((len(frame), len(feature_cols)))
    for j, column in enumerate(feature_cols):
        for i, cell in enumerate(frame[column]):
            features[i, j] = _parse_float(cell.strip(), i + 2, column)

    raw_labels = frame[schema.label_col].str.strip()
    class_names: Tuple[str, ...] = ()
    if task is Task.CLASSIFICATION:
        if (raw_labels == "").any():
            row = int(np.flatnonzero(raw_labels == "")[0]) + 2
            raise DataFormatError(f"Row {row}, column {schema.label_col!r}: empty label.")
        codes, uniques = pd.factorize(raw_labels, sort=False)
        labels = codes.astype(np.int64)
        class_names = tuple(str(u) for u in uniques)
    else:
        labels = np.array([_parse_float(c, i + 2, schema.label_col) for i, c in enumerate(raw_labels)])

    regions = None
    if schema.region_col:
        regions = np.array([int(_parse_float(c, i + 2, schema.region_col))
                            for i, c in enumerate(frame[schema.region_col].str.strip())])

    dataset = Dataset(features=features, labels=labels, task=task, regions=regions,
                      feature_names=tuple(feature_cols), class_names=class_names)
    logger.info(f"Loaded {dataset.n} rows x {dataset.d} features from {path}")
    return dataset


def write_csv(data: Dataset, path) -> Path:
    """Write ``x1..xd,label[,region]``; floats use repr precision so a re-read is bit-equal."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(data.features, columns=list(data.feature_names))
    frame["label"] = data.labels
    if data.regions is not None:
        frame["region"] = data.regions
    frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    return path


# ---------------------------------------------------------------------------
# splits and preprocessing
# ---------------------------------------------------------------------------

@dataclass
class SplitResult:
    train: Dataset
    test: Dataset
    train_index: np.ndarray
    test_index: np.ndarray
    notes: List[str] = field(default_factory=list)


def _regression_strata(labels: np.ndarray, bins: int) -> np.ndarray:
    """Quantile bins of the target; bins with fewer than 2 rows merge into a neighbour."""
    if np.unique(labels).size < 2:
        return np.zeros(labels.size, dtype=np.int64)
    strata = pd.qcut(labels, q=bins, labels=False, duplicates="drop").astype(np.int64)
    _, strata = np.unique(strata, return_inverse=True)
    while True:
        counts = np.bincount(strata)
        small = np.flatnonzero(counts < 2)
        if small.size == 0 or counts.size == 1:
            return strata
        b = int(small[0])
        target = b - 1 if b > 0 else b + 1
        strata[strata == b] = target
        _, strata = np.unique(strata, return_inverse=True)


def _balance(train: Dataset, index: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    counts = np.bincount(train.labels[index])
    present = np.flatnonzero(counts)
    floor = counts[present].min()
    kept = [rng.choice(index[train.labels[index] == c], size=floor, replace=False) for c in present]
    return np.sort(np.concatenate(kept))


def split(data: Dataset, test_fraction: float = 0.2, stratify: bool = True, bins: int = 12,
          seed: int = 0, balance: bool = False) -> SplitResult:
    """Deterministic train/test split, stratified on the label or on target quantile bins."""
    if not 0 < test_fraction < 1:
        raise ArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}.")
    if bins < 1:
        raise ArgumentError(f"bins must be >= 1, got {bins}.")
    notes: List[str] = []
    index = np.arange(data.n)

    strata = None
    if stratify:
        if data.task is Task.CLASSIFICATION:
            strata = data.labels
            counts = np.bincount(strata)
            if np.any(counts[counts > 0] < 2):
                notes.append("class stratum smaller than 2; unstratified split")
                strata = None
        else:
            strata = _regression_strata(data.labels, bins)
            if np.unique(strata).size < bins:
                notes.append(f"{bins} quantile bins merged into {np.unique(strata).size}")

    try:
        train_index, test_index = train_test_split(index, test_size=test_fraction, random_state=seed,
                                                   shuffle=True, stratify=strata)
    except ValueError as exc:
        if strata is None:
            raise ArgumentError(f"Cannot split {data.n} rows at test_fraction={test_fraction}: {exc}") from exc
        notes.append(f"stratified split impossible ({exc}); unstratified split")
        train_index, test_index = train_test_split(index, test_size=test_fraction, random_state=seed, shuffle=True)

    train_index, test_index = np.sort(train_index), np.sort(test_index)
    if balance:
        if data.task is not Task.CLASSIFICATION:
            raise ArgumentError("Balancing by downsampling needs classification data.")
        before = train_index.size
        train_index = _balance(data, train_index, np.random.default_rng(seed))
        notes.append(f"training set downsampled from {before} to {train_index.size} rows")

    for note in notes:
        logger.warning(f"split: {note}")
    return SplitResult(
        train=data.subset(train_index),
        test=data.subset(test_index),
        train_index=train_index,
        test_index=test_index,
        notes=notes,
    )


class Standardizer:
    """Column mean/std from a training set, applied unchanged to later data."""

    def __init__(self):
        self.mean: Optional[np.ndarray] = None
        self.scale: Optional[np.ndarray] = None

    def fit(self, data: Dataset) -> "Standardizer":
        self.mean = data.features.mean(axis=0)
        scale = data.features.std(axis=0)
        self.scale = np.where(scale > 0, scale, 1.0)
        return self

    def transform(self, data: Dataset) -> Dataset:
        if self.mean is None:
            raise ArgumentError("Standardizer is not fitted.")
        if data.d != self.mean.size:
            raise ArgumentError(f"Standardizer fitted on {self.mean.size} features, got {data.d}.")
        return data.with_features((data.features - self.mean) / self.scale)

    def fit_transform(self, data: Dataset) -> Dataset:
        return self.fit(data).transform(data)


def dataset_summary(data: Dataset) -> dict:
    summary = {"n": data.n, "d": data.d, "task": data.task.value}
    if data.task is Task.CLASSIFICATION:
        summary["class_counts"] = np.bincount(data.labels, minlength=data.num_classes).tolist()
    if data.regions is not None:
        summary["region_counts"] = {int(r): int(c) for r, c in zip(*np.unique(data.regions, return_counts=True))}
    return summary

