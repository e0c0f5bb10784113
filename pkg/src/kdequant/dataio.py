"""Dataset ingestion and synthetic label-shift generation."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import LabelledDataset
from .protocol import largest_remainder_counts


class ParseError(ValueError):
    """CSV content could not be parsed; the message names row and column."""


class MissingLabelColumn(ValueError):
    """The requested label column is absent from the header."""


def load_csv(
    path, label_column: str, label_names: list[str] | None = None
) -> tuple[LabelledDataset, list[str]]:
    """Read a UTF-8, comma-separated, headered file into a dataset.

    Feature columns are parsed as reals; labels are mapped to 0..n-1 in
    first-appearance order (or with a preset `label_names` mapping, e.g. to
    keep train/test files consistent). Returns the dataset together with the
    label-name list, index-aligned with the class codes. Data rows are
    numbered from 1 in error messages.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if label_column not in header:
            raise MissingLabelColumn(
                f"{path}: no column named {label_column!r} in header {header}"
            )
        label_idx = header.index(label_column)
        feature_cols = [c for i, c in enumerate(header) if i != label_idx]
        names = list(label_names) if label_names is not None else []
        preset = label_names is not None
        features: list[list[float]] = []
        labels: list[int] = []
        for row_no, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise ParseError(
                    f"{path}: row {row_no} has {len(row)} fields, expected {len(header)}"
                )
            feats = []
            for i, cell in enumerate(row):
                if i == label_idx:
                    continue
                col = header[i]
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path}: row {row_no}, column {col}: not a number: {cell!r}"
                    ) from None
            raw = row[label_idx]
            if raw not in names:
                if preset:
                    raise ParseError(
                        f"{path}: row {row_no}, column {label_column}: unknown label {raw!r}"
                    )
                names.append(raw)
            features.append(feats)
            labels.append(names.index(raw))
    if not features:
        raise ParseError(f"{path}: no data rows")
    dataset = LabelledDataset(np.asarray(features, dtype=float), np.asarray(labels), len(names))
    return dataset, names


def write_csv(path, dataset: LabelledDataset, label_names: list[str] | None = None,
              label_column: str = "label") -> None:
    """Write a dataset with full-precision floats (round-trips exactly)."""
    path = Path(path)
    names = label_names or [str(i) for i in range(dataset.n)]
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow([f"f{j}" for j in range(dataset.dim)] + [label_column])
        for row, lab in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in row] + [names[lab]])


def stratified_split(
    dataset: LabelledDataset, fraction: float, seed: int
) -> tuple[LabelledDataset, LabelledDataset]:
    """Split off a stratified `fraction` of rows (second return value)."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    held = []
    for c in range(dataset.n):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        take = int(round(fraction * idx.size))
        held.extend(idx[:take].tolist())
    mask = np.zeros(dataset.size, dtype=bool)
    mask[held] = True
    first = LabelledDataset(dataset.features[~mask], dataset.labels[~mask], dataset.n)
    second = LabelledDataset(dataset.features[mask], dataset.labels[mask], dataset.n)
    return first, second


@dataclass(frozen=True)
class SyntheticSpec:
    """Class-conditional Gaussian (or Gaussian-mixture) problem.

    With the default one-blob-per-class layout, `means` has one row per
    class. Passing `blob_classes` assigns each row of `means` to a class,
    so a class can own several blobs; its examples then spread evenly over
    its blobs (multimodal class-conditional densities).
    """

    classes: int
    dim: int
    means: np.ndarray  # (blobs, d)
    scales: np.ndarray  # scalar, (blobs,) or (blobs, d)
    train_size: int
    test_pool_size: int
    beta: np.ndarray  # training prior
    blob_classes: np.ndarray | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        scales = np.asarray(self.scales, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if self.classes < 2:
            raise ValueError("need at least 2 classes")
        if self.blob_classes is None:
            blob_classes = np.arange(self.classes)
        else:
            blob_classes = np.asarray(self.blob_classes, dtype=int)
        if means.shape != (blob_classes.shape[0], self.dim):
            raise ValueError("means must have one row per blob")
        if sorted(set(blob_classes.tolist())) != list(range(self.classes)):
            raise ValueError("every class needs at least one blob")
        if self.train_size < self.classes or self.test_pool_size < self.classes:
            raise ValueError("sizes must be at least the class count")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "scales", scales)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "blob_classes", blob_classes)


def circle_means(n: int, dim: int, separation: float) -> np.ndarray:
    """Deterministic well-spread class means: a circle in the first two
    coordinates (a line for dim == 1)."""
    means = np.zeros((n, dim))
    if dim == 1:
        means[:, 0] = separation * np.arange(n)
    else:
        angles = 2.0 * np.pi * np.arange(n) / n
        means[:, 0] = separation * np.cos(angles)
        means[:, 1] = separation * np.sin(angles)
    return means


def generate_synthetic(spec: SyntheticSpec, seed: int) -> tuple[LabelledDataset, LabelledDataset]:
    """Draw a training set following the prior beta and a balanced test pool.

    The pool is balanced so the protocol can realize any target prevalence.
    Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    scales = spec.scales
    if scales.ndim == 0:
        scales = np.full(spec.blob_classes.shape[0], float(scales))

    def draw(counts):
        feats, labels = [], []
        for c in range(spec.classes):
            k = int(counts[c])
            if k == 0:
                continue
            blobs = np.flatnonzero(spec.blob_classes == c)
            per_blob = largest_remainder_counts(
                np.full(blobs.size, 1.0 / blobs.size), k
            )
            for blob, kb in zip(blobs, per_blob):
                if kb == 0:
                    continue
                scale = scales[blob] if scales.ndim <= 1 else scales[blob][None, :]
                feats.append(
                    rng.normal(spec.means[blob], scale, size=(int(kb), spec.dim))
                )
                labels.append(np.full(int(kb), c, dtype=int))
        return LabelledDataset(np.vstack(feats), np.concatenate(labels), spec.classes)

    train_counts = largest_remainder_counts(spec.beta, spec.train_size)
    pool_counts = largest_remainder_counts(
        np.full(spec.classes, 1.0 / spec.classes), spec.test_pool_size
    )
    return draw(train_counts), draw(pool_counts)
