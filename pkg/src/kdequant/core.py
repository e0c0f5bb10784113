"""Shared domain types: simplex vectors, labelled datasets, bags, posterior matrices.

Classes are 0-indexed throughout. All containers are immutable after
construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Internal arithmetic drift vs. genuinely malformed user input.
SIMPLEX_ATOL = 1e-9
SIMPLEX_INPUT_ATOL = 1e-6


class NotASimplexPoint(ValueError):
    """Vector has negative mass or does not sum to one."""


class DimensionMismatch(ValueError):
    """Query or feature dimensionality does not match the model."""


class LengthMismatch(ValueError):
    """Two vectors that must be paired have different lengths."""


class ShapeMismatch(ValueError):
    """Array shapes are inconsistent with each other."""


class EmptyClass(ValueError):
    """A class referenced by the operation has no examples."""


class TooFewExamples(ValueError):
    """Not enough examples to satisfy the operation's preconditions."""


def _frozen(values, dtype=float) -> np.ndarray:
    out = np.array(values, dtype=dtype)
    out.setflags(write=False)
    return out


def validate_prevalence(values) -> np.ndarray:
    """Validate (and lightly repair) a point on the probability simplex.

    Entries in [-1e-9, 0) are clamped to zero and the vector renormalized;
    an already-valid vector is returned unchanged.

    Raises:
        NotASimplexPoint: if any entry is below -1e-9 or the total mass
            deviates from 1 by more than 1e-6.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise NotASimplexPoint("expected a non-empty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise NotASimplexPoint("non-finite entries")
    if np.any(v < -SIMPLEX_ATOL):
        raise NotASimplexPoint(f"negative entry {float(v.min())!r}")
    total = float(v.sum())
    if abs(total - 1.0) > SIMPLEX_INPUT_ATOL:
        raise NotASimplexPoint(f"mass {total!r} is not 1")
    if np.any(v < 0.0) or abs(total - 1.0) > SIMPLEX_ATOL:
        v = np.clip(v, 0.0, None)
        v = v / v.sum()
    return v


def validate_posteriors(rows) -> np.ndarray:
    """Validate a matrix whose rows are simplex points (posterior vectors)."""
    m = np.asarray(rows, dtype=float)
    if m.ndim != 2 or m.shape[0] == 0 or m.shape[1] == 0:
        raise NotASimplexPoint("expected a non-empty 2-d matrix")
    if not np.all(np.isfinite(m)):
        raise NotASimplexPoint("non-finite entries")
    if np.any(m < -SIMPLEX_ATOL):
        raise NotASimplexPoint("negative posterior entry")
    sums = m.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > SIMPLEX_INPUT_ATOL):
        raise NotASimplexPoint("a row does not sum to 1")
    if np.any(m < 0.0) or np.any(np.abs(sums - 1.0) > SIMPLEX_ATOL):
        m = np.clip(m, 0.0, None)
        m = m / m.sum(axis=1, keepdims=True)
    return m


@dataclass(frozen=True)
class LabelledDataset:
    """Feature matrix with integer class labels in {0..n-1}."""

    features: np.ndarray
    labels: np.ndarray
    n: int

    def __post_init__(self):
        feats = _frozen(self.features)
        labels = _frozen(self.labels, dtype=int)
        if feats.ndim != 2:
            raise ShapeMismatch("features must be a 2-d matrix")
        if labels.ndim != 1 or labels.shape[0] != feats.shape[0]:
            raise ShapeMismatch("labels must align with feature rows")
        if self.n < 1:
            raise ValueError("need at least one class")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n):
            raise ValueError("labels must lie in {0..n-1}")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n)

    def prevalence(self) -> np.ndarray:
        counts = self.class_counts()
        return counts / counts.sum()


@dataclass(frozen=True)
class Bag:
    """An unlabelled multiset of examples whose class distribution is sought."""

    features: np.ndarray

    def __post_init__(self):
        feats = _frozen(self.features)
        if feats.ndim != 2 or feats.shape[0] < 1:
            raise ShapeMismatch("a bag needs at least one feature row")
        object.__setattr__(self, "features", feats)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


def class_split(dataset: LabelledDataset) -> list[np.ndarray]:
    """Per-class row indices; disjoint sets whose union is {0..N-1}.

    Classes without examples yield empty index arrays.
    """
    return [np.flatnonzero(dataset.labels == i) for i in range(dataset.n)]


def concat_datasets(a: LabelledDataset, b: LabelledDataset) -> LabelledDataset:
    """Stack two datasets over the same class universe (used for refits)."""
    if a.n != b.n:
        raise ShapeMismatch("class counts differ")
    if a.dim != b.dim:
        raise DimensionMismatch("feature dimensions differ")
    return LabelledDataset(
        np.vstack([a.features, b.features]),
        np.concatenate([a.labels, b.labels]),
        a.n,
    )
