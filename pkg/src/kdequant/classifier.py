"""L2-regularised multinomial logistic regression.

Trained by deterministic full-batch gradient descent with backtracking line
search, which is adequate at desk scale and makes cross-validated posteriors
bit-reproducible. Biases are not regularised.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .core import (
    Bag,
    DimensionMismatch,
    EmptyClass,
    LabelledDataset,
    TooFewExamples,
    validate_posteriors,
)

GRAD_TOL = 1e-6
MAX_ITERATIONS = 5000
ARMIJO = 1e-4


class NonFinite(ArithmeticError):
    """The training loss became non-finite."""


class ClassWeighting(enum.Enum):
    BALANCED = "balanced"
    NONE = "none"


@dataclass(frozen=True)
class LogisticModel:
    """Softmax-linear model: posterior(x) = softmax(W x + b)."""

    weights: np.ndarray  # (n, d)
    biases: np.ndarray  # (n,)
    C: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        b = np.asarray(self.biases, dtype=float)
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise DimensionMismatch("weights must be (n, d) with biases (n,)")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise NonFinite("model parameters must be finite")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "biases", b)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def example_weights(labels: np.ndarray, n: int, weighting: ClassWeighting) -> np.ndarray:
    """Per-example loss weights; balanced mode uses N / (n * count[y])."""
    labels = np.asarray(labels, dtype=int)
    if weighting is ClassWeighting.NONE:
        return np.ones(labels.shape[0])
    counts = np.bincount(labels, minlength=n)
    if np.any(counts == 0):
        raise EmptyClass("balanced weighting needs every class populated")
    per_class = labels.shape[0] / (n * counts)
    return per_class[labels]


def loss_and_gradient(weights, biases, features, labels, sample_weights, C):
    """Penalised weighted cross-entropy and its analytic gradient.

    Returns (loss, grad_weights, grad_biases). The L2 penalty is
    ||W||^2 / (2 C); biases are unpenalised.
    """
    logits = features @ weights.T + biases
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(labels.shape[0])
    log_probs = shifted[rows, labels] - log_norm
    loss = -(sample_weights * log_probs).sum() + (weights**2).sum() / (2.0 * C)
    resid = _softmax(logits)
    resid[rows, labels] -= 1.0
    resid *= sample_weights[:, None]
    grad_w = resid.T @ features + weights / C
    grad_b = resid.sum(axis=0)
    return loss, grad_w, grad_b


def fit_logistic(
    train: LabelledDataset,
    C: float,
    weighting: ClassWeighting = ClassWeighting.NONE,
    seed: int = 0,
) -> LogisticModel:
    """Fit the model to within solver tolerance of the convex optimum.

    Deterministic: optimisation starts from zero parameters, so `seed` has no
    effect on the result (it is kept for interface symmetry with the
    cross-validation path).
    """
    if C <= 0:
        raise ValueError("C must be positive")
    counts = train.class_counts()
    if np.any(counts == 0):
        missing = np.flatnonzero(counts == 0)
        raise EmptyClass(f"classes {missing.tolist()} have no training examples")
    d = train.dim
    if train.n == 1:
        return LogisticModel(np.zeros((1, d)), np.zeros(1), C)

    X = train.features
    y = train.labels
    sw = example_weights(y, train.n, weighting)
    W = np.zeros((train.n, d))
    b = np.zeros(train.n)
    loss, gw, gb = loss_and_gradient(W, b, X, y, sw, C)
    step = 1.0
    for _ in range(MAX_ITERATIONS):
        gnorm = max(np.abs(gw).max(), np.abs(gb).max())
        if gnorm < GRAD_TOL:
            break
        gsq = (gw**2).sum() + (gb**2).sum()
        accepted = False
        while step >= 1e-20:
            W2 = W - step * gw
            b2 = b - step * gb
            loss2, gw2, gb2 = loss_and_gradient(W2, b2, X, y, sw, C)
            if loss2 <= loss - ARMIJO * step * gsq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        W, b, loss, gw, gb = W2, b2, loss2, gw2, gb2
        if not np.isfinite(loss):
            raise NonFinite("training loss diverged")
        step = min(step * 2.0, 1e6)
    return LogisticModel(W, b, C)


def predict_posteriors(model: LogisticModel, bag) -> np.ndarray:
    """Softmax of affine scores; rows lie on the simplex."""
    feats = bag.features if isinstance(bag, Bag) else np.asarray(bag, dtype=float)
    if feats.ndim != 2 or feats.shape[1] != model.dim:
        raise DimensionMismatch(
            f"expected feature dimension {model.dim}, got {feats.shape}"
        )
    logits = feats @ model.weights.T + model.biases
    return validate_posteriors(_softmax(logits))


def stratified_folds(labels: np.ndarray, n: int, k: int, seed: int) -> list[np.ndarray]:
    """Deterministic stratified k-fold assignment.

    Each class's indices are shuffled with the seeded generator and dealt
    round-robin to the folds, so every fold carries every class.
    """
    if k < 2:
        raise ValueError("k must be at least 2")
    counts = np.bincount(labels, minlength=n)
    populated = counts[counts > 0]
    if populated.size and populated.min() < k:
        raise TooFewExamples(
            f"stratified {k}-fold split needs at least {k} examples per class"
        )
    rng = np.random.default_rng(seed)
    folds: list[list[int]] = [[] for _ in range(k)]
    for c in range(n):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        for j, row in enumerate(rng.permutation(idx)):
            folds[j % k].append(int(row))
    return [np.sort(np.asarray(f, dtype=int)) for f in folds]


def cross_val_posteriors(
    train: LabelledDataset,
    k: int,
    C: float,
    weighting: ClassWeighting = ClassWeighting.NONE,
    seed: int = 0,
) -> np.ndarray:
    """Out-of-fold posteriors aligned with the training rows.

    Each row's posterior comes from the model fitted on the other k-1 folds.
    """
    counts = train.class_counts()
    if np.any(counts == 0):
        raise EmptyClass("every class needs training examples")
    folds = stratified_folds(train.labels, train.n, k, seed)
    out = np.empty((train.size, train.n))
    for fold in folds:
        mask = np.ones(train.size, dtype=bool)
        mask[fold] = False
        rest = LabelledDataset(train.features[mask], train.labels[mask], train.n)
        model = fit_logistic(rest, C, weighting, seed)
        out[fold] = predict_posteriors(model, train.features[fold])
    return validate_posteriors(out)
