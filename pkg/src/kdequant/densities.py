"""Bag representations: Gaussian KDE mixtures and class-wise histograms.

The KDE path evaluates densities by brute-force kernel summation in log
space. The histogram path reproduces the per-class binning used by the
discrete distribution-matching baselines.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import logsumexp

from .core import DimensionMismatch, validate_prevalence

# Prevents -inf from propagating into divergence ratios and likelihoods.
LOG_DENSITY_FLOOR = float(np.log(1e-300))


class EmptyReferenceSet(ValueError):
    """KDE needs at least one reference point."""


class NonPositiveBandwidth(ValueError):
    """Bandwidth must be strictly positive."""


@dataclass(frozen=True)
class KdeModel:
    """Gaussian kernel density estimate: reference points plus a shared bandwidth.

    There is no iterative fitting; the model memorizes the reference points.
    """

    references: np.ndarray  # (m, D)
    bandwidth: float

    def __post_init__(self):
        refs = np.array(self.references, dtype=float)
        if refs.ndim != 2 or refs.shape[0] == 0:
            raise EmptyReferenceSet("need a non-empty (m, D) reference matrix")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise NonPositiveBandwidth(f"bandwidth {self.bandwidth!r}")
        if not np.all(np.isfinite(refs)):
            raise ValueError("reference points must be finite")
        refs.setflags(write=False)
        object.__setattr__(self, "references", refs)
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def dim(self) -> int:
        return self.references.shape[1]


def kde_fit(points, h: float) -> KdeModel:
    """Build a KDE over the given points with Gaussian bandwidth h."""
    return KdeModel(np.atleast_2d(np.asarray(points, dtype=float)), h)


def _as_queries(queries, dim: int) -> np.ndarray:
    q = np.asarray(queries, dtype=float)
    if q.ndim == 1:
        q = q[None, :]
    if q.ndim != 2 or q.shape[1] != dim:
        raise DimensionMismatch(f"queries must have dimension {dim}")
    return q


def kde_log_densities(model: KdeModel, queries) -> np.ndarray:
    """Log-density of each query under the KDE, floored at log(1e-300).

    Computed with log-sum-exp over the per-reference Gaussian kernels.
    """
    q = _as_queries(queries, model.dim)
    h = model.bandwidth
    d = model.dim
    d2 = cdist(q, model.references, "sqeuclidean")
    const = -d * np.log(h) - 0.5 * d * np.log(2.0 * np.pi) - np.log(
        model.references.shape[0]
    )
    ll = logsumexp(-d2 / (2.0 * h * h), axis=1) + const
    return np.maximum(ll, LOG_DENSITY_FLOOR)


def kde_log_density(model: KdeModel, query) -> float:
    return float(kde_log_densities(model, query)[0])


def kde_densities(model: KdeModel, queries) -> np.ndarray:
    return np.exp(kde_log_densities(model, queries))


@dataclass(frozen=True)
class KdeMixture:
    """Convex combination of per-class KDEs sharing bandwidth and dimension."""

    components: tuple[KdeModel, ...]
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise EmptyReferenceSet("mixture needs at least one component")
        w = validate_prevalence(self.weights)
        if w.shape[0] != len(comps):
            raise DimensionMismatch("one weight per component")
        h0, d0 = comps[0].bandwidth, comps[0].dim
        for c in comps[1:]:
            if c.bandwidth != h0 or c.dim != d0:
                raise DimensionMismatch("components must share bandwidth and dimension")
        w = np.array(w)
        w.setflags(write=False)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def bandwidth(self) -> float:
        return self.components[0].bandwidth

    def log_densities(self, queries) -> np.ndarray:
        stacked = np.stack(
            [kde_log_densities(c, queries) for c in self.components], axis=1
        )
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        ll = logsumexp(stacked + logw[None, :], axis=1)
        return np.maximum(ll, LOG_DENSITY_FLOOR)

    def densities(self, queries) -> np.ndarray:
        return np.exp(self.log_densities(queries))


def kde_sample(mixture: KdeMixture, count: int, seed) -> np.ndarray:
    """Draw iid samples: pick a component by weight, a reference uniformly
    within it, then add isotropic Gaussian noise of scale h."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    comp = rng.choice(len(mixture.components), size=count, p=mixture.weights)
    u = rng.random(count)
    noise = rng.standard_normal((count, mixture.dim)) * mixture.bandwidth
    out = np.empty((count, mixture.dim))
    for c, model in enumerate(mixture.components):
        mask = comp == c
        if not mask.any():
            continue
        ridx = np.floor(u[mask] * model.references.shape[0]).astype(int)
        out[mask] = model.references[ridx]
    return out + noise


class HistogramLayout(enum.Enum):
    CONCATENATED = "concatenated"
    AVERAGED = "averaged"


@dataclass(frozen=True)
class HistogramRepresentation:
    """Per-class equal-width histograms of posterior columns on [0, 1]."""

    per_class: np.ndarray  # (n, b); each row sums to 1
    bins: int
    layout: HistogramLayout

    def __post_init__(self):
        m = np.array(self.per_class, dtype=float)
        if m.ndim != 2 or self.bins < 2 or m.shape[1] != self.bins:
            raise ValueError("per_class must be (n, bins) with bins >= 2")
        if np.any(m < 0) or np.any(np.abs(m.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("each histogram must be a distribution")
        m.setflags(write=False)
        object.__setattr__(self, "per_class", m)

    @property
    def n(self) -> int:
        return self.per_class.shape[0]


def histogram_edges(b: int) -> np.ndarray:
    """Bin edges i/b for i in 0..b; bins are [i/b, (i+1)/b), last closed."""
    return np.arange(b + 1, dtype=float) / b


def histogram_of_bag(
    posteriors, b: int, layout: HistogramLayout = HistogramLayout.AVERAGED
) -> HistogramRepresentation:
    """Column-wise normalized histograms of a posterior matrix.

    Column j gets a b-bin histogram of its values in [0, 1]; a value of
    exactly 1.0 lands in the last bin.
    """
    if b < 2:
        raise ValueError("need at least 2 bins")
    m = np.asarray(posteriors, dtype=float)
    if m.ndim != 2 or m.shape[0] == 0:
        raise ValueError("expected a non-empty posterior matrix")
    edges = histogram_edges(b)
    cols = np.clip(m, 0.0, 1.0)
    hists = np.empty((m.shape[1], b))
    for j in range(m.shape[1]):
        counts, _ = np.histogram(cols[:, j], bins=edges)
        hists[j] = counts / m.shape[0]
    return HistogramRepresentation(hists, b, layout)
