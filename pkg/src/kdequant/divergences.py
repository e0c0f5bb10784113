"""Dissimilarity functions.

Three families live here: discrete divergences between histograms, Monte
Carlo estimation of f-divergences between density evaluators (with
importance sampling), and the closed-form Cauchy-Schwarz divergence between
Gaussian-kernel mixtures via reduced Gram statistics.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import xlogy

from .core import EmptyClass, LengthMismatch, ShapeMismatch, validate_prevalence
from .densities import HistogramRepresentation, HistogramLayout

LOG_RATIO_CLAMP = 700.0
_DENSITY_FLOOR = 1e-300


class DegenerateGram(ArithmeticError):
    """A Gram sum underflowed to zero; the bandwidth is far too small."""


class Generator(enum.Enum):
    """Convex generator of an f-divergence, normalized so evaluate(1) == 0."""

    REVERSE_KLD = "reverse_kld"
    SQUARED_HELLINGER = "squared_hellinger"
    JENSEN_SHANNON = "jensen_shannon"

    def evaluate(self, u):
        u = np.asarray(u, dtype=float)
        if self is Generator.REVERSE_KLD:
            return xlogy(u, u)
        if self is Generator.SQUARED_HELLINGER:
            return (np.sqrt(u) - 1.0) ** 2
        return -(u + 1.0) * np.log((u + 1.0) / 2.0) + xlogy(u, u)


class DiscreteDivergence(enum.Enum):
    HD2 = "hd2"
    TOPSOE = "topsoe"
    CS_DISCRETE = "cs"


def _check_pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise LengthMismatch(f"distributions differ in length: {p.shape} vs {q.shape}")
    for v in (p, q):
        if np.any(v < 0) or abs(v.sum() - 1.0) > 1e-6:
            raise ValueError("inputs must be discrete distributions")
    return p, q


def hd2_discrete(p, q) -> float:
    """Squared Hellinger distance, 1 - sum(sqrt(p q)); symmetric, in [0, 1]."""
    p, q = _check_pair(p, q)
    return max(0.0, 1.0 - float(np.sqrt(p * q).sum()))


def topsoe_discrete(p, q) -> float:
    """Twice the Jensen-Shannon divergence (natural log); zero terms drop out."""
    p, q = _check_pair(p, q)
    r = 0.5 * (p + q)
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(p > 0, p * np.log(p / r), 0.0)
        t2 = np.where(q > 0, q * np.log(q / r), 0.0)
    return float(t1.sum() + t2.sum())


def cs_discrete(p, q) -> float:
    """Cauchy-Schwarz divergence of two discrete vectors:
    -log of their normalized inner product."""
    p, q = _check_pair(p, q)
    num = float(p @ q)
    den = float(np.sqrt((p @ p) * (q @ q)))
    if num <= 0 or den <= 0:
        raise DegenerateGram("vectors have no common support")
    return -np.log(num / den)


_DISCRETE = {
    DiscreteDivergence.HD2: hd2_discrete,
    DiscreteDivergence.TOPSOE: topsoe_discrete,
    DiscreteDivergence.CS_DISCRETE: cs_discrete,
}


def dm_loss(
    train_hists: Sequence[HistogramRepresentation],
    test_hist: HistogramRepresentation,
    alpha,
    divergence: DiscreteDivergence,
) -> float:
    """Divergence between the alpha-mixture of per-class training histograms
    and the test histograms.

    Concatenated layout: one divergence over the n*b concatenation with every
    entry scaled by 1/n (so it remains a distribution). Averaged layout: mean
    of the n per-class divergences.
    """
    if not train_hists:
        raise ShapeMismatch("need at least one class histogram")
    alpha = validate_prevalence(alpha)
    if alpha.shape[0] != len(train_hists):
        raise ShapeMismatch("one mixture weight per class")
    ref = train_hists[0]
    for h in train_hists:
        if h.per_class.shape != test_hist.per_class.shape or h.bins != test_hist.bins:
            raise ShapeMismatch("histogram shapes disagree")
        if h.layout is not test_hist.layout:
            raise ShapeMismatch("histogram layouts disagree")
    del ref
    fn = _DISCRETE[divergence]
    mix = np.tensordot(alpha, np.stack([h.per_class for h in train_hists]), axes=1)
    tst = test_hist.per_class
    n_cols = tst.shape[0]
    if test_hist.layout is HistogramLayout.CONCATENATED:
        return float(fn(mix.ravel() / n_cols, tst.ravel() / n_cols))
    return float(np.mean([fn(mix[j], tst[j]) for j in range(n_cols)]))


def mc_f_divergence(
    p_log_density: Callable[[np.ndarray], np.ndarray],
    q_log_density: Callable[[np.ndarray], np.ndarray],
    r_samples: np.ndarray,
    r_densities: np.ndarray,
    generator: Generator,
) -> float:
    """Importance-sampled Monte Carlo estimate of an f-divergence D_f(p || q).

    Averages f(p(x)/q(x)) * q(x)/r(x) over samples drawn from the reference
    distribution r. Density ratios are formed from log-densities with a
    +-700 clamp for overflow safety. With r == q the weights are 1 and the
    estimator reduces to the plain Monte Carlo average of f(p/q).
    """
    samples = np.asarray(r_samples, dtype=float)
    r_dens = np.asarray(r_densities, dtype=float)
    if samples.shape[0] != r_dens.shape[0] or samples.shape[0] < 1:
        raise LengthMismatch("need one reference density per sample")
    if np.any(r_dens <= 0):
        raise ValueError("reference densities must be strictly positive")
    logp = np.asarray(p_log_density(samples), dtype=float)
    logq = np.asarray(q_log_density(samples), dtype=float)
    ratio = np.exp(np.clip(logp - logq, -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    weight = np.exp(np.clip(logq - np.log(r_dens), -LOG_RATIO_CLAMP, LOG_RATIO_CLAMP))
    return float(np.mean(generator.evaluate(ratio) * weight))


# ---------------------------------------------------------------------------
# Closed-form Cauchy-Schwarz machinery for Gaussian-kernel mixtures.
#
# The product integral of two Gaussians with shared isotropic covariance
# h^2 I is a Gaussian in the distance between their centers with covariance
# 2 h^2 I, whose value at zero distance is h^-D (4 pi)^-D/2.
# ---------------------------------------------------------------------------


def cs_pair_kernel(x_points, y_points, h: float) -> np.ndarray:
    """Gram matrix of N(x | y, 2 h^2 I) over all point pairs."""
    x = np.atleast_2d(np.asarray(x_points, dtype=float))
    y = np.atleast_2d(np.asarray(y_points, dtype=float))
    if x.shape[1] != y.shape[1]:
        raise ShapeMismatch("point sets differ in dimension")
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    d = x.shape[1]
    d2 = cdist(x, y, "sqeuclidean")
    norm = h**d * (4.0 * np.pi) ** (d / 2.0)
    return np.exp(-d2 / (4.0 * h * h)) / norm


def cs_kernel_at_zero(dim: int, h: float) -> float:
    """Value of the pairwise kernel at zero distance: h^-D (4 pi)^-D/2."""
    return h ** (-dim) * (4.0 * np.pi) ** (-dim / 2.0)


@dataclass(frozen=True)
class CsPrecomputation:
    """Reduced Gram statistics for O(n^2)-per-candidate evaluation of the
    Cauchy-Schwarz objective."""

    a_bar: np.ndarray  # (n,) train-test Gram sums
    B_bar: np.ndarray  # (n, n) symmetric train-train Gram sums
    class_sizes: np.ndarray  # (n,)
    t_scalar: float  # 1 / |test|

    def __post_init__(self):
        a = np.asarray(self.a_bar, dtype=float)
        B = np.asarray(self.B_bar, dtype=float)
        sizes = np.asarray(self.class_sizes, dtype=int)
        n = a.shape[0]
        if B.shape != (n, n) or sizes.shape != (n,):
            raise ShapeMismatch("inconsistent precomputation shapes")
        if np.any(np.abs(B - B.T) > 1e-12) or np.any(B < 0) or np.any(a < 0):
            raise ValueError("Gram sums must be symmetric and nonnegative")
        object.__setattr__(self, "a_bar", a)
        object.__setattr__(self, "B_bar", B)
        object.__setattr__(self, "class_sizes", sizes)

    @property
    def n(self) -> int:
        return self.a_bar.shape[0]


def cs_train_gram(class_points: Sequence[np.ndarray], h: float) -> np.ndarray:
    """Train-train Gram sums B_bar[i, i']; only the upper triangle is
    computed and then mirrored."""
    n = len(class_points)
    B = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            s = float(cs_pair_kernel(class_points[i], class_points[j], h).sum())
            B[i, j] = s
            B[j, i] = s
    return B


def cs_precompute(
    class_points: Sequence[np.ndarray],
    test_points: np.ndarray,
    h: float,
    B_bar: np.ndarray | None = None,
) -> CsPrecomputation:
    """Gram sums for the closed-form objective.

    a_bar[i] sums the kernel between class i's points and the test points;
    B_bar[i, i'] sums it between class point sets. A precomputed B_bar (it
    does not depend on the test set) may be passed to skip the heavy part.
    """
    pts = [np.atleast_2d(np.asarray(p, dtype=float)) for p in class_points]
    if any(p.shape[0] == 0 for p in pts):
        raise EmptyClass("every class needs at least one reference point")
    test = np.atleast_2d(np.asarray(test_points, dtype=float))
    a = np.array([float(cs_pair_kernel(p, test, h).sum()) for p in pts])
    if B_bar is None:
        B_bar = cs_train_gram(pts, h)
    sizes = np.array([p.shape[0] for p in pts], dtype=int)
    return CsPrecomputation(a, B_bar, sizes, 1.0 / test.shape[0])


def cs_objective(pre: CsPrecomputation, alpha) -> float:
    """Cauchy-Schwarz objective -log(r' a t) + 0.5 log(r' B r) with
    r_i = alpha_i / |L_i|.

    The test-test term is omitted: it is constant in alpha. Add
    `cs_self_term` of the test points to recover the full divergence value.
    """
    alpha = validate_prevalence(alpha)
    if alpha.shape[0] != pre.n:
        raise ShapeMismatch("alpha length must match the class count")
    r = alpha / pre.class_sizes
    cross = float(r @ pre.a_bar) * pre.t_scalar
    self_term = float(r @ pre.B_bar @ r)
    if cross <= 0 or self_term <= 0:
        raise DegenerateGram("Gram sums vanished; bandwidth far too small")
    return -np.log(cross) + 0.5 * np.log(self_term)


def cs_self_term(points, h: float) -> float:
    """Constant term 0.5 * log(t^2 c_bar) for a uniformly weighted point set;
    the piece of the full divergence that the optimization drops."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = float(cs_pair_kernel(pts, pts, h).sum())
    if c <= 0:
        raise DegenerateGram("Gram sum vanished")
    t = 1.0 / pts.shape[0]
    return 0.5 * np.log(t * t * c)
