"""Quantification methods.

All methods here are aggregative: they fit an embedded logistic classifier,
derive per-class training representations from its cross-validated
posteriors, and map a test bag's posteriors to a prevalence estimate.

Implemented: CC, ACC, PACC, EMQ, HDy (binary), HDy-OvA, DM-{T, HD, CS},
KDEy-{HD, CS, ML}, and DIR.
"""

from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import digamma, gammaln, logsumexp, polygamma

from .classifier import (
    ClassWeighting,
    LogisticModel,
    cross_val_posteriors,
    fit_logistic,
    predict_posteriors,
)
from .core import (
    Bag,
    EmptyClass,
    LabelledDataset,
    ShapeMismatch,
    TooFewExamples,
    class_split,
    validate_posteriors,
    validate_prevalence,
)
from .densities import (
    HistogramLayout,
    KdeMixture,
    KdeModel,
    histogram_of_bag,
    kde_densities,
    kde_fit,
    kde_log_densities,
    kde_sample,
)
from .divergences import (
    DiscreteDivergence,
    Generator,
    cs_precompute,
    cs_train_gram,
    dm_loss,
)
from .simplex_opt import OptimizerConfig, minimize_on_simplex

_DENSITY_FLOOR = 1e-300
_LOG_CLAMP = 700.0


class SingularSystemWarning(UserWarning):
    """The adjustment system was rank-deficient; fell back to observed rates."""


class NoConvergenceWarning(UserWarning):
    """Iterative fitting hit its iteration cap; a fallback estimate is used."""


# ---------------------------------------------------------------------------
# Aggregation operations
# ---------------------------------------------------------------------------


def cc_quantify(posteriors) -> np.ndarray:
    """Classify-and-count: fraction of rows whose argmax is each class.

    Ties break toward the lowest class index.
    """
    m = validate_posteriors(posteriors)
    pred = m.argmax(axis=1)
    counts = np.bincount(pred, minlength=m.shape[1])
    return counts / m.shape[0]


def estimate_hard_confusion(cv_posteriors, labels, n: int) -> np.ndarray:
    """entry[i, j] = estimated P(pred=i | class=j) from argmax counts."""
    m = validate_posteriors(cv_posteriors)
    labels = np.asarray(labels, dtype=int)
    pred = m.argmax(axis=1)
    out = np.zeros((n, n))
    for j in range(n):
        mask = labels == j
        if not mask.any():
            raise EmptyClass(f"class {j} has no examples")
        out[:, j] = np.bincount(pred[mask], minlength=n) / mask.sum()
    return out


def estimate_soft_confusion(cv_posteriors, labels, n: int) -> np.ndarray:
    """entry[i, j] = mean posterior for class i over true-class-j rows."""
    m = validate_posteriors(cv_posteriors)
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((n, n))
    for j in range(n):
        mask = labels == j
        if not mask.any():
            raise EmptyClass(f"class {j} has no examples")
        out[:, j] = m[mask].mean(axis=0)
    return out


def acc_quantify(confusion, observed) -> np.ndarray:
    """Invert the law of total probability: solve confusion @ alpha = observed
    by least squares, clip negatives, renormalize.

    A rank-deficient system is reported with SingularSystemWarning and the
    observed rates are returned unchanged.
    """
    M = np.asarray(confusion, dtype=float)
    obs = validate_prevalence(observed)
    n = obs.shape[0]
    if M.shape != (n, n):
        raise ShapeMismatch("confusion matrix must be n x n")
    if np.any(M < -1e-9) or np.any(np.abs(M.sum(axis=0) - 1.0) > 1e-6):
        raise ValueError("confusion matrix must be column-stochastic")
    sol, _, rank, _ = np.linalg.lstsq(M, obs, rcond=None)
    if rank < n:
        warnings.warn(
            "rank-deficient adjustment system; returning observed rates",
            SingularSystemWarning,
        )
        return obs
    sol = np.clip(sol, 0.0, None)
    total = sol.sum()
    if total <= 0:
        warnings.warn(
            "adjustment collapsed to zero mass; returning observed rates",
            SingularSystemWarning,
        )
        return obs
    return validate_prevalence(sol / total)


def emq_quantify(
    training_prior, test_posteriors, max_iter: int = 1000, tol: float = 1e-6
) -> np.ndarray:
    """Expectation-maximization prevalence estimate.

    E-step rescales each posterior row by alpha_t / beta and renormalizes;
    M-step averages the rescaled rows. Stops when the max-norm change drops
    below `tol` (keeping the iterate before the sub-tolerance move, so a
    fixed point is returned exactly) or after `max_iter` iterations; always
    returns the last iterate.
    """
    beta = np.clip(np.asarray(training_prior, dtype=float), 1e-12, None)
    beta = beta / beta.sum()
    P = validate_posteriors(test_posteriors)
    if P.shape[1] != beta.shape[0]:
        raise ShapeMismatch("posterior width must match the prior length")
    alpha = beta.copy()
    new = alpha
    for _ in range(max_iter):
        W = P * (alpha / beta)
        W /= np.maximum(W.sum(axis=1, keepdims=True), _DENSITY_FLOOR)
        new = W.mean(axis=0)
        if np.abs(new - alpha).max() < tol:
            break
        alpha = new
    else:
        alpha = new
    return validate_prevalence(alpha)


HDY_BIN_GRID = tuple(range(10, 111, 10))
_HDY_ALPHA_GRID = np.linspace(0.0, 1.0, 1001)


def _scores_histogram(scores, b: int) -> np.ndarray:
    edges = np.arange(b + 1, dtype=float) / b
    counts, _ = np.histogram(np.clip(scores, 0.0, 1.0), bins=edges)
    return counts / len(scores)


def _binary_hd2(mix, test) -> float:
    return max(0.0, 1.0 - float(np.sqrt(mix * test).sum()))


def hdy_binary_quantify(train_pos, train_neg, test_scores) -> float:
    """Binary Hellinger-distance quantifier on positive-class scores.

    For each bin count in {10, 20, ..., 110}, minimizes the squared Hellinger
    distance between the alpha-mixture of the class-wise score histograms and
    the test histogram (0.001-step grid plus a bounded local refinement), and
    returns the median of the 11 per-bin estimates. On ties the lowest
    optimal alpha of the grid wins.
    """
    pos = np.asarray(train_pos, dtype=float)
    neg = np.asarray(train_neg, dtype=float)
    test = np.asarray(test_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise EmptyClass("both training classes need examples")
    estimates = []
    for b in HDY_BIN_GRID:
        hp = _scores_histogram(pos, b)
        hn = _scores_histogram(neg, b)
        ht = _scores_histogram(test, b)
        grid = _HDY_ALPHA_GRID
        mixes = grid[:, None] * hp[None, :] + (1.0 - grid)[:, None] * hn[None, :]
        losses = 1.0 - np.sqrt(mixes * ht[None, :]).sum(axis=1)
        k = int(np.argmin(losses))
        best_alpha, best_loss = float(grid[k]), float(losses[k])
        lo = grid[max(k - 1, 0)]
        hi = grid[min(k + 1, len(grid) - 1)]
        res = minimize_scalar(
            lambda a: _binary_hd2(a * hp + (1.0 - a) * hn, ht),
            bounds=(lo, hi),
            method="bounded",
            options={"xatol": 1e-6},
        )
        if np.isfinite(res.fun) and res.fun < best_loss:
            best_alpha = float(res.x)
        estimates.append(best_alpha)
    return float(np.median(estimates))


def hdy_ova_quantify(per_class_estimates) -> np.ndarray:
    """L1-normalize per-class binary estimates; all-zero maps to uniform."""
    e = np.asarray(per_class_estimates, dtype=float)
    if np.any(e < 0):
        raise ValueError("estimates must be nonnegative")
    total = e.sum()
    if total == 0:
        return np.full(e.shape[0], 1.0 / e.shape[0])
    return validate_prevalence(e / total)


def dm_quantify(
    train_hists,
    test_hist,
    divergence: DiscreteDivergence,
    config: OptimizerConfig = OptimizerConfig(),
) -> np.ndarray:
    """Distribution matching over histogram representations."""
    alpha, _ = minimize_on_simplex(
        lambda a: dm_loss(train_hists, test_hist, a, divergence),
        len(train_hists),
        config,
    )
    return alpha


def mixture_ml_quantify(
    log_density_matrix, config: OptimizerConfig = OptimizerConfig()
) -> np.ndarray:
    """Maximum-likelihood mixture weights from a (rows, classes) matrix of
    per-class log-densities, minimized in log space."""
    L = np.asarray(log_density_matrix, dtype=float)
    if L.ndim != 2 or L.shape[0] == 0:
        raise ShapeMismatch("expected a (rows, classes) log-density matrix")
    n = L.shape[1]
    if n == 1:
        return np.ones(1)

    def nll(alpha):
        with np.errstate(divide="ignore"):
            la = np.log(alpha)
        return -float(logsumexp(L + la[None, :], axis=1).sum())

    alpha, _ = minimize_on_simplex(nll, n, config)
    return alpha


def kdey_ml_quantify(
    class_kdes, test_posteriors, config: OptimizerConfig = OptimizerConfig()
) -> np.ndarray:
    """KDE mixture maximum likelihood: per-class test densities are computed
    once, then the negative log-likelihood is minimized over the simplex."""
    if len(class_kdes) == 1:
        return np.ones(1)
    L = np.column_stack([kde_log_densities(k, test_posteriors) for k in class_kdes])
    return mixture_ml_quantify(L, config)


@dataclass(frozen=True)
class MonteCarloState:
    """Presampled reference points with their per-class and reference densities."""

    samples: np.ndarray  # (t, D)
    class_densities: np.ndarray  # (t, n)
    reference_densities: np.ndarray  # (t,) row means of class_densities

    @property
    def trials(self) -> int:
        return self.samples.shape[0]


def kdey_hd_presample(class_kdes, t: int, seed) -> MonteCarloState:
    """Draw t points from the uniform-weight class mixture and cache the
    per-class densities at them (the matrix whose product with alpha gives
    the mixture density)."""
    n = len(class_kdes)
    mixture = KdeMixture(tuple(class_kdes), np.full(n, 1.0 / n))
    samples = kde_sample(mixture, t, seed)
    M = np.column_stack([kde_densities(k, samples) for k in class_kdes])
    return MonteCarloState(samples, M, M.mean(axis=1))


def kdey_hd_quantify(
    class_kdes,
    test_posteriors,
    t: int,
    seed,
    config: OptimizerConfig = OptimizerConfig(),
    generator: Generator = Generator.SQUARED_HELLINGER,
    state: MonteCarloState | None = None,
) -> np.ndarray:
    """Distribution matching with a Monte Carlo f-divergence estimate.

    Fits a KDE on the test posteriors, evaluates it on the presampled
    points, and minimizes the importance-sampled estimate of
    D_f(mixture || test) where the mixture density at each presampled point
    is the matrix-vector product of the cached class densities with alpha.
    """
    n = len(class_kdes)
    if n == 1:
        return np.ones(1)
    if state is None:
        state = kdey_hd_presample(class_kdes, t, seed)
    h = class_kdes[0].bandwidth
    q_model = kde_fit(test_posteriors, h)
    logq = kde_log_densities(q_model, state.samples)
    logr = np.log(np.maximum(state.reference_densities, _DENSITY_FLOOR))
    weight = np.exp(np.clip(logq - logr, -_LOG_CLAMP, _LOG_CLAMP))
    M = state.class_densities

    def objective(alpha):
        mix = np.maximum(M @ alpha, _DENSITY_FLOOR)
        ratio = np.exp(np.clip(np.log(mix) - logq, -_LOG_CLAMP, _LOG_CLAMP))
        return float(np.mean(generator.evaluate(ratio) * weight))

    alpha, _ = minimize_on_simplex(objective, n, config)
    return alpha


def kdey_cs_quantify(pre, config: OptimizerConfig = OptimizerConfig()) -> np.ndarray:
    """Closed-form Cauchy-Schwarz matching over precomputed Gram sums."""
    from .divergences import cs_objective

    if pre.n == 1:
        return np.ones(1)
    alpha, _ = minimize_on_simplex(lambda a: cs_objective(pre, a), pre.n, config)
    return alpha


# ---------------------------------------------------------------------------
# Dirichlet density modelling (the DIR baseline)
# ---------------------------------------------------------------------------

DIR_CLIP = 1e-4
_DIR_MAX_ITER = 10000


def _clip_to_interior(rows) -> np.ndarray:
    m = np.clip(np.asarray(rows, dtype=float), DIR_CLIP, 1.0 - DIR_CLIP)
    return m / m.sum(axis=1, keepdims=True)


def dirichlet_log_pdf(params, rows) -> np.ndarray:
    """Row-wise Dirichlet log-density."""
    a = np.asarray(params, dtype=float)
    x = np.asarray(rows, dtype=float)
    norm = gammaln(a.sum()) - gammaln(a).sum()
    return norm + (np.log(x) * (a - 1.0)[None, :]).sum(axis=1)


def _inv_digamma(y: np.ndarray) -> np.ndarray:
    # Initialisation from the asymptotics of digamma, then Newton steps.
    x = np.where(y >= -2.22, np.exp(y) + 0.5, -1.0 / (y - digamma(1.0)))
    for _ in range(5):
        x = x - (digamma(x) - y) / polygamma(1, x)
    return x


def _dirichlet_moment_match(rows: np.ndarray) -> np.ndarray:
    m = rows.mean(axis=0)
    v = rows.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_per = np.where(v > 0, m * (1.0 - m) / v - 1.0, np.nan)
    s_ok = s_per[np.isfinite(s_per) & (s_per > 0)]
    scale = float(np.mean(s_ok)) if s_ok.size else float(rows.shape[1])
    return np.clip(scale * m, 1e-6, None)


def dir_fit_class(posteriors) -> np.ndarray:
    """Maximum-likelihood Dirichlet parameters via fixed-point iteration.

    Rows are clipped into [1e-4, 1 - 1e-4] per coordinate and renormalized
    before fitting (the likelihood diverges at the boundary). If the fixed
    point has not converged after 10,000 iterations, the method-of-moments
    start is returned and NoConvergenceWarning is issued.
    """
    X = validate_posteriors(posteriors)
    if X.shape[0] < 2:
        raise TooFewExamples("Dirichlet fitting needs at least 2 rows")
    X = _clip_to_interior(X)
    log_xbar = np.log(X).mean(axis=0)
    start = _dirichlet_moment_match(X)
    a = start.copy()
    for _ in range(_DIR_MAX_ITER):
        a_new = _inv_digamma(digamma(a.sum()) + log_xbar)
        if not np.all(np.isfinite(a_new)) or np.any(a_new <= 0):
            break
        if np.abs(a_new - a).max() < 1e-10 * max(1.0, np.abs(a).max()):
            return a_new
        a = a_new
    warnings.warn(
        "Dirichlet fixed point did not converge; using moment estimate",
        NoConvergenceWarning,
    )
    return start


# ---------------------------------------------------------------------------
# Quantifier interface and method classes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassifierConfig:
    """Embedded logistic-regression hyperparameters."""

    C: float = 1.0
    weighting: ClassWeighting = ClassWeighting.NONE
    folds: int = 5


@dataclass(frozen=True)
class ClassifierBundle:
    """A fitted classifier plus its cross-validated training posteriors."""

    model: LogisticModel
    cv_posteriors: np.ndarray


def fit_classifier_bundle(
    train: LabelledDataset,
    config: ClassifierConfig,
    seed: int,
    cache: dict | None = None,
) -> ClassifierBundle:
    """Fit the embedded classifier and its CV posteriors, optionally memoized.

    The cache key includes the dataset object's identity, so methods that
    share a classifier configuration reuse one fit per dataset.
    """
    key = (id(train), config.C, config.weighting, config.folds, seed)
    if cache is not None and key in cache:
        return cache[key][1]
    model = fit_logistic(train, config.C, config.weighting, seed)
    cv = cross_val_posteriors(train, config.folds, config.C, config.weighting, seed)
    bundle = ClassifierBundle(model, cv)
    if cache is not None:
        cache[key] = (train, bundle)  # keep the dataset alive to pin its id
    return bundle


class Quantifier(abc.ABC):
    """fit(train) -> self; quantify(bag) -> prevalence vector."""

    @abc.abstractmethod
    def fit(self, train: LabelledDataset, *, bundle: ClassifierBundle | None = None):
        ...

    @abc.abstractmethod
    def quantify(self, bag: Bag) -> np.ndarray:
        ...


class AggregativeQuantifier(Quantifier):
    """Base for methods that aggregate the embedded classifier's posteriors.

    Fitted quantifiers are immutable; `quantify` is safe to call concurrently
    on distinct bags. `bundle_cache` may be set to a dict to share classifier
    fits across methods with the same configuration.
    """

    def __init__(self, classifier: ClassifierConfig = ClassifierConfig(), seed: int = 0):
        self.classifier_config = classifier
        self.seed = seed
        self.bundle_cache: dict | None = None
        self._model: LogisticModel | None = None
        self._n: int | None = None

    def _optimizer(self) -> OptimizerConfig:
        return replace(OptimizerConfig(), seed=self.seed)

    def fit(self, train: LabelledDataset, *, bundle: ClassifierBundle | None = None):
        if bundle is None:
            bundle = fit_classifier_bundle(
                train, self.classifier_config, self.seed, self.bundle_cache
            )
        self._model = bundle.model
        self._n = train.n
        self._fit_aggregation(bundle.cv_posteriors, train)
        return self

    def quantify(self, bag: Bag) -> np.ndarray:
        if self._model is None:
            raise RuntimeError("quantifier is not fitted")
        posteriors = predict_posteriors(self._model, bag)
        return validate_prevalence(self._aggregate(posteriors))

    def _fit_aggregation(self, cv_posteriors: np.ndarray, train: LabelledDataset):
        pass

    @abc.abstractmethod
    def _aggregate(self, posteriors: np.ndarray) -> np.ndarray:
        ...


class CC(AggregativeQuantifier):
    """Classify and count."""

    def _aggregate(self, posteriors):
        return cc_quantify(posteriors)


class ACC(AggregativeQuantifier):
    """Adjusted classify and count: corrects argmax rates through the
    cross-validated misclassification matrix."""

    def _fit_aggregation(self, cv_posteriors, train):
        self._confusion = estimate_hard_confusion(cv_posteriors, train.labels, train.n)

    def _aggregate(self, posteriors):
        return acc_quantify(self._confusion, cc_quantify(posteriors))


class PACC(AggregativeQuantifier):
    """Probabilistic ACC: expected counts replace argmax counts."""

    def _fit_aggregation(self, cv_posteriors, train):
        self._confusion = estimate_soft_confusion(cv_posteriors, train.labels, train.n)

    def _aggregate(self, posteriors):
        return acc_quantify(self._confusion, posteriors.mean(axis=0))


class EMQ(AggregativeQuantifier):
    """Expectation-maximization reweighting of posteriors and priors."""

    def __init__(self, classifier=ClassifierConfig(), seed=0, max_iter=1000, tol=1e-6):
        super().__init__(classifier, seed)
        self.max_iter = max_iter
        self.tol = tol

    def _fit_aggregation(self, cv_posteriors, train):
        self._prior = train.prevalence()

    def _aggregate(self, posteriors):
        return emq_quantify(self._prior, posteriors, self.max_iter, self.tol)


class HDy(AggregativeQuantifier):
    """Binary Hellinger-distance quantifier (bin-median rule)."""

    def _fit_aggregation(self, cv_posteriors, train):
        if train.n != 2:
            raise ValueError("HDy is binary only; use HDyOvA for n > 2")
        pos = cv_posteriors[train.labels == 1, 1]
        neg = cv_posteriors[train.labels == 0, 1]
        if pos.size == 0 or neg.size == 0:
            raise EmptyClass("both classes need training examples")
        self._pos, self._neg = pos, neg

    def _aggregate(self, posteriors):
        p1 = hdy_binary_quantify(self._pos, self._neg, posteriors[:, 1])
        return np.array([1.0 - p1, p1])


class HDyOvA(Quantifier):
    """One-vs-all decomposition of HDy with L1-normalized recombination."""

    def __init__(self, classifier: ClassifierConfig = ClassifierConfig(), seed: int = 0):
        self.classifier_config = classifier
        self.seed = seed
        self._per_class = None

    def fit(self, train: LabelledDataset, *, bundle: ClassifierBundle | None = None):
        # The shared multiclass bundle is of no use here: every class gets
        # its own binary classifier.
        del bundle
        cfg = self.classifier_config
        per_class = []
        for i in range(train.n):
            child_seed = int(np.random.SeedSequence([self.seed, i]).generate_state(1)[0])
            binary = LabelledDataset(
                train.features, (train.labels == i).astype(int), 2
            )
            model = fit_logistic(binary, cfg.C, cfg.weighting, child_seed)
            cv = cross_val_posteriors(
                binary, cfg.folds, cfg.C, cfg.weighting, child_seed
            )
            pos = cv[binary.labels == 1, 1]
            neg = cv[binary.labels == 0, 1]
            per_class.append((model, pos, neg))
        self._per_class = per_class
        return self

    def quantify(self, bag: Bag) -> np.ndarray:
        if self._per_class is None:
            raise RuntimeError("quantifier is not fitted")
        estimates = []
        for model, pos, neg in self._per_class:
            scores = predict_posteriors(model, bag)[:, 1]
            estimates.append(hdy_binary_quantify(pos, neg, scores))
        return hdy_ova_quantify(estimates)


class DM(AggregativeQuantifier):
    """Multiclass distribution matching over class-wise histograms.

    The divergence choice gives the DM-T (Topsoe), DM-HD (squared Hellinger)
    and DM-CS variants.
    """

    def __init__(
        self,
        bins: int = 8,
        divergence: DiscreteDivergence = DiscreteDivergence.HD2,
        layout: HistogramLayout = HistogramLayout.AVERAGED,
        classifier: ClassifierConfig = ClassifierConfig(),
        seed: int = 0,
    ):
        super().__init__(classifier, seed)
        self.bins = bins
        self.divergence = divergence
        self.layout = layout

    def _fit_aggregation(self, cv_posteriors, train):
        hists = []
        for idx in class_split(train):
            if idx.size == 0:
                raise EmptyClass("every class needs training examples")
            hists.append(histogram_of_bag(cv_posteriors[idx], self.bins, self.layout))
        self._train_hists = hists

    def _aggregate(self, posteriors):
        test_hist = histogram_of_bag(posteriors, self.bins, self.layout)
        return dm_quantify(self._train_hists, test_hist, self.divergence, self._optimizer())


class _KdeyBase(AggregativeQuantifier):
    def __init__(
        self,
        bandwidth: float = 0.1,
        classifier: ClassifierConfig = ClassifierConfig(),
        seed: int = 0,
    ):
        super().__init__(classifier, seed)
        self.bandwidth = bandwidth

    def _class_models(self, cv_posteriors, train) -> list[KdeModel]:
        models = []
        for idx in class_split(train):
            if idx.size == 0:
                raise EmptyClass("every class needs training examples")
            models.append(kde_fit(cv_posteriors[idx], self.bandwidth))
        return models


class KDEyML(_KdeyBase):
    """Maximum likelihood of the KDE mixture on the test posteriors."""

    def _fit_aggregation(self, cv_posteriors, train):
        self._kdes = self._class_models(cv_posteriors, train)

    def _aggregate(self, posteriors):
        return kdey_ml_quantify(self._kdes, posteriors, self._optimizer())


class KDEyHD(_KdeyBase):
    """Monte Carlo distribution matching with the squared Hellinger
    generator; reference points are presampled at fit time."""

    def __init__(
        self,
        bandwidth: float = 0.1,
        trials: int = 10000,
        classifier: ClassifierConfig = ClassifierConfig(),
        seed: int = 0,
    ):
        super().__init__(bandwidth, classifier, seed)
        self.trials = trials

    def _fit_aggregation(self, cv_posteriors, train):
        self._kdes = self._class_models(cv_posteriors, train)
        self._state = (
            kdey_hd_presample(self._kdes, self.trials, self.seed)
            if train.n > 1
            else None
        )

    def _aggregate(self, posteriors):
        return kdey_hd_quantify(
            self._kdes,
            posteriors,
            self.trials,
            self.seed,
            self._optimizer(),
            state=self._state,
        )


class KDEyCS(_KdeyBase):
    """Closed-form Cauchy-Schwarz matching; the train-train Gram sums are
    precomputed at fit time."""

    def _fit_aggregation(self, cv_posteriors, train):
        self._class_points = [cv_posteriors[idx] for idx in class_split(train)]
        if any(p.shape[0] == 0 for p in self._class_points):
            raise EmptyClass("every class needs training examples")
        self._B_bar = cs_train_gram(self._class_points, self.bandwidth)

    def _aggregate(self, posteriors):
        pre = cs_precompute(
            self._class_points, posteriors, self.bandwidth, B_bar=self._B_bar
        )
        return kdey_cs_quantify(pre, self._optimizer())


class DIR(AggregativeQuantifier):
    """Maximum likelihood with per-class Dirichlet densities instead of KDEs."""

    def _fit_aggregation(self, cv_posteriors, train):
        params = []
        for idx in class_split(train):
            if idx.size == 0:
                raise EmptyClass("every class needs training examples")
            params.append(dir_fit_class(cv_posteriors[idx]))
        self._params = params

    def _aggregate(self, posteriors):
        rows = _clip_to_interior(posteriors)
        L = np.column_stack([dirichlet_log_pdf(a, rows) for a in self._params])
        return mixture_ml_quantify(L, self._optimizer())


# ---------------------------------------------------------------------------
# Method registry (CLI surface)
# ---------------------------------------------------------------------------


def _classifier_from_params(params: dict) -> ClassifierConfig:
    weighting = params.get("class_weight", "none")
    if isinstance(weighting, str):
        weighting = ClassWeighting(weighting.lower())
    return ClassifierConfig(
        C=float(params.get("C", 1.0)),
        weighting=weighting,
        folds=int(params.get("folds", 5)),
    )


def build_quantifier(name: str, params: dict | None = None, seed: int = 0) -> Quantifier:
    """Instantiate a registered method from a flat hyperparameter mapping.

    Recognized keys: C, class_weight, folds (all methods); h (KDEy methods);
    b, layout (DM methods); t (KDEy-HD); max_iter, tol (EMQ).
    """
    params = dict(params or {})
    cfg = _classifier_from_params(params)
    key = name.lower().replace("_", "-")
    if key == "cc":
        return CC(cfg, seed)
    if key == "acc":
        return ACC(cfg, seed)
    if key == "pacc":
        return PACC(cfg, seed)
    if key == "emq":
        return EMQ(
            cfg,
            seed,
            max_iter=int(params.get("max_iter", 1000)),
            tol=float(params.get("tol", 1e-6)),
        )
    if key == "hdy":
        return HDy(cfg, seed)
    if key == "hdy-ova":
        return HDyOvA(cfg, seed)
    if key in ("dm-hd", "dm-t", "dm-cs"):
        divergence = {
            "dm-hd": DiscreteDivergence.HD2,
            "dm-t": DiscreteDivergence.TOPSOE,
            "dm-cs": DiscreteDivergence.CS_DISCRETE,
        }[key]
        layout = HistogramLayout(params.get("layout", "averaged"))
        return DM(int(params.get("b", 8)), divergence, layout, cfg, seed)
    if key == "kdey-ml":
        return KDEyML(float(params.get("h", 0.1)), cfg, seed)
    if key == "kdey-hd":
        return KDEyHD(
            float(params.get("h", 0.1)), int(params.get("t", 10000)), cfg, seed
        )
    if key == "kdey-cs":
        return KDEyCS(float(params.get("h", 0.1)), cfg, seed)
    if key == "dir":
        return DIR(cfg, seed)
    raise KeyError(f"unknown method {name!r}")


METHOD_NAMES = (
    "cc",
    "acc",
    "pacc",
    "emq",
    "hdy",
    "hdy-ova",
    "dm-t",
    "dm-hd",
    "dm-cs",
    "kdey-hd",
    "kdey-cs",
    "kdey-ml",
    "dir",
)
