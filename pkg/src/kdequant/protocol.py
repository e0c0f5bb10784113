"""Evaluation machinery.

Artificial-prevalence protocol: prevalence targets are drawn uniformly from
the simplex (Kraemer sampling), bags are materialized from a labelled pool
by largest-remainder rounding, and methods are scored with AE / RAE against
the realized (count-based) prevalence. Bag generation depends only on the
pool and the protocol configuration, never on the method under test, so all
methods see identical bags.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .core import Bag, LabelledDataset, LengthMismatch, class_split, concat_datasets, validate_prevalence

# Keeps the test-bag seed stream disjoint from the validation stream.
TEST_SEED_OFFSET = 0x5EED


class ImpossibleTarget(ValueError):
    """A class with positive target prevalence has an empty pool."""


@dataclass(frozen=True)
class ProtocolConfig:
    bag_count: int
    bag_size: int
    seed: int = 0

    def __post_init__(self):
        if self.bag_count < 1 or self.bag_size < 1:
            raise ValueError("bag_count and bag_size must be at least 1")


def kraemer_sample(n: int, seed) -> np.ndarray:
    """Uniform draw from the (n-1)-simplex: consecutive differences of n-1
    sorted uniforms against the endpoints 0 and 1."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if n == 1:
        return np.ones(1)
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.random(n - 1))
    return np.diff(cuts, prepend=0.0, append=1.0)


def largest_remainder_counts(target, z: int) -> np.ndarray:
    """Integer class counts summing to z; ties go to the lowest class index."""
    target = validate_prevalence(target)
    raw = z * target
    counts = np.floor(raw).astype(int)
    deficit = z - int(counts.sum())
    if deficit > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:deficit]] += 1
    return counts


def draw_bag(pool: LabelledDataset, target, z: int, seed) -> tuple[Bag, np.ndarray]:
    """Materialize a bag with the largest-remainder class composition.

    Classes are sampled without replacement when the pool suffices and with
    replacement otherwise. Returns the bag together with its realized
    (count-based) prevalence, which is the ground truth of the bag actually
    presented.
    """
    target = validate_prevalence(target)
    if target.shape[0] != pool.n:
        raise LengthMismatch("target length must match the pool's class count")
    counts = largest_remainder_counts(target, z)
    rng = np.random.default_rng(seed)
    splits = class_split(pool)
    rows = []
    for c in range(pool.n):
        k = int(counts[c])
        if k == 0:
            continue
        idx = splits[c]
        if idx.size == 0:
            raise ImpossibleTarget(f"class {c} has positive target but an empty pool")
        take = rng.choice(idx, size=k, replace=k > idx.size)
        rows.append(pool.features[take])
    return Bag(np.vstack(rows)), counts / z


def absolute_error(true_p, est) -> float:
    """Mean absolute difference of prevalence entries."""
    t = np.asarray(true_p, dtype=float)
    e = np.asarray(est, dtype=float)
    if t.shape != e.shape:
        raise LengthMismatch("prevalence vectors differ in length")
    return float(np.abs(t - e).mean())


def relative_absolute_error(true_p, est, z: int) -> float:
    """AE with each term divided by the true prevalence smoothed by
    eps = 0.5 / z."""
    t = np.asarray(true_p, dtype=float)
    e = np.asarray(est, dtype=float)
    if t.shape != e.shape:
        raise LengthMismatch("prevalence vectors differ in length")
    if z < 1:
        raise ValueError("bag size must be at least 1")
    eps = 0.5 / z
    return float((np.abs(t - e) / (t + eps)).mean())


@dataclass(frozen=True)
class BagResult:
    bag_index: int
    true_prevalence: np.ndarray
    estimated_prevalence: np.ndarray
    ae: float
    rae: float


@dataclass(frozen=True)
class EvaluationReport:
    method_id: str
    dataset_id: str
    per_bag: tuple[BagResult, ...]
    mean_ae: float
    mean_rae: float

    @property
    def per_bag_errors(self) -> list[tuple[float, float]]:
        return [(r.ae, r.rae) for r in self.per_bag]


def protocol_targets(pool_n: int, config: ProtocolConfig) -> list[np.ndarray]:
    """The prevalence targets the protocol will use, in bag order."""
    children = np.random.SeedSequence(config.seed).spawn(config.bag_count)
    return [kraemer_sample(pool_n, np.random.default_rng(c)) for c in children]


def evaluate_protocol(
    quantifier,
    pool: LabelledDataset,
    config: ProtocolConfig,
    *,
    method_id: str = "",
    dataset_id: str = "",
    jobs: int = 1,
) -> EvaluationReport:
    """Score a fitted quantifier over the protocol's bags.

    Each bag gets its own child seed, so evaluation parallelises over bags
    without changing the bag sequence; results keep bag-index order.
    """
    children = np.random.SeedSequence(config.seed).spawn(config.bag_count)

    def one(b: int) -> BagResult:
        rng = np.random.default_rng(children[b])
        target = kraemer_sample(pool.n, rng)
        bag, realized = draw_bag(pool, target, config.bag_size, rng)
        est = validate_prevalence(quantifier.quantify(bag))
        return BagResult(
            b,
            realized,
            est,
            absolute_error(realized, est),
            relative_absolute_error(realized, est, config.bag_size),
        )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool_exec:
            results = list(pool_exec.map(one, range(config.bag_count)))
    else:
        results = [one(b) for b in range(config.bag_count)]
    mean_ae = float(np.mean([r.ae for r in results]))
    mean_rae = float(np.mean([r.rae for r in results]))
    return EvaluationReport(method_id, dataset_id, tuple(results), mean_ae, mean_rae)


class SelectionLoss(enum.Enum):
    MAE = "mae"
    MRAE = "mrae"


@dataclass(frozen=True)
class GridPointScore:
    params: dict
    score: float | None
    error: str | None = None


@dataclass(frozen=True)
class GridSearchResult:
    best_params: dict
    quantifier: object
    scores: tuple[GridPointScore, ...]


def grid_search(
    builder: Callable[[dict], object],
    grid: Sequence[dict],
    train: LabelledDataset,
    val_pool: LabelledDataset,
    config: ProtocolConfig,
    loss: SelectionLoss = SelectionLoss.MAE,
    *,
    jobs: int = 1,
    refit: bool = True,
) -> GridSearchResult:
    """Quantification-oriented model selection.

    Every grid point is evaluated on the same validation bags; the minimizer
    wins (ties resolve to the earliest point in grid order). A point that
    raises is skipped with its failure recorded. The winner is refitted on
    the union of the training set and the validation pool.
    """
    if not grid:
        raise ValueError("grid must not be empty")
    loss = SelectionLoss(loss)
    scores: list[GridPointScore] = []
    for params in grid:
        try:
            q = builder(dict(params))
            q.fit(train)
            report = evaluate_protocol(q, val_pool, config, jobs=jobs)
            value = report.mean_ae if loss is SelectionLoss.MAE else report.mean_rae
            scores.append(GridPointScore(dict(params), float(value)))
        except Exception as exc:  # noqa: BLE001 - a bad point must not kill the search
            scores.append(GridPointScore(dict(params), None, repr(exc)))
    best = None
    for s in scores:
        if s.score is not None and (best is None or s.score < best.score):
            best = s
    if best is None:
        raise RuntimeError("every grid point failed: " + "; ".join(
            f"{s.params} -> {s.error}" for s in scores
        ))
    final = builder(dict(best.params))
    if refit:
        final.fit(concat_datasets(train, val_pool))
    return GridSearchResult(dict(best.params), final, tuple(scores))
