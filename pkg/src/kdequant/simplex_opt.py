"""Minimization of a black-box objective over the unit simplex.

The simplex is parameterized through a pinned softmax (first logit fixed at
zero) and searched with derivative-free Nelder-Mead restarts, which copes
with the non-smooth Monte Carlo objectives and never leaves the feasible
set.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .core import validate_prevalence

SNAP_EPS = 1e-12


class NonFiniteObjective(ArithmeticError):
    """The objective was non-finite at the uniform starting point."""


@dataclass(frozen=True)
class OptimizerConfig:
    """Budget and stopping rules for the simplex search.

    `tolerance` bounds the movement of the simplex point between accepted
    steps; `objective_tolerance` bounds the objective decrease.
    """

    max_iterations: int = 2000
    tolerance: float = 1e-8
    objective_tolerance: float = 1e-10
    restarts: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.tolerance <= 0 or self.objective_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.restarts < 1:
            raise ValueError("need at least one start")


def _softmax_pinned(z: np.ndarray) -> np.ndarray:
    full = np.concatenate([[0.0], z])
    full -= full.max()
    e = np.exp(full)
    return e / e.sum()


def minimize_on_simplex(objective, n: int, config: OptimizerConfig = OptimizerConfig()):
    """Minimize `objective` over the (n-1)-simplex.

    Returns (alpha, value). The uniform vector is always one of the starts,
    so the result is never worse than the uniform objective (up to the
    snapping of entries below 1e-12 to exact zeros). Non-finite objective
    values encountered during the search are treated as +inf; at the uniform
    start they raise NonFiniteObjective. Deterministic given config.seed.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    if n == 1:
        alpha = np.ones(1)
        value = float(objective(alpha))
        if not np.isfinite(value):
            raise NonFiniteObjective("objective not finite at (1.0)")
        return alpha, value

    uniform = np.full(n, 1.0 / n)
    f_uniform = float(objective(uniform))
    if not np.isfinite(f_uniform):
        raise NonFiniteObjective("objective not finite at the uniform start")

    def wrapped(z):
        # Non-finite values become a huge finite penalty so the simplex
        # arithmetic inside the solver stays NaN-free.
        val = float(objective(_softmax_pinned(z)))
        return val if np.isfinite(val) else 1e300

    rng = np.random.default_rng(config.seed)
    starts = [np.zeros(n - 1)]
    for _ in range(config.restarts - 1):
        a = rng.dirichlet(np.ones(n))
        a = np.clip(a, 1e-6, None)
        a /= a.sum()
        starts.append(np.log(a[1:]) - np.log(a[0]))

    best_value, best_alpha = f_uniform, uniform
    for x0 in starts:
        res = minimize(
            wrapped,
            x0,
            method="Nelder-Mead",
            options={
                "maxiter": config.max_iterations,
                "maxfev": 4 * config.max_iterations,
                "xatol": config.tolerance,
                "fatol": config.objective_tolerance,
            },
        )
        if np.isfinite(res.fun) and res.fun < min(best_value, 1e300):
            best_value = float(res.fun)
            best_alpha = _softmax_pinned(res.x)

    alpha = np.where(best_alpha < SNAP_EPS, 0.0, best_alpha)
    alpha = validate_prevalence(alpha / alpha.sum())
    return alpha, float(objective(alpha))
