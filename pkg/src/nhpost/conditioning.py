"""Error calculus for estimating conditional probabilities from two strong estimates.

Given additive estimates of ``A = P(x, s)`` and ``B = P(s)`` with ``B >= 2^-q``,
the ratio ``A/B`` is certified to additive error ``epsilon`` once each
component error is at most ``epsilon' = (epsilon / 4) 2^-q``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalError, PreconditionError


class InsufficientPrecisionError(NumericalError):
    """The denominator estimate cannot be bounded away from zero."""


@dataclass(frozen=True)
class ProbabilityEstimate:
    value: float
    additive_error_bound: float = 0.0

    def __post_init__(self):
        b = float(self.additive_error_bound)
        if not math.isfinite(b) or b < 0:
            raise ValueError(f"error bound must be finite and nonnegative, got {b}")
        v = float(self.value)
        if not math.isfinite(v):
            raise ValueError("estimate value must be finite")
        object.__setattr__(self, "value", min(1.0, max(0.0, v)))
        object.__setattr__(self, "additive_error_bound", b)


@dataclass(frozen=True)
class ConditioningBudget:
    epsilon: float
    q: float

    @property
    def epsilon_prime(self) -> float:
        return self.epsilon / 4.0 * 2.0 ** (-self.q)

    @property
    def min_denominator(self) -> float:
        return 2.0 ** (-self.q)


def error_budget(epsilon: float, q: float) -> ConditioningBudget:
    """Component budget for a target conditional error; ``epsilon > 1`` is clamped to 1."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if q < 0:
        raise ValueError("q must be nonnegative")
    return ConditioningBudget(min(float(epsilon), 1.0), float(q))


def certified_error(b_value: float, budget: ConditioningBudget) -> float:
    """``4 epsilon' / max(B~ - epsilon', 2^-q)``."""
    ep = budget.epsilon_prime
    return 4.0 * ep / max(b_value - ep, budget.min_denominator)


def conditional_estimate(a_est: ProbabilityEstimate, b_est: ProbabilityEstimate, budget: ConditioningBudget) -> ProbabilityEstimate:
    """Estimate ``A/B`` with a certified additive error no larger than ``budget.epsilon``."""
    ep = budget.epsilon_prime
    tol = 1e-15 * max(ep, 1e-300)
    for name, est in (("numerator", a_est), ("denominator", b_est)):
        if est.additive_error_bound > ep + tol:
            raise PreconditionError(
                f"{name} error bound {est.additive_error_bound:.3g} exceeds component budget {ep:.3g}"
            )
    if b_est.value - b_est.additive_error_bound <= 0:
        raise InsufficientPrecisionError("denominator estimate is not bounded away from zero")
    value = a_est.value / b_est.value
    return ProbabilityEstimate(value, certified_error(b_est.value, budget))


@dataclass(frozen=True)
class BudgetAudit:
    trials: int
    max_error: float
    max_certified: float
    min_slack: float  # min over trials of (certified - observed)


def verify_budget_bound(trials: int, rng_seed=None, epsilon: float = 0.05, q: float = 12) -> BudgetAudit:
    """Randomized adversarial check of the ratio bound.

    Draws ``B`` in ``[2^-q, 1]`` (log-uniform) and ``A`` in ``[0, B]``, then perturbs
    both by at most ``epsilon'``: half the trials use the extreme corners
    ``+-epsilon'``, the rest uniform offsets. Raises :class:`NumericalError` if an
    observed error exceeds its certified bound or ``epsilon``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    budget = error_budget(epsilon, q)
    ep = budget.epsilon_prime
    rng = np.random.default_rng(rng_seed)
    b = np.exp(rng.uniform(np.log(budget.min_denominator), 0.0, trials))
    a = b * rng.uniform(0.0, 1.0, trials)
    corner = rng.uniform(size=trials) < 0.5
    da = np.where(corner, rng.choice([-ep, ep], trials), rng.uniform(-ep, ep, trials))
    db = np.where(corner, rng.choice([-ep, ep], trials), rng.uniform(-ep, ep, trials))
    a_t = np.clip(a + da, 0.0, 1.0)
    b_t = np.clip(b + db, 0.0, 1.0)
    est = np.clip(a_t / b_t, 0.0, 1.0)
    err = np.abs(est - a / b)
    cert = 4.0 * ep / np.maximum(b_t - ep, budget.min_denominator)
    slack = cert - err
    if np.any(slack < -1e-15) or np.any(err > budget.epsilon):
        raise NumericalError(f"bound violated: max error {err.max():.6g}, min slack {slack.min():.3g}")
    return BudgetAudit(trials, float(err.max()), float(cert.max()), float(slack.min()))


def worst_case_trial(epsilon: float, q: float, a_fraction: float = 0.5) -> tuple[float, float]:
    """The extreme instance ``B = 2^-q``, ``A~ = A + epsilon'``, ``B~ = B - epsilon'``.

    Returns ``(observed error, certified error)``.
    """
    budget = error_budget(epsilon, q)
    ep = budget.epsilon_prime
    b = budget.min_denominator
    a = a_fraction * b
    est = conditional_estimate(ProbabilityEstimate(a + ep, ep), ProbabilityEstimate(b - ep, ep), budget)
    return abs(est.value - a / b), est.additive_error_bound
