"""Quadratic-voting aggregation (FedQV) on the server side.

One round runs, in order: min-max normalisation of the submitted similarity
scores, the budget penalty for abnormal scores, the masked credit rule,
the quadratic vote, the budget deduction and the vote-weighted average.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .numerics import as_vector, stack

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class VotingConfig:
    theta: float = 0.1
    initial_budget: float = 25.0

    def __post_init__(self):
        # theta = 0.5 is allowed: the acceptance band is empty and every credit is 0
        if not 0.0 < self.theta <= 0.5:
            raise ValueError(f"theta must lie in (0, 0.5], got {self.theta}")
        if not (math.isfinite(self.initial_budget) and self.initial_budget > 0):
            raise ValueError(f"initial budget must be positive, got {self.initial_budget}")


@dataclass
class UpdateMessage:
    model: np.ndarray
    similarity: float
    dataset_size: int
    party: int = 0

    def __post_init__(self):
        self.model = as_vector(self.model)
        if not math.isfinite(self.similarity):
            raise ValueError("similarity must be finite")
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be >= 1")


@dataclass
class BudgetLedger:
    """Per-party voting budgets. Unseen parties start at ``initial_budget``."""

    initial_budget: float
    budgets: dict = field(default_factory=dict)

    def __getitem__(self, party) -> float:
        return self.budgets.get(party, self.initial_budget)

    def __setitem__(self, party, value: float) -> None:
        if value < 0 or not math.isfinite(value):
            raise ValueError(f"budget must be finite and >= 0, got {value}")
        self.budgets[party] = float(value)

    def copy(self) -> "BudgetLedger":
        return BudgetLedger(self.initial_budget, dict(self.budgets))


@dataclass
class RoundOutcome:
    parties: list
    normalized: np.ndarray
    credits: np.ndarray
    votes: np.ndarray
    budgets_after: np.ndarray
    aggregated: np.ndarray
    deducted: np.ndarray = None

    @property
    def weights(self) -> np.ndarray:
        total = self.votes.sum()
        return self.votes / total if total > 0 else np.zeros_like(self.votes)


def min_max_normalize(scores: Sequence[float]) -> np.ndarray:
    """Affine map onto [0, 1]; a constant (or single) score maps to 0.5."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("need at least one score")
    lo, hi = s.min(), s.max()
    if hi - lo <= 0:
        return np.full(s.shape, 0.5)
    return np.clip((s - lo) / (hi - lo), 0.0, 1.0)


def is_abnormal(s_bar: float, theta: float) -> bool:
    return s_bar <= theta or s_bar >= 1.0 - theta


def apply_penalty(ledger: BudgetLedger, party, s_bar: float, theta: float) -> BudgetLedger:
    """Shrink the budget of a party whose normalised score is outside (theta, 1 - theta)."""
    if is_abnormal(s_bar, theta):
        ledger[party] = max(0.0, ledger[party] + math.log(max(s_bar, LOG_FLOOR)) - 1.0)
    return ledger


def masked_credit(s_bar: float, theta: float) -> float:
    if theta < s_bar < 1.0 - theta:
        return -math.log(s_bar) + 1.0
    return 0.0


def quadratic_vote(dataset_size: int, credit: float, budget: float) -> float:
    return math.sqrt(min(dataset_size * credit, max(0.0, budget)))


def deduct_budget(ledger: BudgetLedger, party, vote: float) -> BudgetLedger:
    if vote < 0:
        raise ValueError("vote must be >= 0")
    ledger[party] = max(0.0, ledger[party] - vote * vote)
    return ledger


def aggregate_weighted(models, weights, fallback=None) -> np.ndarray:
    """Convex combination of ``models``; ``fallback`` is returned when all weights are 0."""
    mat = stack(models)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (mat.shape[0],):
        raise ValueError("need exactly one weight per model")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        if fallback is None:
            raise ValueError("all weights are zero and no fallback model was given")
        return as_vector(fallback).copy()
    return (w / total) @ mat


# (ledger, parties, credits) -> credits; hook for the adaptive-budget extension
CreditHook = Callable[[BudgetLedger, list, np.ndarray], np.ndarray]


def fedqv_round(prev_global, msgs: Sequence[UpdateMessage], ledger: BudgetLedger,
                cfg: VotingConfig, credit_hook: CreditHook | None = None) -> RoundOutcome:
    """Run one FedQV aggregation round, mutating ``ledger`` in party order.

    ``credit_hook`` runs between the credit rule and the vote; it may adjust
    budgets in ``ledger`` and returns the credits to vote with.
    """
    if not msgs:
        raise ValueError("need at least one update")
    parties = [m.party for m in msgs]
    s_bar = min_max_normalize([m.similarity for m in msgs])
    for p, s in zip(parties, s_bar):
        apply_penalty(ledger, p, s, cfg.theta)
    credits = np.array([masked_credit(s, cfg.theta) for s in s_bar])
    if credit_hook is not None:
        credits = np.asarray(credit_hook(ledger, parties, credits), dtype=np.float64)
    votes = np.zeros(len(msgs))
    deducted = np.zeros(len(msgs))
    for i, m in enumerate(msgs):
        before = ledger[m.party]
        votes[i] = quadratic_vote(m.dataset_size, credits[i], before)
        deduct_budget(ledger, m.party, votes[i])
        deducted[i] = before - ledger[m.party]
    aggregated = aggregate_weighted([m.model for m in msgs], votes, fallback=prev_global)
    return RoundOutcome(parties, s_bar, credits, votes,
                        np.array([ledger[p] for p in parties]), aggregated, deducted)
