"""Subjective-logic reputation and the adaptive budget/credit rule.

Each round the server samples ``M`` coordinates, checks every selected
party's value against the robust consensus (median +- delta scaled MADs)
and books one positive or negative observation per coordinate. The
reputation score turns the decayed observation counts into a value in
(0, 1) that can top up budgets and gate credits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import stack
from .voting import BudgetLedger

MAD_SCALE = 1.4826
MAD_EPS = 1e-12


@dataclass(frozen=True)
class ReputationParams:
    kappa: float = 1.0
    eta: float = 1.0
    base_rate: float = 0.5
    prior_weight: float = 2.0
    threshold: float = 0.5
    delta: float = 2.0
    num_coords: int = 100
    decay: float = 0.9

    def __post_init__(self):
        for name in ("kappa", "eta", "prior_weight", "delta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("base_rate", "threshold"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.num_coords < 1:
            raise ValueError("num_coords must be >= 1")
        if not 0.0 <= self.decay <= 1.0:
            raise ValueError("decay must lie in [0, 1]")


@dataclass
class ReputationState:
    positive: dict = field(default_factory=dict)
    negative: dict = field(default_factory=dict)

    def decay(self, factor: float) -> None:
        for book in (self.positive, self.negative):
            for k in book:
                book[k] *= factor

    def record(self, party, p_inc: float, n_inc: float) -> None:
        self.positive[party] = self.positive.get(party, 0.0) + float(p_inc)
        self.negative[party] = self.negative.get(party, 0.0) + float(n_inc)

    def score(self, party, params: ReputationParams) -> float:
        return reputation_score(self.positive.get(party, 0.0),
                                self.negative.get(party, 0.0), params)


def observe(models, delta: float, num_coords: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Count, per party, sampled coordinates inside / outside the robust band."""
    mat = stack(models)
    n, d = mat.shape
    if n < 3:
        raise ValueError("need at least 3 models to form a robust consensus")
    rng = np.random.default_rng(seed)
    m = min(num_coords, d)
    coords = np.sort(rng.choice(d, size=m, replace=False))
    sub = mat[:, coords]
    med = np.median(sub, axis=0)
    mad = np.median(np.abs(sub - med), axis=0)
    accepted = np.abs(sub - med) <= delta * (MAD_SCALE * mad + MAD_EPS)
    p_inc = accepted.sum(axis=1).astype(np.float64)
    return p_inc, m - p_inc


def reputation_score(positive: float, negative: float, params: ReputationParams) -> float:
    if positive < 0 or negative < 0:
        raise ValueError("observation counts must be non-negative")
    num = params.kappa * positive + params.prior_weight * params.base_rate
    den = params.kappa * positive + params.eta * negative + params.prior_weight
    return num / den


def adaptive_update(budget: float, credit: float, rep: float, threshold: float
                    ) -> tuple[float, float]:
    """Top up the budget and credit of a reputable party; zero the credit otherwise."""
    if not all(math.isfinite(v) for v in (budget, credit, rep)):
        raise ValueError("inputs must be finite")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if threshold <= rep:
        return budget + rep, rep + credit
    return budget, 0.0


class ReputationTracker:
    """Carries :class:`ReputationState` across rounds for one experiment."""

    def __init__(self, params: ReputationParams):
        self.params = params
        self.state = ReputationState()

    def update(self, parties, models, seed: int) -> dict:
        """Decay old evidence, book this round's observations, return scores."""
        self.state.decay(self.params.decay)
        if len(parties) >= 3:
            p_inc, n_inc = observe(models, self.params.delta, self.params.num_coords, seed)
        else:
            # too few models for a consensus: no evidence either way
            p_inc = n_inc = np.zeros(len(parties))
        for party, p, q in zip(parties, p_inc, n_inc):
            self.state.record(party, p, q)
        return {p: self.state.score(p, self.params) for p in parties}

    def credit_hook(self, scores: dict):
        """Adaptive-budget hook for :func:`fedqv.voting.fedqv_round`."""
        lam = self.params.threshold

        def hook(ledger: BudgetLedger, parties, credits):
            out = np.empty(len(parties))
            for i, (party, c) in enumerate(zip(parties, credits)):
                b, out[i] = adaptive_update(ledger[party], float(c), scores[party], lam)
                ledger[party] = b
            return out

        return hook

    def gated_weights(self, parties, scores: dict) -> np.ndarray:
        """Reputation-only aggregation weights: R_i if R_i >= lambda, else 0."""
        lam = self.params.threshold
        return np.array([scores[p] if scores[p] >= lam else 0.0 for p in parties])
