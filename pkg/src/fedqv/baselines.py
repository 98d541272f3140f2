"""FedAvg, Multi-Krum, Trimmed-Mean and their FedQV compositions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import stack
from .voting import (BudgetLedger, RoundOutcome, VotingConfig,
                     aggregate_weighted, fedqv_round)

VARIANTS = ("fedavg", "fedqv", "fedqv_rep", "multikrum", "trimmed_mean",
            "multikrum_fedqv", "trimmed_mean_fedqv", "rep", "rep_fedqv")


@dataclass(frozen=True)
class AggregatorChoice:
    """Aggregation rule plus its knobs.

    ``f`` is the attacker count Multi-Krum assumes, ``m_select`` how many
    models it keeps, ``beta`` the per-side trim count. ``None`` means "derive
    from the expected attacker count" (see :meth:`krum_params`, :meth:`trim_beta`).
    """

    variant: str = "fedqv"
    f: int | None = None
    m_select: int | None = None
    beta: int | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown aggregator {self.variant!r}; expected one of {VARIANTS}")
        for name in ("f", "m_select", "beta"):
            val = getattr(self, name)
            if val is not None and val < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def uses_fedqv(self) -> bool:
        return "fedqv" in self.variant

    @property
    def uses_reputation(self) -> bool:
        return self.variant in ("fedqv_rep", "rep", "rep_fedqv")

    def krum_params(self, n: int, expected_attackers: int) -> tuple[int, int]:
        f = self.f if self.f is not None else expected_attackers
        f = max(0, min(f, n - 3))
        m = self.m_select if self.m_select is not None else n - f
        return f, max(1, min(m, n - f))

    def trim_beta(self, n: int, expected_attackers: int) -> int:
        beta = self.beta if self.beta is not None else expected_attackers
        return max(0, min(beta, (n - 1) // 2))


def fedavg_weights(dataset_sizes) -> np.ndarray:
    sizes = np.asarray(dataset_sizes, dtype=np.float64)
    if sizes.size == 0 or np.any(sizes <= 0):
        raise ValueError("need at least one positive dataset size")
    return sizes / sizes.sum()


def fedavg(models, dataset_sizes) -> np.ndarray:
    return aggregate_weighted(models, fedavg_weights(dataset_sizes))


def krum_scores(models, f: int, neighbours: int | None = None) -> np.ndarray:
    """Sum of squared distances from each model to its ``n - f - 2`` nearest peers."""
    mat = stack(models)
    n = mat.shape[0]
    k = n - f - 2 if neighbours is None else neighbours
    if not 1 <= k <= n - 1:
        raise ValueError(f"Krum needs 1 <= n - f - 2 <= n - 1 (n={n}, f={f})")
    # exact differences rather than the Gram trick so ties stay ties
    d = ((mat[:, None, :] - mat[None, :, :]) ** 2).sum(axis=2)
    d_sorted = np.sort(d, axis=1)[:, 1:k + 1]  # column 0 is the self-distance
    return d_sorted.sum(axis=1)


def multi_krum(models, f: int, m_select: int) -> list[int]:
    """Indices of the ``m_select`` lowest Krum scores (ties -> lowest index)."""
    n = len(models)
    if n < f + 3:
        raise ValueError(f"Multi-Krum needs n >= f + 3 (n={n}, f={f})")
    if not 1 <= m_select <= n - f:
        raise ValueError(f"m_select must lie in [1, n - f] = [1, {n - f}]")
    scores = krum_scores(models, f)
    order = np.argsort(scores, kind="stable")
    return sorted(int(i) for i in order[:m_select])


def trimmed_mean(models, beta: int) -> np.ndarray:
    """Coordinate-wise mean after dropping the ``beta`` largest and smallest values."""
    mat = stack(models)
    n = mat.shape[0]
    if beta < 0 or 2 * beta >= n:
        raise ValueError(f"trimmed mean needs 0 <= 2*beta < n (n={n}, beta={beta})")
    srt = np.sort(mat, axis=0)
    return srt[beta:n - beta].mean(axis=0)


def multikrum_fedqv_round(prev_global, msgs, ledger: BudgetLedger, cfg: VotingConfig,
                          f: int, m_select: int, credit_hook=None) -> RoundOutcome:
    """Multi-Krum picks the candidates, FedQV weighs them.

    Excluded parties get vote 0 and keep their budget untouched this round.
    """
    chosen = multi_krum([m.model for m in msgs], f, m_select)
    inner = fedqv_round(prev_global, [msgs[i] for i in chosen], ledger, cfg, credit_hook)
    return _scatter(msgs, chosen, inner, ledger)


def _scatter(msgs, chosen, inner: RoundOutcome, ledger) -> RoundOutcome:
    n = len(msgs)
    out = {name: np.zeros(n) for name in ("normalized", "credits", "votes", "deducted")}
    out["normalized"][:] = np.nan
    for j, i in enumerate(chosen):
        for name in out:
            out[name][i] = getattr(inner, name)[j]
    parties = [m.party for m in msgs]
    return RoundOutcome(parties, out["normalized"], out["credits"], out["votes"],
                        np.array([ledger[p] for p in parties]), inner.aggregated,
                        out["deducted"])


def trimmed_mean_fedqv_round(prev_global, msgs, ledger: BudgetLedger, cfg: VotingConfig,
                             beta: int, credit_hook=None) -> RoundOutcome:
    """FedQV weights first, then a coordinate-wise trimmed mean of weight-scaled models.

    Only parties with a positive vote are candidates; each candidate model is
    scaled by ``n_voters * weight`` so that ``beta = 0`` reproduces the plain
    FedQV aggregate. ``beta`` shrinks to fit the number of voters.
    """
    outcome = fedqv_round(prev_global, msgs, ledger, cfg, credit_hook)
    voters = np.flatnonzero(outcome.votes > 0)
    if voters.size == 0:
        return outcome
    w = outcome.votes[voters] / outcome.votes[voters].sum()
    scaled = stack([msgs[i].model for i in voters]) * (voters.size * w)[:, None]
    outcome.aggregated = trimmed_mean(scaled, min(beta, (voters.size - 1) // 2))
    return outcome


def select_then_mean(models, f: int, m_select: int) -> np.ndarray:
    """Plain Multi-Krum aggregate: unweighted mean of the selected models."""
    chosen = multi_krum(models, f, m_select)
    return stack([models[i] for i in chosen]).mean(axis=0)

