"""Crafting of malicious models and similarity scores.

Data-poisoning attacks (label flip, backdoor, scaling, Neurotoxin, Gaussian)
train or forge a poisoned model and report its honest cosine score.
Model-poisoning attacks (Krum/Trim LMP, Min-Max, Min-Sum) report the score
of their clean model and submit a crafted one. QV-Adaptive picks both.

Crafts only ever see the global model and the colluding attackers' own
clean updates; budgets and other parties' updates are out of reach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .baselines import krum_scores
from .numerics import as_vector, stack
from .voting import BudgetLedger, UpdateMessage, VotingConfig, fedqv_round, min_max_normalize

VARIANTS = ("none", "labelflip", "gaussian", "backdoor", "scaling", "neurotoxin",
            "krum_lmp", "trim_lmp", "min_max", "min_sum", "qv_adaptive")
TARGETED = ("backdoor", "scaling", "neurotoxin")
DATA_POISONING = ("labelflip", "gaussian", "backdoor", "scaling", "neurotoxin")
MODEL_POISONING = ("krum_lmp", "trim_lmp", "min_max", "min_sum", "qv_adaptive")
PERTURBATIONS = ("inverse_std", "inverse_unit", "inverse_sign")


@dataclass(frozen=True)
class AttackSpec:
    variant: str = "none"
    fraction: float = 0.0
    gaussian_scale: float = 1.0
    scale_factor: float | None = None  # None -> number of parties
    neurotoxin_k: float = 0.1
    poison_fraction: float = 0.5
    perturbation: str = "inverse_std"
    search_iters: int = 20
    target_label: int = 5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown attack {self.variant!r}; expected one of {VARIANTS}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("attacker fraction must lie in [0, 1]")
        if self.gaussian_scale < 0:
            raise ValueError("gaussian_scale must be >= 0")
        if self.scale_factor is not None and not self.scale_factor > 0:
            raise ValueError("scale_factor must be positive")
        if not 0.0 < self.neurotoxin_k < 1.0:
            raise ValueError("neurotoxin_k must lie in (0, 1)")
        if not 0.0 <= self.poison_fraction <= 1.0:
            raise ValueError("poison_fraction must lie in [0, 1]")
        if self.perturbation not in PERTURBATIONS:
            raise ValueError(f"unknown perturbation {self.perturbation!r}")
        if self.search_iters < 1:
            raise ValueError("search_iters must be >= 1")

    @property
    def targeted(self) -> bool:
        return self.variant in TARGETED


def gaussian_craft(benign, sigma_scale: float, seed: int) -> np.ndarray:
    """Draw every coordinate from N(mean, (sigma_scale * std)^2) of ``benign``'s coordinates."""
    benign = as_vector(benign)
    rng = np.random.default_rng(seed)
    mu, sd = benign.mean(), benign.std()
    return mu + sigma_scale * sd * rng.standard_normal(benign.size)


def scaling_craft(poisoned, factor: float, round_idx: int, total_rounds: int,
                  benign=None, reference=None) -> np.ndarray:
    """Boost the poisoned update by ``factor`` in the last round only.

    Before the last round the benign update is passed through (``poisoned``
    itself when ``benign`` is not given). The boost is applied to the change
    relative to ``reference`` (zero when omitted).
    """
    if not factor > 0:
        raise ValueError("factor must be positive")
    poisoned = as_vector(poisoned)
    if round_idx != total_rounds:
        return as_vector(benign if benign is not None else poisoned).copy()
    ref = np.zeros_like(poisoned) if reference is None else as_vector(reference)
    return ref + factor * (poisoned - ref)


def neurotoxin_mask(benign_grad, k: float) -> np.ndarray:
    """0/1 mask of the coordinates the attacker may touch.

    The top ``floor(k * d)`` coordinates by benign-gradient magnitude are
    frozen; the remaining bottom ``1 - k`` share is the constraint set.
    """
    if not 0.0 < k < 1.0:
        raise ValueError("k must lie in (0, 1)")
    g = np.abs(as_vector(benign_grad))
    n_frozen = int(math.floor(k * g.size))
    mask = np.ones(g.size)
    if n_frozen:
        top = np.argsort(-g, kind="stable")[:n_frozen]
        mask[top] = 0.0
    return mask


def neurotoxin_craft(benign_grad, poisoned_grad: Callable[[np.ndarray], np.ndarray],
                     k: float, pgd_epochs: int, start, step: float) -> np.ndarray:
    """Projected gradient descent on the poisoned objective inside the constraint set.

    ``poisoned_grad(w)`` recomputes the gradient on the triggered data at
    ``w``; every step is zeroed outside :func:`neurotoxin_mask`.
    """
    mask = neurotoxin_mask(benign_grad, k)
    w = np.array(as_vector(start), copy=True)
    for _ in range(pgd_epochs):
        w -= step * mask * as_vector(poisoned_grad(w))
    return w


def _krum_picks_crafted(crafted, benign_mat, num_attackers) -> bool:
    models = np.vstack([np.tile(crafted, (num_attackers, 1)), benign_mat])
    n = models.shape[0]
    f = num_attackers
    k = min(max(1, n - f - 2), n - 1)
    scores = krum_scores(models, f, neighbours=k)
    return int(np.argmin(scores)) < num_attackers


def lmp_krum_craft(global_model, benign_updates, num_attackers: int,
                   search_iters: int = 20, lam_max: float = 10.0) -> np.ndarray:
    """Local-model-poisoning attack against Krum.

    crafted = global - lam * sign(mean benign change), with ``lam`` the largest
    value (halving search from ``lam_max``) for which Krum, run over the
    attackers' copies plus their own clean updates, picks a crafted copy.
    Returns ``global`` when no positive ``lam`` passes.
    """
    g = as_vector(global_model)
    benign = stack(benign_updates)
    if num_attackers < 1:
        raise ValueError("need at least one attacker")
    direction = np.sign(benign.mean(axis=0) - g)
    if not np.any(direction):
        return g.copy()
    lam = krum_lambda(g, benign, direction, num_attackers, search_iters, lam_max)
    return g - lam * direction


def krum_lambda(g, benign, direction, num_attackers, search_iters, lam_max) -> float:
    return search_parameter(
        lambda lam: _krum_picks_crafted(g - lam * direction, benign, num_attackers),
        lam_max, search_iters)


def lmp_trim_craft(global_model, benign_updates, num_attackers: int, seed: int) -> np.ndarray:
    """Local-model-poisoning attack against Trimmed-Mean / Median.

    Per coordinate, with dir the sign of the mean benign change: dir > 0 draws
    from [min - |min|, min], dir < 0 from [max, max + |max|], dir = 0 keeps the
    benign mean. Returns one row per attacker.
    """
    g = as_vector(global_model)
    benign = stack(benign_updates)
    mean = benign.mean(axis=0)
    direction = np.sign(mean - g)
    lo_b, hi_b = benign.min(axis=0), benign.max(axis=0)
    rng = np.random.default_rng(seed)
    u = rng.random((num_attackers, g.size))
    down = lo_b - u * np.abs(lo_b)
    up = hi_b + u * np.abs(hi_b)
    return np.where(direction > 0, down, np.where(direction < 0, up, mean))


def perturbation_vector(benign: np.ndarray, kind: str) -> np.ndarray:
    mean = benign.mean(axis=0)
    if kind == "inverse_std":
        p = -benign.std(axis=0)
    elif kind == "inverse_unit":
        p = -mean
    elif kind == "inverse_sign":
        p = -np.sign(mean)
    else:
        raise ValueError(f"unknown perturbation {kind!r}")
    norm = np.linalg.norm(p)
    return p / norm if norm > 0 else np.zeros_like(p)


def _max_gamma(feasible: Callable[[float], bool], search_iters: int) -> float:
    # feasible set is an interval [0, gamma*] (convex constraint, feasible at 0)
    hi = 1.0
    while feasible(hi):
        hi *= 2.0
        if hi > 1e12:
            return hi
    lo = 0.0
    for _ in range(max(search_iters, 60)):
        mid = 0.5 * (lo + hi)
        if feasible(mid):
            lo = mid
        else:
            hi = mid
    return lo


def _agnostic_craft(benign_updates, perturbation, search_iters, objective, bound):
    benign = stack(benign_updates)
    if benign.shape[0] < 2:
        raise ValueError("need at least two benign updates")
    mean = benign.mean(axis=0)
    p = perturbation_vector(benign, perturbation)
    if not np.any(p):
        return mean
    gamma = _max_gamma(lambda gm: objective(mean + gm * p, benign) <= bound, search_iters)
    return mean + gamma * p


def _sq_dists_to(x, benign):
    return ((benign - x) ** 2).sum(axis=1)


def _pairwise_sq(benign):
    return ((benign[:, None, :] - benign[None, :, :]) ** 2).sum(axis=2)


def min_max_craft(benign_updates, perturbation: str = "inverse_std",
                  search_iters: int = 50) -> np.ndarray:
    """mean + gamma * p with the largest gamma whose farthest benign distance
    stays within the largest benign pairwise distance."""
    benign = stack(benign_updates)
    bound = float(_pairwise_sq(benign).max())
    return _agnostic_craft(benign, perturbation, search_iters,
                           lambda x, b: float(_sq_dists_to(x, b).max()), bound)


def min_sum_craft(benign_updates, perturbation: str = "inverse_std",
                  search_iters: int = 50) -> np.ndarray:
    """mean + gamma * p with the largest gamma whose summed squared distance to
    the benign set stays within the largest benign per-update sum."""
    benign = stack(benign_updates)
    bound = float(_pairwise_sq(benign).sum(axis=1).max())
    return _agnostic_craft(benign, perturbation, search_iters,
                           lambda x, b: float(_sq_dists_to(x, b).sum()), bound)


def choose_reported_score(benign_scores) -> float:
    """The attackers' own score whose min-max normalised value is closest to 0.5."""
    scores = np.asarray(benign_scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("need at least one score")
    s_bar = min_max_normalize(scores)
    return float(scores[int(np.argmin(np.abs(s_bar - 0.5)))])


def qv_adaptive_craft(global_model, benign_updates, benign_scores, voting_cfg: VotingConfig,
                      search_iters: int = 20, nu_max: float = 10.0,
                      dataset_sizes=None) -> tuple[np.ndarray, float]:
    """Adaptive attack on FedQV: pick a safe score, then push every clean model
    against the global change direction as far as a simulated round allows.

    The simulated round uses fresh budgets, the crafted models with the
    reported score, and the attackers' clean models with their true scores
    standing in for honest parties. Returns ``(crafted_rows, reported_score)``.
    """
    g = as_vector(global_model)
    benign = stack(benign_updates)
    scores = np.asarray(benign_scores, dtype=np.float64)
    if scores.shape != (benign.shape[0],):
        raise ValueError("need one score per benign update")
    sizes = [1] * benign.shape[0] if dataset_sizes is None else list(dataset_sizes)
    reported = choose_reported_score(scores)
    direction = np.sign(benign.mean(axis=0) - g)

    def accepted(nu: float) -> bool:
        crafted = benign - nu * direction
        msgs = [UpdateMessage(c, reported, s, party=i) for i, (c, s) in enumerate(zip(crafted, sizes))]
        n = len(msgs)
        msgs += [UpdateMessage(b, sc, s, party=n + i)
                 for i, (b, sc, s) in enumerate(zip(benign, scores, sizes))]
        ledger = BudgetLedger(voting_cfg.initial_budget)
        out = fedqv_round(g, msgs, ledger, voting_cfg)
        return bool(np.all(out.votes[:n] > 0))

    nu = search_parameter(accepted, nu_max, search_iters)
    return benign - nu * direction, reported


def search_parameter(ok: Callable[[float], bool], upper: float, search_iters: int) -> float:
    """Largest value in [0, upper] passing ``ok`` by bisection (0 if none)."""
    if ok(upper):
        return upper
    lo, hi = 0.0, upper
    for _ in range(search_iters):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo
