"""Round orchestration: selection, local training, attacks, aggregation, metrics."""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import attacks as atk
from .baselines import (AggregatorChoice, fedavg_weights, select_then_mean,
                        multikrum_fedqv_round, trimmed_mean, trimmed_mean_fedqv_round)
from .dataset import (LabeledDataset, TriggerPattern, apply_trigger, default_trigger,
                      dirichlet_partition, flip_labels, inject_trigger, load_idx,
                      synth_blobs, train_test_split)
from .model import (DivergenceError, ModelSpec, TrainConfig, evaluate, init_params,
                    local_train, mean_loss, predict)
from .numerics import cosine_similarity, stack
from .reputation import ReputationParams, ReputationTracker
from .voting import BudgetLedger, UpdateMessage, VotingConfig, aggregate_weighted, fedqv_round

THREADS_ENV = "FEDQV_THREADS"


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "blobs"
    num_classes: int = 10
    dim: int = 20
    samples_per_class: int = 300
    spread: float = 0.5
    images_path: str | None = None
    labels_path: str | None = None
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.kind not in ("blobs", "idx"):
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    num_parties: int = 100
    clients_per_round: int = 10
    rounds: int = 100
    train: TrainConfig = TrainConfig()
    dataset: DatasetSpec = DatasetSpec()
    hidden: tuple = (32,)
    activation: str = "relu"
    dirichlet_iota: float = 0.9
    aggregator: AggregatorChoice = AggregatorChoice()
    voting: VotingConfig = VotingConfig()
    reputation: ReputationParams = ReputationParams()
    attack: atk.AttackSpec = atk.AttackSpec()
    seed: int = 0
    trace_votes: bool = False

    def __post_init__(self):
        if self.num_parties < 1:
            raise ValueError("num_parties must be >= 1")
        if not 1 <= self.clients_per_round <= self.num_parties:
            raise ValueError("clients_per_round must lie in [1, num_parties]")
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if not self.dirichlet_iota > 0:
            raise ValueError("dirichlet_iota must be positive")

    @property
    def num_malicious(self) -> int:
        return int(np.floor(self.attack.fraction * self.num_parties + 1e-9))


@dataclass(frozen=True)
class MetricsRecord:
    round: int
    acc: float
    asr: float
    train_loss: float
    votes: tuple | None = None  # rows of (party, vote, credit, normalized score, budget after)


def derive_seed(*parts) -> int:
    """Stable 63-bit seed from ints and strings, independent of call order."""
    ints = [zlib.crc32(p.encode()) if isinstance(p, str) else int(p) for p in parts]
    return int(np.random.SeedSequence(ints).generate_state(2, np.uint64)[0] >> np.uint64(1))


def select_parties(num_parties: int, clients_per_round: int, round_idx: int, seed: int) -> list[int]:
    if not 1 <= clients_per_round <= num_parties:
        raise ValueError("need 1 <= C <= N")
    rng = np.random.default_rng(derive_seed(seed, "select", round_idx))
    return sorted(int(i) for i in rng.choice(num_parties, size=clients_per_round, replace=False))


def compute_asr(spec: ModelSpec, params, testset: LabeledDataset, trig: TriggerPattern) -> float:
    """Share of triggered non-target test samples classified as the target label."""
    keep = testset.labels != trig.target_label
    if not np.any(keep):
        return 0.0
    x = apply_trigger(testset.features[keep], trig)
    return float(np.mean(predict(spec, params, x) == trig.target_label))


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get(THREADS_ENV, "0") or 0)
    if workers <= 0:
        workers = os.cpu_count() or 1
    return workers


def build_dataset(ds: DatasetSpec, seed: int) -> LabeledDataset:
    if ds.kind == "idx":
        if not ds.images_path or not ds.labels_path:
            raise ValueError("idx datasets need images_path and labels_path")
        return load_idx(ds.images_path, ds.labels_path, ds.num_classes)
    return synth_blobs(ds.num_classes, ds.dim, ds.samples_per_class, ds.spread,
                       derive_seed(seed, "data"))


@dataclass
class SimulationState:
    """Everything that persists between rounds of one experiment."""

    spec: ModelSpec
    parties: list
    trainset: LabeledDataset
    testset: LabeledDataset
    malicious: frozenset
    trigger: TriggerPattern | None
    global_model: np.ndarray
    previous_global: np.ndarray
    ledger: BudgetLedger
    reputation: ReputationTracker
    round: int = 0
    history: list = field(default_factory=list)


def setup(cfg: ExperimentConfig) -> SimulationState:
    full = build_dataset(cfg.dataset, cfg.seed)
    train, test = train_test_split(full, cfg.dataset.test_fraction, derive_seed(cfg.seed, "split"))
    plan = dirichlet_partition(train, cfg.num_parties, cfg.dirichlet_iota,
                               derive_seed(cfg.seed, "partition"))
    parties = [train.subset(a) for a in plan.assignments]
    perm = np.random.default_rng(derive_seed(cfg.seed, "malicious")).permutation(cfg.num_parties)
    malicious = frozenset(int(i) for i in perm[:cfg.num_malicious])
    spec = ModelSpec((train.dim, *cfg.hidden, train.num_classes), cfg.activation)
    trigger = None
    if cfg.attack.targeted:
        trigger = default_trigger(train, cfg.attack.target_label)
    w0 = init_params(spec, derive_seed(cfg.seed, "init"))
    return SimulationState(spec, parties, train, test, malicious, trigger, w0, w0.copy(),
                           BudgetLedger(cfg.voting.initial_budget),
                           ReputationTracker(cfg.reputation))


def _train_cfg(cfg: ExperimentConfig, party: int, round_idx: int, tag: str = "train") -> TrainConfig:
    t = cfg.train
    return TrainConfig(t.local_epochs, t.learning_rate, t.batch_size,
                       derive_seed(cfg.seed, tag, party, round_idx))


def _party_update(state: SimulationState, cfg: ExperimentConfig, party: int, t: int):
    """Local work of one party: ``(submitted model, clean model or None)``."""
    g = state.global_model
    data = state.parties[party]
    attack = cfg.attack
    honest = party not in state.malicious or attack.variant == "none"
    if honest or attack.variant in atk.MODEL_POISONING:
        clean = local_train(state.spec, g, data, _train_cfg(cfg, party, t))
        return clean, clean
    v = attack.variant
    if v == "labelflip":
        return local_train(state.spec, g, flip_labels(data), _train_cfg(cfg, party, t)), None
    if v == "gaussian":
        clean = local_train(state.spec, g, data, _train_cfg(cfg, party, t))
        return atk.gaussian_craft(clean, attack.gaussian_scale,
                                  derive_seed(cfg.seed, "gauss", party, t)), clean
    poisoned_data = inject_trigger(data, state.trigger, attack.poison_fraction,
                                   derive_seed(cfg.seed, "trigger", party, t))
    if v == "backdoor":
        return local_train(state.spec, g, poisoned_data, _train_cfg(cfg, party, t)), None
    if v == "scaling":
        if t != cfg.rounds:
            clean = local_train(state.spec, g, data, _train_cfg(cfg, party, t))
            return clean, clean
        poisoned = local_train(state.spec, g, poisoned_data, _train_cfg(cfg, party, t))
        factor = attack.scale_factor if attack.scale_factor is not None else cfg.num_parties
        return atk.scaling_craft(poisoned, factor, t, cfg.rounds, reference=g), None
    if v == "neurotoxin":
        mask = atk.neurotoxin_mask(g - state.previous_global, attack.neurotoxin_k)
        return local_train(state.spec, g, poisoned_data, _train_cfg(cfg, party, t),
                           grad_mask=mask), None
    raise ValueError(f"unhandled attack {v!r}")


def _craft_model_poisoning(state, cfg, selected_attackers, pool):
    """Replace the selected attackers' models (and scores for QV-Adaptive)."""
    g = state.global_model
    attack = cfg.attack
    pool_ids = sorted(pool)
    pool_models = stack([pool[p] for p in pool_ids])
    n_att = len(selected_attackers)
    v = attack.variant
    t = state.round
    if v == "krum_lmp":
        crafted = atk.lmp_krum_craft(g, pool_models, n_att, attack.search_iters)
        return {p: (crafted, None) for p in selected_attackers}
    if v == "trim_lmp":
        rows = atk.lmp_trim_craft(g, pool_models, n_att, derive_seed(cfg.seed, "trim", t))
        return {p: (rows[i], None) for i, p in enumerate(selected_attackers)}
    if v in ("min_max", "min_sum"):
        if pool_models.shape[0] < 2:
            return {p: (pool[p], None) for p in selected_attackers}
        craft = atk.min_max_craft if v == "min_max" else atk.min_sum_craft
        crafted = g + craft(pool_models - g, attack.perturbation)
        return {p: (crafted, None) for p in selected_attackers}
    if v == "qv_adaptive":
        scores = [cosine_similarity(pool[p], g) for p in pool_ids]
        sizes = [len(state.parties[p]) for p in pool_ids]
        rows, reported = atk.qv_adaptive_craft(g, pool_models, scores, cfg.voting,
                                               attack.search_iters, dataset_sizes=sizes)
        return {p: (rows[pool_ids.index(p)], reported) for p in selected_attackers}
    raise ValueError(f"unhandled attack {v!r}")


def _aggregate(state, cfg, msgs, t):
    choice: AggregatorChoice = cfg.aggregator
    g = state.global_model
    models = [m.model for m in msgs]
    n = len(msgs)
    expected = int(round(cfg.attack.fraction * cfg.clients_per_round))
    variant = choice.variant
    scores = None
    if choice.uses_reputation:
        scores = state.reputation.update([m.party for m in msgs], models,
                                         derive_seed(cfg.seed, "observe", t))
    if variant == "fedavg":
        return aggregate_weighted(models, fedavg_weights([m.dataset_size for m in msgs])), None
    if variant == "rep":
        w = state.reputation.gated_weights([m.party for m in msgs], scores)
        return aggregate_weighted(models, w, fallback=g), None
    if variant == "multikrum":
        if n < 3:
            return stack(models).mean(axis=0), None
        f, m_sel = choice.krum_params(n, expected)
        return select_then_mean(models, f, m_sel), None
    if variant == "trimmed_mean":
        return trimmed_mean(models, choice.trim_beta(n, expected)), None
    hook = state.reputation.credit_hook(scores) if scores is not None else None
    if variant == "multikrum_fedqv" and n >= 3:
        f, m_sel = choice.krum_params(n, expected)
        out = multikrum_fedqv_round(g, msgs, state.ledger, cfg.voting, f, m_sel, hook)
    elif variant == "trimmed_mean_fedqv":
        out = trimmed_mean_fedqv_round(g, msgs, state.ledger, cfg.voting,
                                       choice.trim_beta(n, expected), hook)
    else:  # fedqv, fedqv_rep, rep_fedqv, multikrum_fedqv with n < 3
        out = fedqv_round(g, msgs, state.ledger, cfg.voting, hook)
    trace = tuple((p, float(v), float(c), float(s), float(b)) for p, v, c, s, b in
                  zip(out.parties, out.votes, out.credits, out.normalized, out.budgets_after))
    return out.aggregated, trace


def run_round(state: SimulationState, cfg: ExperimentConfig, workers: int | None = None
              ) -> tuple[SimulationState, MetricsRecord]:
    """Advance ``state`` by one communication round (in place) and return its metrics."""
    t = state.round + 1
    state.round = t
    selected = select_parties(cfg.num_parties, cfg.clients_per_round, t, cfg.seed)
    attack = cfg.attack
    attacking = attack.variant != "none" and bool(state.malicious)
    selected_attackers = [p for p in selected if attacking and p in state.malicious]

    jobs = list(selected)
    pool_ids = []
    if selected_attackers and attack.variant in atk.MODEL_POISONING:
        # colluding attackers all train honestly to estimate the benign population
        pool_ids = sorted(state.malicious)
        jobs = sorted(set(jobs) | set(pool_ids))

    def work(p):
        return _party_update(state, cfg, p, t)

    try:
        n_workers = resolve_workers(workers)
        if n_workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=min(n_workers, len(jobs))) as ex:
                results = dict(zip(jobs, ex.map(work, jobs)))
        else:
            results = {p: work(p) for p in jobs}
    except DivergenceError as exc:
        raise DivergenceError(f"round {t}: {exc}") from exc

    g = state.global_model
    crafted = {}
    if pool_ids:
        crafted = _craft_model_poisoning(state, cfg, selected_attackers,
                                         {p: results[p][1] for p in pool_ids})
    msgs = []
    for p in selected:
        submitted, clean = results[p]
        if p in crafted:
            # only QV-Adaptive forges its score; the others report the true one
            model, reported = crafted[p]
            score = reported if reported is not None else cosine_similarity(model, g)
        else:
            model, score = submitted, cosine_similarity(submitted, g)
        msgs.append(UpdateMessage(model, score, len(state.parties[p]), party=p))

    new_global, trace = _aggregate(state, cfg, msgs, t)
    state.previous_global = g
    state.global_model = new_global
    record = MetricsRecord(
        round=t,
        acc=evaluate(state.spec, new_global, state.testset),
        asr=(compute_asr(state.spec, new_global, state.testset, state.trigger)
             if attacking and attack.targeted else 0.0),
        train_loss=_safe_loss(state, new_global),
        votes=trace if cfg.trace_votes else None,
    )
    state.history.append(record)
    return state, record


def _safe_loss(state, params) -> float:
    try:
        return mean_loss(state.spec, params, state.trainset)
    except DivergenceError:
        return float("inf")


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> list[MetricsRecord]:
    state = setup(cfg)
    for _ in range(cfg.rounds):
        run_round(state, cfg, workers)
    return list(state.history)
