"""Acceptance criteria 1-12, each checked at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (also collected into
the pytest terminal summary) before asserting. Run this file directly with
``python tests/test_acceptance.py`` to get just the verdict lines.
"""

import csv
import time

import numpy as np
import pytest
from scipy.optimize import minimize

from fedqv.baselines import multi_krum
from fedqv.cli import SweepSpec, run_config, sweep
from fedqv.dataset import LabeledDataset, default_trigger, inject_trigger
from fedqv.model import ModelSpec, TrainConfig, init_params, local_train, loss_and_grad
from fedqv.numerics import cosine_similarity
from fedqv.simulator import derive_seed, run_experiment, run_round, setup
from fedqv.voting import BudgetLedger, UpdateMessage, VotingConfig, fedqv_round, masked_credit

from acceptance_log import report
from configs import desk
from oracles import fedqv_straight_line, gradient_error, krum_brute_force, random_round

pytestmark = pytest.mark.acceptance

SEEDS = (0, 1, 2)


def final_metrics(aggregator, attack="none", fraction=0.0, seeds=SEEDS, **changes):
    """(acc, asr) of the last round, one row per seed."""
    rows = []
    for s in seeds:
        last = run_experiment(desk(aggregator, attack, fraction, seed=s, **changes), workers=1)[-1]
        rows.append((last.acc, last.asr))
    return np.array(rows)


def pct(x):
    return f"{100 * x:.1f}%"


def test_criterion_01_no_attack_parity():
    t0 = time.perf_counter()
    avg = final_metrics("fedavg")[:, 0]
    qv = final_metrics("fedqv")[:, 0]
    elapsed = time.perf_counter() - t0
    gap = abs(qv.mean() - avg.mean())
    ok = gap <= 0.03 and elapsed <= 180
    assert report(1, ok, f"ACC FedQV {pct(qv.mean())} vs FedAvg {pct(avg.mean())}, "
                         f"|gap| {100 * gap:.2f} pts (<= 3), {elapsed:.0f}s (<= 180s)")


def _loss_gaps(seed, budget):
    cfg = desk("fedqv", seed=seed, hidden=(), activation="identity",
               train={"learning_rate": 0.01}, voting={"initial_budget": budget})
    state = setup(cfg)
    data = (state.trainset.features, state.trainset.labels)
    best = minimize(lambda w: loss_and_grad(state.spec, w, data), np.zeros(state.spec.dim),
                    jac=True, method="L-BFGS-B",
                    options={"maxiter": 5000, "gtol": 1e-10, "ftol": 1e-15}).fun
    losses = [run_round(state, cfg, workers=1)[1].train_loss for _ in range(40)]
    return losses[19] - best, losses[39] - best


def test_criterion_02_one_over_t_rate():
    gaps = np.array([_loss_gaps(s, VotingConfig().initial_budget) for s in range(5)])
    ratio = gaps[:, 1].mean() / gaps[:, 0].mean()
    # diagnostic only: the same run with a budget that never binds
    free = np.array([_loss_gaps(s, 1e6) for s in range(5)])
    free_ratio = free[:, 1].mean() / free[:, 0].mean()
    ok = ratio <= 0.75
    assert report(2, ok, f"gap(40)/gap(20) = {ratio:.3f} (<= 0.75) at B=25; "
                         f"diagnostic with non-binding budget: {free_ratio:.3f}")


def test_criterion_03_lmp_robustness():
    parts, ok = [], True
    for attack in ("trim_lmp", "krum_lmp", "min_max"):
        avg = final_metrics("fedavg", attack, 0.3)[:, 0].mean()
        qv = final_metrics("fedqv", attack, 0.3)[:, 0].mean()
        good = qv - avg >= 0.30 and avg <= 0.30
        ok &= good
        parts.append(f"{attack}: FedQV {pct(qv)} FedAvg {pct(avg)} [{'ok' if good else 'x'}]")
    assert report(3, ok, "; ".join(parts) + " (need FedQV - FedAvg >= 30 pts, FedAvg <= 30%)")


def test_criterion_04_backdoor_suppression():
    avg = final_metrics("fedavg", "backdoor", 0.3)[:, 1].mean()
    qv = final_metrics("fedqv", "backdoor", 0.3)[:, 1].mean()
    ok = qv <= 0.15 and avg >= 0.40
    assert report(4, ok, f"ASR FedQV {pct(qv)} (<= 15%), FedAvg {pct(avg)} (>= 40%)")


def toy_votes(rounds=20, seed=0):
    """Three parties holding 1, 1 and 2 samples; party 3's samples carry the trigger."""
    cfg = desk()
    state = setup(cfg)
    train = state.trainset
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(train), size=4, replace=False)
    trig = default_trigger(train)
    local = [train.subset(picks[:1]), train.subset(picks[1:2]),
             inject_trigger(train.subset(picks[2:]), trig, 1.0, seed)]
    spec: ModelSpec = state.spec
    g = init_params(spec, seed)
    ledger = BudgetLedger(cfg.voting.initial_budget)
    history = []
    for t in range(1, rounds + 1):
        msgs = []
        for p, data in enumerate(local):
            tc = TrainConfig(cfg.train.local_epochs, cfg.train.learning_rate,
                             cfg.train.batch_size, derive_seed(seed, "toy", p, t))
            w = local_train(spec, g, data, tc)
            msgs.append(UpdateMessage(w, cosine_similarity(w, g), len(data), party=p))
        out = fedqv_round(g, msgs, ledger, cfg.voting)
        g = out.aggregated
        history.append(out.votes.copy())
    return np.array(history)


def test_criterion_05_toy_reproduction():
    votes = toy_votes()
    start = next((r for r in range(10) if np.all(votes[r:, 2] == 0)
                  and np.all(votes[r:, :2] > 0)), None)
    ok = start is not None
    trace = " ".join("{" + ",".join(f"{v:.2f}" for v in row) + "}" for row in votes[:6])
    assert report(5, ok, f"settled from round {start + 1}" if ok else
                  f"no round <= 10 after which votes stay (+,+,0); first rounds: {trace} ...")


def test_criterion_06_adaptive_budget():
    qv = final_metrics("fedqv", "gaussian", 0.5)[:, 0].mean()
    rep = final_metrics("fedqv_rep", "gaussian", 0.5)[:, 0].mean()
    ok = rep >= qv + 0.10
    assert report(6, ok, f"ACC FedQV+Rep {pct(rep)} vs FedQV {pct(qv)} (need +10 pts)")


def test_criterion_07_composition():
    parts, ok = [], True
    for base in ("multikrum", "trimmed_mean"):
        plain = final_metrics(base, "min_max", 0.3)[:, 0]
        composed = final_metrics(f"{base}_fedqv", "min_max", 0.3)[:, 0]
        wins = int(np.sum(composed > plain))
        good = composed.mean() >= plain.mean() - 0.01 and wins >= 2
        ok &= good
        parts.append(f"{base}: +FedQV {pct(composed.mean())} vs {pct(plain.mean())}, "
                     f"wins {wins}/3 [{'ok' if good else 'x'}]")
    assert report(7, ok, "; ".join(parts))


def _monotone_failures(prev, msgs, budgets, cfg, rng):
    """Property (d): move an interior party's raw score toward the band centre."""
    sims = np.array([m.similarity for m in msgs])
    lo, hi = sims.min(), sims.max()
    base = fedqv_round(prev, msgs, BudgetLedger(cfg.initial_budget, dict(budgets)), cfg)
    fails = 0
    for i, m in enumerate(msgs):
        if not (lo < m.similarity < hi and base.votes[i] > 0):
            continue
        centre = 0.5 * (lo + hi)
        moved = [UpdateMessage(x.model, x.similarity, x.dataset_size, x.party) for x in msgs]
        moved[i].similarity = m.similarity + rng.uniform(0, 1) * (centre - m.similarity)
        out = fedqv_round(prev, moved, BudgetLedger(cfg.initial_budget, dict(budgets)), cfg)
        fails += int(out.votes[i] <= 0)
    return fails


def test_criterion_08_mechanism_properties():
    rng = np.random.default_rng(8)
    counts = dict(negative=0, payment=0, credit=0, monotone=0)
    for seed in range(1000):
        prev, msgs, budgets, cfg = random_round(10_000 + seed)
        led = BudgetLedger(cfg.initial_budget, dict(budgets))
        out = fedqv_round(prev, msgs, led, cfg)
        counts["negative"] += int(np.any(out.budgets_after < 0))
        scale = np.maximum(1.0, np.array([budgets[p] for p in out.parties]))
        counts["payment"] += int(np.any(np.abs(out.deducted - out.votes ** 2) > 1e-12 * scale))
        grid = np.linspace(0, 1, 1001)
        c = np.array([masked_credit(s, cfg.theta) for s in grid])
        band = (grid > cfg.theta) & (grid < 1 - cfg.theta)
        counts["credit"] += int(np.any(c[~band] != 0) or np.any(np.diff(c[band]) >= 0))
        counts["monotone"] += _monotone_failures(prev, msgs, budgets, cfg, rng)
    ok = sum(counts.values()) == 0
    assert report(8, ok, "failures over 1000 rounds: " +
                  ", ".join(f"{k} {v}" for k, v in counts.items()))


def test_criterion_09_oracle_equivalence():
    worst = 0.0
    for seed in range(100):
        prev, msgs, budgets, cfg = random_round(20_000 + seed)
        out = fedqv_round(prev, msgs, BudgetLedger(cfg.initial_budget, dict(budgets)), cfg)
        agg = fedqv_straight_line(prev.tolist(), [m.model.tolist() for m in msgs],
                                  [m.similarity for m in msgs], [m.dataset_size for m in msgs],
                                  [budgets[m.party] for m in msgs], cfg.theta)[4]
        worst = max(worst, float(np.max(np.abs(out.aggregated - np.array(agg)))))
    mismatches = 0
    for seed in range(500):
        rng = np.random.default_rng(30_000 + seed)
        n = int(rng.integers(3, 9))
        f = int(rng.integers(0, n - 2))
        m = int(rng.integers(1, n - f + 1))
        models = (rng.integers(-2, 3, size=(n, int(rng.integers(1, 4)))).astype(float)
                  if seed % 2 else rng.standard_normal((n, int(rng.integers(1, 4)))))
        mismatches += int(multi_krum(models, f, m) != krum_brute_force(models.tolist(), f, m))
    ok = worst <= 1e-10 and mismatches == 0
    assert report(9, ok, f"FedQV max |diff| {worst:.2e} (<= 1e-10); "
                         f"Multi-Krum mismatches {mismatches}/500")


def test_criterion_10_gradients():
    worst = max(gradient_error(50_000 + s) for s in range(100))
    ok = worst <= 1e-4
    assert report(10, ok, f"max relative error {worst:.2e} over 100 instances (<= 1e-4)")


def test_criterion_11_determinism(tmp_path):
    cfg = desk("fedqv", "backdoor", 0.3, rounds=10, trace_votes=True)
    run_config(cfg, tmp_path / "w1", workers=1)
    run_config(cfg, tmp_path / "w8", workers=8)
    same = all((tmp_path / "w1" / f).read_bytes() == (tmp_path / "w8" / f).read_bytes()
               for f in ("metrics.csv", "votes.csv", "summary.json"))
    assert report(11, same, "metrics.csv 1 worker vs 8 workers: "
                            + ("byte-identical" if same else "DIFFERENT"))


BACKDOOR_CONFIG = """\
num_parties = 30
clients_per_round = 10
rounds = 40
train.learning_rate = 0.05
dataset.samples_per_class = 300
attack = backdoor
attack.fraction = 0.3
aggregator = fedqv
"""


def test_criterion_12_sweep(tmp_path):
    path = tmp_path / "backdoor.cfg"
    path.write_text(BACKDOOR_CONFIG)
    repeats = 1
    t0 = time.perf_counter()
    grid = sweep(path, [SweepSpec("theta", (0.1, 0.2, 0.3, 0.4, 0.5), repeats),
                        SweepSpec("budget", (10.0, 20.0, 30.0, 40.0, 50.0), repeats)],
                 tmp_path / "sweep")
    elapsed = time.perf_counter() - t0
    with open(grid, newline="") as fh:
        rows = list(csv.DictReader(fh))
    complete = len(rows) == 25 * repeats and all(r["final_acc"] != "nan" for r in rows)
    ok = complete and elapsed <= 1800
    assert report(12, ok, f"{len(rows)} grid rows (need {25 * repeats}), {elapsed:.0f}s (<= 1800s)")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
