"""Trace how budgets and votes evolve over rounds of a FedQV run.

With the default budget of 25 a party usually spends everything the first
time its score lands inside the band. Raising the budget keeps voting alive
longer; this script prints how many parties still cast a positive vote.
"""

import dataclasses

from fedqv.model import TrainConfig
from fedqv.simulator import ExperimentConfig, run_experiment
from fedqv.voting import VotingConfig

BASE = ExperimentConfig(num_parties=30, clients_per_round=10, rounds=20,
                        train=TrainConfig(5, 0.05, 10), trace_votes=True)

for budget in (25.0, 1e6):
    cfg = dataclasses.replace(BASE, voting=VotingConfig(initial_budget=budget))
    print(f"initial budget {budget:g}")
    for rec in run_experiment(cfg):
        voters = sum(1 for _, v, *_ in rec.votes if v > 0)
        print(f"  round {rec.round:>2}  positive votes {voters:>2}/10  acc {rec.acc:.3f}")
