"""Compare FedAvg and FedQV on a small synthetic federation under attack.

Each run is a 30-party federation on Gaussian blobs. Change ATTACKS or the
attacker fraction to explore other settings; every run is deterministic.
"""

import dataclasses

from fedqv.attacks import AttackSpec
from fedqv.baselines import AggregatorChoice
from fedqv.model import TrainConfig
from fedqv.simulator import ExperimentConfig, run_experiment

BASE = ExperimentConfig(num_parties=30, clients_per_round=10, rounds=30,
                        train=TrainConfig(5, 0.05, 10))
ATTACKS = ["none", "labelflip", "gaussian", "backdoor", "min_max"]

print(f"{'attack':<10} {'aggregator':<10} {'acc':>6} {'asr':>6}")
for attack in ATTACKS:
    fraction = 0.0 if attack == "none" else 0.3
    for agg in ("fedavg", "fedqv"):
        cfg = dataclasses.replace(BASE, aggregator=AggregatorChoice(agg),
                                  attack=AttackSpec(attack, fraction))
        last = run_experiment(cfg)[-1]
        print(f"{attack:<10} {agg:<10} {last.acc:6.3f} {last.asr:6.3f}")
