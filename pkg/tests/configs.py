"""Experiment configurations shared by the simulator and acceptance tests."""

import dataclasses

from fedqv.attacks import AttackSpec
from fedqv.baselines import AggregatorChoice
from fedqv.model import TrainConfig
from fedqv.simulator import DatasetSpec, ExperimentConfig

# desk-scale task: 10 blob classes in 20 dimensions, MLP [20, 32, 10]
DESK = ExperimentConfig(
    num_parties=30,
    clients_per_round=10,
    rounds=40,
    train=TrainConfig(local_epochs=5, learning_rate=0.05, batch_size=10),
    dataset=DatasetSpec(num_classes=10, dim=20, samples_per_class=300, spread=0.5),
    hidden=(32,),
)


def desk(aggregator="fedqv", attack="none", fraction=0.0, seed=0, **changes):
    """DESK with an aggregator, an attack and any top-level or section overrides.

    Section overrides are passed as dicts, e.g. ``voting={"theta": 0.2}``.
    """
    cfg = dataclasses.replace(DESK, seed=seed,
                              aggregator=AggregatorChoice(aggregator),
                              attack=AttackSpec(attack, fraction))
    changes = {k: dataclasses.replace(getattr(cfg, k), **v) if isinstance(v, dict) else v
               for k, v in changes.items()}
    return dataclasses.replace(cfg, **changes)

