"""Walk through a single quadratic-voting round by hand.

Five parties send models together with the cosine similarity between their
model and the current global model. The server min-max normalises those
scores, gives credits only to parties inside the band (theta, 1 - theta),
turns credits into votes capped by each party's budget and charges v^2.
"""

import numpy as np

from fedqv.voting import BudgetLedger, UpdateMessage, VotingConfig, fedqv_round

rng = np.random.default_rng(0)
global_model = np.zeros(4)
scores = [0.91, 0.55, 0.62, 0.70, 0.10]  # party 4 looks nothing like the others
sizes = [3, 1, 2, 2, 4]
msgs = [UpdateMessage(rng.standard_normal(4), s, n, party=i)
        for i, (s, n) in enumerate(zip(scores, sizes))]

cfg = VotingConfig(initial_budget=25.0, theta=0.1)
ledger = BudgetLedger(cfg.initial_budget)

for t in (1, 2, 3):
    out = fedqv_round(global_model, msgs, ledger, cfg)
    print(f"round {t}")
    print("  party  score  normalised  credit  vote   budget left")
    for i in range(len(msgs)):
        print(f"  {i:>5}  {scores[i]:.2f}   {out.normalized[i]:.3f}      "
              f"{out.credits[i]:.3f}  {out.votes[i]:.3f}  {out.budgets_after[i]:.3f}")
    print("  aggregation weights:", np.round(out.weights, 3))
    global_model = out.aggregated

# The lowest and highest scores always normalise to 0 and 1, so those two
# parties are penalised every round: a score of 1 costs one unit of budget,
# a score of 0 wipes the budget out. With datasets this small |D| * credit
# stays under the budget and the in-band parties keep voting. In the
# simulator each party holds hundreds of samples, so |D| * credit exceeds 25
# and a party spends its whole budget on its first accepted vote.
