"""
Training at desk scale and measuring the gap
============================================

Train on small CVRP instances for a few epochs, then compare the greedy
multi-start decode with exact optima. Raise ``EPOCHS`` to 20 for the
setting used by the acceptance suite.
"""

import sys

from mtvrp import TrainConfig, evaluate, fit, generate_batch, random_rollout_objectives

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 3

cfg = TrainConfig(
    n_customers=10,
    batch_size=64,
    epochs=EPOCHS,
    instances_per_epoch=2000,
    variants=("CVRP",),
    milestones=(),
    seed=1234,
)
result = fit(cfg, progress=lambda row: print(f"epoch {row['epoch']:>2}  val {row['val_obj']:.4f}"))

# Exact optima are cheap at ten customers.
held_out = generate_batch("CVRP", 10, 50, seed=987654)
report = evaluate(result.policy, held_out, reference="oracle")
print(report.summary())

# A uniform-random feasible policy under the same best-of-N protocol.
print("random best-of-N mean:", random_rollout_objectives(held_out).mean())
