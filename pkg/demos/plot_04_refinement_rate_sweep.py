"""
Refinement rate at test time
============================

Sweep the test-time re-embedding probability and record gap and decode
time. At rate 0 the node embeddings stay those of the encoder. The model
here is untrained, so the numbers show the machinery rather than quality.
"""

import torch

from mtvrp import ModelConfig, RoutingPolicy, generate_batch, sweep_p_test
from mtvrp.evaluation import sweep_csv

torch.manual_seed(0)
policy = RoutingPolicy(ModelConfig(dim=64, heads=4, hidden=256, encoder_layers=3))
instances = generate_batch("VRPTW", 10, 20, seed=5)

rows = sweep_p_test(policy, instances, grid=[0.0, 0.25, 0.5, 0.75, 1.0], repeats=3)
print(sweep_csv(rows))
