"""
Task variants and the routing environment
=========================================

Build instances for a few variants, walk one trajectory through the
environment by hand, and check the result with the validator.
"""

import torch

from mtvrp import VRPEnv, finalize_reward, generate, in_distribution_variants, validate_solution, variant_from_name

# Variants are composed from flags, and names parse back into flag sets.
print([v.name() for v in in_distribution_variants()])
print(variant_from_name("MDOVRPMBLTW"))

# One time-windowed instance with backhauls and a duration limit.
inst = generate("VRPBLTW", 8, seed=0)
print("backhaul customers:", (inst.backhaul_demand > 0).sum(), " duration limit:", inst.duration_limit)

# Walk a single trajectory that always takes the lowest-index feasible node.
env = VRPEnv(inst)
state = env.reset(n_trajectories=1)
actions = [state.first_action]
state = env.step(state, state.first_action).next_state
while not state.all_done():
    mask = env.feasible_mask(state)
    a = mask.float().argmax(-1)
    actions.append(a)
    state = env.step(state, a, mask).next_state

# Convert the action record into a trajectory and re-score it from the sequence alone.
traj = env.trajectories(torch.stack(actions, -1), state)[0][0]
print("route:", [traj.start_depot] + traj.actions)
print("incremental length:", state.total_distance.item(), " recomputed:", -finalize_reward(traj, inst)[0])

# The validator names every broken rule; a doubled customer is caught.
print("valid:", validate_solution(traj, inst).ok)
traj.actions.insert(1, traj.actions[0])
print("after tampering:", validate_solution(traj, inst).rules())
