import math

import numpy as np
import pytest
import torch
from oracles import brute_force_optimum, enumerate_solutions, mask_sweep, tighten

from mtvrp import (
    HORIZON_INF,
    ContractViolation,
    Instance,
    Trajectory,
    VRPEnv,
    finalize_reward,
    generate,
    generate_batch,
    oracle_optimal,
    route_legs,
    route_length,
    validate_solution,
    variant_from_name,
)


def make(depots, customers, linehaul=None, backhaul=None, early=None, late=None, service=None, variant="CVRP", **kw):
    n = len(customers)
    z = [0.0] * n
    return Instance(
        depots,
        customers,
        linehaul if linehaul is not None else [0.1] * n,
        backhaul if backhaul is not None else z,
        early if early is not None else z,
        late if late is not None else [HORIZON_INF] * n,
        service if service is not None else z,
        variant=variant_from_name(variant),
        **kw,
    )


def square(variant="CVRP"):
    return make([[0, 0]], [[1, 0], [1, 1], [0, 1]], variant=variant)


def play(env, actions):
    """Step one-trajectory ``env`` through ``actions``."""
    state = env.reset(1)
    for a in actions:
        state = env.step(state, torch.tensor([[a]])).next_state
    return state


def test_reset_one_trajectory_per_customer_first_customer_matches():
    env = VRPEnv(generate("CVRP", 5, seed=0))
    s = env.reset()
    assert s.batch_shape == (1, 5)
    assert s.first_action[0, 2].item() == env.n_depots + 2


def test_md_start_depots_round_robin():
    env = VRPEnv(generate("MDCVRP", 7, seed=0))
    s = env.reset()
    assert s.start_depot[0].tolist() == [0, 1, 2, 0, 1, 2, 0]


def test_reset_deterministic():
    env = VRPEnv(generate_batch("VRPBTW", 6, 3, seed=2))
    a, b = env.reset(), env.reset()
    for f in ("current_node", "first_action", "visited", "start_depot"):
        assert torch.equal(getattr(a, f), getattr(b, f))


def test_reset_rejects_too_many_trajectories():
    env = VRPEnv(generate("CVRP", 4, seed=0))
    with pytest.raises(ValueError):
        env.reset(5)


def test_mixed_batch_sizes_rejected():
    with pytest.raises(ValueError):
        VRPEnv([generate("CVRP", 4, 0), generate("CVRP", 5, 0)])


def test_strict_backhaul_opening_remap():
    inst = generate("VRPB", 10, seed=0)
    env = VRPEnv(inst)
    first = env.reset().first_action[0].tolist()
    back = {1 + i for i in np.flatnonzero(inst.backhaul_demand > 0)}
    feasible = [c for c in range(1, 11) if c not in back]
    expected = [1 + p if 1 + p not in back else feasible[p % len(feasible)] for p in range(10)]
    assert first == expected


def test_capacity_masks_customer():
    inst = make([[0, 0]], [[0.1, 0], [0.2, 0]], linehaul=[0.9, 0.2])
    env = VRPEnv(inst)
    s = play(env, [1])
    assert env.remaining_capacity(s)[0, 0].item() == pytest.approx(0.1)
    mask = env.feasible_mask(s)[0, 0]
    assert not mask[2] and mask[0]


def test_strict_backhaul_masked_while_linehaul_left():
    inst = generate("VRPB", 10, seed=0)
    env = VRPEnv(inst)
    s = env.reset()
    s = env.step(s, s.first_action).next_state
    mask = env.feasible_mask(s)[0]
    back = 1 + np.flatnonzero(inst.backhaul_demand > 0)
    assert not mask[:, back].any()


def test_mixed_backhaul_allows_interleaving():
    inst = generate("VRPMB", 10, seed=0)
    env = VRPEnv(inst)
    s = env.reset()
    s = env.step(s, s.first_action).next_state
    back = 1 + np.flatnonzero(inst.backhaul_demand > 0)
    assert env.feasible_mask(s)[0][:, back].any()


def test_leg_length_and_waiting():
    inst = make([[0, 0]], [[0.3, 0.4]], early=[1.0], late=[3.0], service=[0.1], variant="VRPTW")
    env = VRPEnv(inst)
    s = env.reset(1)
    out = env.step(s, torch.tensor([[1]]))
    assert out.leg_length.item() == pytest.approx(0.5)
    # early arrival waits for the window to open, then serves
    assert out.next_state.current_time.item() == pytest.approx(1.1)
    # closed route: the return leg is booked on completion
    assert out.next_state.total_distance.item() == pytest.approx(1.0)


def test_late_window_masked():
    inst = make([[0, 0]], [[0.3, 0.4], [0.3, 0.0]], early=[0, 0], late=[3.0, 0.2], variant="VRPTW")
    env = VRPEnv(inst)
    s = env.reset(1)
    assert env.feasible_mask(s)[0, 0].tolist() == [False, True, False]


def test_duration_limit_counts_return_leg_when_closed():
    cust = [[0.5, 0], [1.0, 0]]
    closed = VRPEnv(make([[0, 0]], cust, variant="VRPL", duration_limit=1.5))
    s = play(closed, [1])
    assert not closed.feasible_mask(s)[0, 0, 2]
    opened = VRPEnv(make([[0, 0]], cust, variant="OVRPL", duration_limit=1.5))
    s = play(opened, [1])
    assert opened.feasible_mask(s)[0, 0, 2]


def test_visited_count_grows_by_one_per_customer():
    inst = generate("CVRP", 4, seed=5)
    env = VRPEnv(inst)
    s = env.reset()
    count = s.visited[..., 1:].sum(-1)
    gen = torch.Generator().manual_seed(0)
    a = s.first_action
    while not s.all_done():
        before = s.visited[..., 1:].sum(-1)
        mask = env.feasible_mask(s)
        s = env.step(s, a, mask).next_state
        after = s.visited[..., 1:].sum(-1)
        expect = before + (a >= 1).long() * (~(before == 4)).long()
        assert torch.equal(after, expect)
        mask = env.feasible_mask(s)
        a = torch.multinomial(mask[0].double(), 1, generator=gen).T
    assert torch.equal(s.visited[..., 1:].sum(-1), count + 4)


def test_masked_action_is_contract_violation():
    inst = make([[0, 0]], [[0.1, 0], [0.2, 0]], linehaul=[0.9, 0.2])
    env = VRPEnv(inst)
    s = play(env, [1])
    with pytest.raises(ContractViolation):
        env.step(s, torch.tensor([[2]]))
    with pytest.raises(ContractViolation):
        env.step(s, torch.tensor([[1]]))


def test_unit_square_rewards():
    closed = Trajectory(0, [1, 2, 3])
    assert finalize_reward(closed, square())[0] == pytest.approx(-4.0, abs=1e-12)
    assert finalize_reward(closed, square("OVRP"))[0] == pytest.approx(-3.0, abs=1e-12)
    env = VRPEnv(square())
    assert play(env, [1, 2, 3]).total_distance.item() == pytest.approx(4.0)
    env = VRPEnv(square("OVRP"))
    assert play(env, [1, 2, 3]).total_distance.item() == pytest.approx(3.0)


def test_depot_return_in_middle():
    inst = square()
    t = Trajectory(0, [1, 0, 2, 3])
    assert route_legs(t, inst) == pytest.approx([1.0, 1.0, math.sqrt(2), 1.0, 1.0])
    assert -play(VRPEnv(inst), [1, 0, 2, 3]).total_distance.item() == pytest.approx(finalize_reward(t, inst)[0])


def test_incomplete_trajectory_rejected():
    with pytest.raises(ValueError):
        finalize_reward(Trajectory(0, [1, 2]), square())


def test_env_reward_matches_independent_leg_sum():
    instances = generate_batch("CVRP", 7, 100, seed=11)
    env = VRPEnv(instances)
    s = env.reset()
    gen = torch.Generator().manual_seed(1)
    actions = [s.first_action]
    s = env.step(s, s.first_action).next_state
    while not s.all_done():
        mask = env.feasible_mask(s)
        a = torch.multinomial(mask.reshape(-1, env.n_nodes).double(), 1, generator=gen).reshape(s.batch_shape)
        actions.append(a)
        s = env.step(s, a, mask).next_state
    trajs = env.trajectories(torch.stack(actions, -1), s)
    for b, inst in enumerate(instances):
        coords = inst.coords()
        for p, t in enumerate(trajs[b]):
            # second implementation: walk node pairs, re-anchoring at depot visits
            total, anchor, prev = 0.0, t.start_depot, t.start_depot
            for node in t.actions:
                if node == 0:
                    total += np.hypot(*(coords[prev] - coords[anchor]))
                    anchor = prev = node
                else:
                    total += np.hypot(*(coords[node] - coords[prev]))
                    prev = node
            total += np.hypot(*(coords[prev] - coords[anchor]))
            assert abs(total - s.total_distance[b, p].item()) < 1e-6


def test_validate_flags_double_visit_and_capacity():
    inst = square()
    assert "visited exactly once" in validate_solution(Trajectory(0, [1, 2, 2, 3]), inst).rules()
    heavy = make([[0, 0]], [[1, 0], [1, 1]], linehaul=[0.6, 0.6])
    assert "capacity" in validate_solution(Trajectory(0, [1, 2]), heavy).rules()
    assert validate_solution(Trajectory(0, [1, 0, 2]), heavy).ok


def test_validate_other_rules():
    inst = square()
    assert "all customers visited" in validate_solution(Trajectory(0, [1, 2]), inst).rules()
    assert "node index" in validate_solution(Trajectory(0, [1, 2, 9]), inst).rules()
    tw = make([[0, 0]], [[1, 0], [1, 1]], late=[10, 1.5], variant="VRPTW")
    assert "time window" in validate_solution(Trajectory(0, [1, 2]), tw).rules()
    lim = make([[0, 0]], [[1, 0], [1, 1]], variant="VRPL", duration_limit=3.0)
    assert "duration limit" in validate_solution(Trajectory(0, [1, 2]), lim).rules()
    hz = make([[0, 0]], [[1, 0]], variant="VRPTW", depot_late=1.5)
    assert "depot horizon" in validate_solution(Trajectory(0, [1]), hz).rules()
    vb = make([[0, 0]], [[1, 0], [1, 1]], linehaul=[0, 0.1], backhaul=[0.1, 0], variant="VRPB")
    assert "backhaul order" in validate_solution(Trajectory(0, [1, 2]), vb).rules()
    assert validate_solution(Trajectory(0, [2, 1]), vb).ok


def test_oracle_tour_validates_and_matches_brute_force():
    inst = generate("VRPBTW", 5, seed=3)
    res = oracle_optimal(inst)
    assert validate_solution(res.trajectory, inst).ok
    assert res.objective == pytest.approx(brute_force_optimum(inst), abs=1e-9)
    assert all(validate_solution(t, inst).ok for t in enumerate_solutions(inst))


@pytest.mark.parametrize("name", ["VRPTW", "OVRPBLTW", "VRPMBL", "MDOVRPBTW"])
def test_mask_equals_exhaustive_checker(name):
    rng = np.random.default_rng(0)
    batch = [tighten(i, rng) if k % 2 else i for k, i in enumerate(generate_batch(name, 6, 12, seed=4))]
    checked, bad, nontrivial, examples = mask_sweep(batch, seed=0)
    assert checked > 500 and nontrivial > 0
    assert bad == 0, examples
