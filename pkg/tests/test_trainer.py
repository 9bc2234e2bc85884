import csv

import numpy as np
import pytest
import torch
from conftest import tiny_config
from oracles import enumerate_solutions

from mtvrp import (
    RoutingPolicy,
    TrainConfig,
    TrainingAborted,
    VRPEnv,
    fit,
    generate,
    generate_batch,
    load_checkpoint,
    lr_at_epoch,
    reinforce_loss,
    route_length,
    rollout,
    validate_solution,
)
from mtvrp.trainer import train_step


def small_config(**kw):
    base = dict(
        n_customers=5,
        batch_size=8,
        epochs=2,
        instances_per_epoch=16,
        milestones=(),
        variants=("CVRP", "VRPTW"),
        val_size=8,
        seed=3,
        model=tiny_config(),
    )
    base.update(kw)
    return TrainConfig(**base)


def test_advantages_from_mean_baseline():
    logp = torch.zeros(1, 2, requires_grad=True)
    reinforce_loss(torch.tensor([[-3.0, -5.0]]), logp).backward()
    # d loss / d logp_i = -(R_i - b) / P
    assert logp.grad.tolist() == [[-0.5, 0.5]]


def test_needs_two_trajectories():
    with pytest.raises(ValueError):
        reinforce_loss(torch.zeros(3, 1), torch.zeros(3, 1))


def _policy_grad(policy, env, shift=0.0, equal=False):
    r = policy(env, "sample", p_refine=0.75, seed=1)
    rewards = r.reward.detach()
    if equal:
        rewards = torch.full_like(rewards, -2.5)
    policy.zero_grad()
    reinforce_loss(rewards + shift, r.sum_log_probs).backward()
    return torch.cat([(p.grad if p.grad is not None else torch.zeros_like(p)).flatten() for p in policy.parameters()])


def test_equal_rewards_zero_gradient():
    torch.manual_seed(0)
    policy = RoutingPolicy(tiny_config())
    g = _policy_grad(policy, VRPEnv(generate_batch("VRPL", 6, 3, seed=0)), equal=True)
    assert torch.count_nonzero(g) == 0


def test_baseline_shift_invariance():
    torch.manual_seed(0)
    policy = RoutingPolicy(tiny_config()).double()
    env = VRPEnv(generate_batch("VRPB", 6, 3, seed=0))
    g0 = _policy_grad(policy, env)
    g1 = _policy_grad(policy, env, shift=123.0)
    assert (g0 - g1).norm() < 1e-6


def test_lr_schedule():
    cfg = TrainConfig()
    assert lr_at_epoch(cfg, 270) == pytest.approx(3e-4)
    assert lr_at_epoch(cfg, 271) == pytest.approx(3e-5)
    assert lr_at_epoch(cfg, 296) == pytest.approx(3e-6)
    opt = torch.optim.Adam([torch.zeros(1, requires_grad=True)], lr=cfg.lr)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, list(cfg.milestones), cfg.lr_decay)
    for epoch in range(1, cfg.epochs + 1):
        assert opt.param_groups[0]["lr"] == pytest.approx(lr_at_epoch(cfg, epoch))
        opt.step()
        sched.step()


@pytest.mark.parametrize(
    "kw",
    [dict(batch_size=0), dict(lr=0), dict(milestones=(400,)), dict(p_train=1.2), dict(variants=("VRPZ",)), dict(weight_decay=-1)],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_gradient_clipped():
    torch.manual_seed(0)
    policy = RoutingPolicy(tiny_config())
    cfg = small_config()
    opt = torch.optim.SGD(policy.parameters(), lr=0.0)
    # huge rewards give a pre-clip norm well above 1
    batch = generate_batch("CVRP", 6, 4, seed=0)
    for inst in batch:
        inst.customer_coords *= 50
        inst.depot_coords *= 50
    _, pre = train_step(policy, opt, batch, cfg, seed=0)
    post = torch.sqrt(sum(p.grad.pow(2).sum() for p in policy.parameters() if p.grad is not None))
    assert pre > 1
    assert post <= 1 + 1e-6


def test_greedy_rollout_deterministic_and_valid(tiny_policy):
    batch = generate_batch("OVRPBLTW", 8, 4, seed=2)
    with torch.no_grad():
        a = rollout(tiny_policy, batch, "greedy")
        b = rollout(tiny_policy, batch, "greedy")
    assert torch.equal(a.actions, b.actions)
    for inst, row in zip(batch, a.trajectories()):
        for t in row:
            assert validate_solution(t, inst).ok
            assert t.reward == pytest.approx(-route_length(t, inst), abs=1e-6)


def test_sampled_rewards_within_brute_force_bounds(tiny_policy):
    inst = generate("CVRP", 6, seed=8)
    lengths = [route_length(t, inst) for t in enumerate_solutions(inst)]
    with torch.no_grad():
        r = rollout(tiny_policy, [inst], "sample", seed=4)
    mean = r.reward.mean().item()
    assert -max(lengths) - 1e-9 <= mean <= -min(lengths) + 1e-9


def _metrics(path):
    with open(path) as fh:
        return [{k: v for k, v in row.items() if k != "seconds"} for row in csv.DictReader(fh)]


def test_fit_outputs_and_determinism(tmp_path):
    a = fit(small_config(), out_dir=tmp_path / "a")
    b = fit(small_config(), out_dir=tmp_path / "b")
    ma, mb = _metrics(tmp_path / "a" / "metrics.csv"), _metrics(tmp_path / "b" / "metrics.csv")
    assert ma == mb and len(ma) == 3
    assert list(ma[0]) == ["epoch", "loss", "val_obj", "lr"]
    for name in ("best.npz", "last.npz"):
        assert (tmp_path / "a" / name).exists()
    assert a.best_val == min(m["val_obj"] for m in a.metrics)
    best = load_checkpoint(tmp_path / "a" / "best.npz")
    for (k, v), w in zip(best.state_dict().items(), a.policy.state_dict().values()):
        assert torch.equal(v, w), k


def test_fixed_training_set_replays_batches(tmp_path, monkeypatch):
    import mtvrp.trainer as tr

    seen = []
    real = tr.generate_batch

    def spy(variant, n, count, seed):
        seen.append((variant, seed))
        return real(variant, n, count, seed)

    monkeypatch.setattr(tr, "generate_batch", spy)
    fit(small_config(fixed_training_set=True))
    train = seen[1:]
    assert train[:2] == train[2:]
    seen.clear()
    fit(small_config())
    train = seen[1:]
    assert train[:2] != train[2:]


def test_nan_parameters_abort_and_keep_checkpoint(tmp_path):
    policy = RoutingPolicy(tiny_config())

    def poison(row):
        if row["epoch"] == 0:
            with torch.no_grad():
                policy.encoder.depot_proj.weight.fill_(float("nan"))

    with pytest.raises(TrainingAborted, match="last good checkpoint"):
        fit(small_config(), out_dir=tmp_path, policy=policy, progress=poison)
    kept = load_checkpoint(tmp_path / "last.npz")
    assert np.isfinite(kept.encoder.depot_proj.weight.detach().numpy()).all()
