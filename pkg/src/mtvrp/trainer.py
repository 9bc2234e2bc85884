"""REINFORCE training with a shared per-instance mean baseline."""

from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .env import VRPEnv
from .instances import VARIANT_SETS, generate_batch, variant_from_name
from .layers import NumericFailure
from .policy import ModelConfig, Rollout, RoutingPolicy

log = logging.getLogger(__name__)

METRIC_FIELDS = ("epoch", "loss", "val_obj", "lr", "seconds")


@dataclass
class TrainConfig:
    n_customers: int = 50
    batch_size: int = 256
    epochs: int = 300
    instances_per_epoch: int = 100_000
    lr: float = 3e-4
    weight_decay: float = 1e-6
    milestones: tuple[int, ...] = (270, 295)
    lr_decay: float = 0.1
    grad_clip: float = 1.0
    p_train: float = 0.75
    p_test: float = 1.0
    seed: int = 0
    variants: tuple[str, ...] = field(default_factory=lambda: tuple(v.name() for v in VARIANT_SETS["in16"]()))
    val_size: int = 128
    val_variant: str = "CVRP"
    fixed_training_set: bool = False
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        for name in ("n_customers", "batch_size", "epochs", "instances_per_epoch", "val_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("lr", "grad_clip", "lr_decay"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        self.milestones = tuple(sorted(self.milestones))
        if any(m >= self.epochs or m <= 0 for m in self.milestones):
            raise ValueError("milestones must lie strictly between 0 and epochs")
        for p in (self.p_train, self.p_test):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"refinement probability {p} outside [0, 1]")
        if isinstance(self.variants, str):
            self.variants = (self.variants,)
        self.variants = tuple(self.variants)
        for v in self.variants + (self.val_variant,):
            variant_from_name(v)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["variants"] = list(self.variants)
        return d


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Learning rate in effect during 1-based ``epoch``."""
    passed = sum(1 for m in config.milestones if epoch > m)
    return config.lr * config.lr_decay**passed


def reinforce_loss(rewards: torch.Tensor, sum_log_probs: torch.Tensor) -> torch.Tensor:
    """Policy-gradient surrogate for ``(B, P)`` rewards and summed log-probabilities.

    The baseline is the mean reward over an instance's trajectories; rewards
    and baseline carry no gradient.
    """
    if rewards.shape[-1] < 2:
        raise ValueError("need at least two trajectories per instance for a shared baseline")
    rewards = rewards.detach()
    # subtract in the reward precision so a constant shift cancels before any downcast
    advantage = (rewards - rewards.mean(-1, keepdim=True)).to(sum_log_probs.dtype)
    return -(advantage * sum_log_probs).mean(-1).mean()


def rollout(policy: RoutingPolicy, instances, mode="sample", p_refine=1.0, seed=0, n_trajectories=None) -> Rollout:
    return policy(VRPEnv(instances), mode=mode, p_refine=p_refine, seed=seed, n_trajectories=n_trajectories)


@torch.no_grad()
def greedy_objective(policy: RoutingPolicy, instances, p_test: float, seed: int = 0, batch_size: int = 256) -> float:
    """Mean over instances of the best greedy trajectory length."""
    was_training = policy.training
    policy.eval()
    best = []
    for i in range(0, len(instances), batch_size):
        r = rollout(policy, instances[i : i + batch_size], "greedy", p_test, seed)
        best.append((-r.reward).min(-1).values)
    policy.train(was_training)
    return float(torch.cat(best).mean())


class TrainingAborted(RuntimeError):
    pass


def train_step(policy: RoutingPolicy, optimizer, instances, config: TrainConfig, seed: int) -> tuple[float, float]:
    """One sampled rollout and clipped update; returns the loss and the pre-clip gradient norm."""
    try:
        r = rollout(policy, instances, "sample", config.p_train, seed=seed)
    except NumericFailure as exc:
        raise TrainingAborted(str(exc)) from exc
    loss = reinforce_loss(r.reward, r.sum_log_probs)
    if not torch.isfinite(loss):
        raise TrainingAborted("non-finite loss")
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    norm = torch.nn.utils.clip_grad_norm_(policy.parameters(), config.grad_clip)
    optimizer.step()
    return loss.item(), float(norm)


@dataclass
class FitResult:
    policy: RoutingPolicy
    metrics: list[dict]
    best_epoch: int
    best_val: float


def _batch_seed(seed: int, epoch: int, k: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, k]).generate_state(1, dtype=np.uint64)[0])


def fit(config: TrainConfig, out_dir=None, policy: RoutingPolicy | None = None, progress=None) -> FitResult:
    """Train a policy; with ``out_dir`` writes ``metrics.csv``, ``best.npz`` and ``last.npz``."""
    torch.manual_seed(config.seed)
    if policy is None:
        policy = RoutingPolicy(config.model)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    opt = torch.optim.Adam(policy.parameters(), lr=config.lr, weight_decay=config.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, milestones=list(config.milestones), gamma=config.lr_decay)
    val_set = generate_batch(config.val_variant, config.n_customers, config.val_size, seed=config.seed + 7919)

    metrics: list[dict] = []

    def record(row):
        metrics.append(row)
        if out is not None:
            with open(out / "metrics.csv", "w", newline="") as fh:
                w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
                w.writeheader()
                w.writerows(metrics)
        if progress is not None:
            progress(row)

    t0 = time.perf_counter()
    best_val = greedy_objective(policy, val_set, config.p_test)
    best_epoch = 0
    best_state = copy.deepcopy(policy.state_dict())
    if out is not None:
        save_checkpoint(policy, out / "best.npz", {"epoch": 0, "val_obj": best_val})
        save_checkpoint(policy, out / "last.npz", {"epoch": 0, "val_obj": best_val})
    record({"epoch": 0, "loss": float("nan"), "val_obj": best_val, "lr": config.lr, "seconds": time.perf_counter() - t0})

    n_batches = math.ceil(config.instances_per_epoch / config.batch_size)
    global_batch = 0
    for epoch in range(1, config.epochs + 1):
        policy.train()
        t0 = time.perf_counter()
        losses = []
        for k in range(n_batches):
            size = min(config.batch_size, config.instances_per_epoch - k * config.batch_size)
            # a fixed training set replays the same batches every epoch
            if config.fixed_training_set:
                variant, bseed = config.variants[k % len(config.variants)], _batch_seed(config.seed, 0, k)
            else:
                variant, bseed = config.variants[global_batch % len(config.variants)], _batch_seed(config.seed, epoch, k)
            global_batch += 1
            instances = generate_batch(variant, config.n_customers, size, seed=bseed)
            try:
                loss, _ = train_step(policy, opt, instances, config, bseed)
            except TrainingAborted as exc:
                raise TrainingAborted(f"epoch {epoch} batch {k}: {exc}; last good checkpoint kept") from exc
            losses.append(loss)
        lr_used = opt.param_groups[0]["lr"]
        sched.step()
        try:
            val = greedy_objective(policy, val_set, config.p_test)
        except NumericFailure as exc:
            raise TrainingAborted(f"epoch {epoch} validation: {exc}; last good checkpoint kept") from exc
        if val < best_val:
            best_val, best_epoch = val, epoch
            best_state = copy.deepcopy(policy.state_dict())
            if out is not None:
                save_checkpoint(policy, out / "best.npz", {"epoch": epoch, "val_obj": val})
        if out is not None:
            save_checkpoint(policy, out / "last.npz", {"epoch": epoch, "val_obj": val})
        record(
            {
                "epoch": epoch,
                "loss": float(np.mean(losses)),
                "val_obj": val,
                "lr": lr_used,
                "seconds": time.perf_counter() - t0,
            }
        )
        log.info("epoch %d loss %.4f val %.4f lr %.2e", epoch, metrics[-1]["loss"], val, lr_used)
    policy.load_state_dict(best_state)
    return FitResult(policy, metrics, best_epoch, best_val)
