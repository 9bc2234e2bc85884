"""Gap reporting against exact references, P_ts sweeps, and a random baseline."""

from __future__ import annotations

import csv
import io
import json
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .env import Trajectory, VRPEnv, route_length, validate_solution
from .instances import Instance
from .oracle import oracle_optimal
from .policy import RoutingPolicy


class InvalidSolution(RuntimeError):
    """A decoded solution failed validation; the report is aborted."""


def gap_percent(objective: float, reference: float) -> float:
    return (objective - reference) / reference * 100.0


@dataclass
class GapReport:
    objectives: list[float]
    references: list[float]
    gaps: list[float]
    total_time: float
    solutions: list[Trajectory] = field(default_factory=list, repr=False)

    @property
    def mean_objective(self) -> float:
        return float(np.mean(self.objectives))

    @property
    def mean_gap(self) -> float:
        return float(np.mean(self.gaps))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["instance", "objective", "reference", "gap_pct"])
        for i, (o, r, g) in enumerate(zip(self.objectives, self.references, self.gaps)):
            w.writerow([i, repr(o), repr(r), repr(g)])
        w.writerow(["mean", repr(self.mean_objective), "", repr(self.mean_gap)])
        return buf.getvalue()

    @property
    def is_reference(self) -> bool:
        return self.objectives == self.references

    def summary(self) -> str:
        # a reference scored against itself is marked "*" rather than 0%
        gap = "*" if self.is_reference else f"{self.mean_gap:.3f}%"
        return (
            f"instances: {len(self.objectives)}\n"
            f"Obj.: {self.mean_objective:.4f}\n"
            f"Gap:  {gap}\n"
            f"Time: {self.total_time:.2f}s"
        )


def reference_objectives(instances: list[Instance], reference) -> list[float]:
    """Resolve ``reference`` ("oracle", a sequence of floats, or a file path) to one value per instance."""
    if isinstance(reference, str) and reference == "oracle":
        return [oracle_optimal(inst).objective for inst in instances]
    if isinstance(reference, (str, Path)):
        reference = load_reference(reference)
    if reference is None:
        raise ValueError("no reference objectives supplied")
    values = [float(x) for x in reference]
    if len(values) != len(instances):
        raise ValueError(f"{len(values)} reference objectives for {len(instances)} instances")
    if not all(np.isfinite(values)) or min(values) <= 0:
        raise ValueError("reference objectives must be positive and finite")
    return values


def load_reference(path) -> list[float]:
    """JSON list of numbers, or CSV with an ``objective`` (or ``reference``) column."""
    text = Path(path).read_text()
    if text.lstrip().startswith("["):
        return [float(x) for x in json.loads(text)]
    rows = list(csv.DictReader(io.StringIO(text)))
    for col in ("reference", "objective"):
        if rows and col in rows[0]:
            return [float(r[col]) for r in rows if r.get("instance") != "mean"]
    raise ValueError(f"{path}: no 'reference' or 'objective' column")


def _groups(instances: list[Instance]):
    groups: dict[tuple[int, int], list[int]] = {}
    for i, inst in enumerate(instances):
        groups.setdefault((inst.n_customers, inst.n_depots), []).append(i)
    return groups.values()


@torch.no_grad()
def decode_best(policy: RoutingPolicy, instances: list[Instance], p_test: float, seed: int = 0, batch_size: int = 256):
    """Best greedy multi-start solution per instance and the decode wall-clock."""
    policy.eval()
    best: list[Trajectory | None] = [None] * len(instances)
    elapsed = 0.0
    for idx in _groups(instances):
        for s in range(0, len(idx), batch_size):
            chunk = idx[s : s + batch_size]
            env = VRPEnv([instances[i] for i in chunk])
            t0 = time.perf_counter()
            r = policy(env, "greedy", p_test, seed=seed)
            elapsed += time.perf_counter() - t0
            rows = r.trajectories()
            pick = (-r.reward).argmin(-1).tolist()
            for j, i in enumerate(chunk):
                best[i] = rows[j][pick[j]]
    return best, elapsed


def evaluate(
    policy: RoutingPolicy,
    instances: list[Instance],
    reference="oracle",
    p_test: float = 1.0,
    seed: int = 0,
    batch_size: int = 256,
) -> GapReport:
    refs = reference_objectives(instances, reference)
    best, elapsed = decode_best(policy, instances, p_test, seed, batch_size)
    objectives = []
    for i, (inst, sol) in enumerate(zip(instances, best)):
        verdict = validate_solution(sol, inst)
        if not verdict.ok:
            raise InvalidSolution(f"instance {i}: {verdict.violations}")
        objectives.append(route_length(sol, inst))
    gaps = [gap_percent(o, r) for o, r in zip(objectives, refs)]
    return GapReport(objectives, refs, gaps, elapsed, best)


@dataclass
class SweepRow:
    p_test: float
    mean_gap: float
    mean_objective: float
    total_time: float


def sweep_p_test(
    policy: RoutingPolicy,
    instances: list[Instance],
    grid,
    reference="oracle",
    seed: int = 0,
    repeats: int = 1,
) -> list[SweepRow]:
    """One evaluation per grid value on shared instances and seed; time is the median over ``repeats``."""
    grid = [float(p) for p in grid]
    if any(not 0.0 <= p <= 1.0 for p in grid):
        raise ValueError("sweep grid must lie in [0, 1]")
    refs = reference_objectives(instances, reference)
    rows = []
    for p in grid:
        times, report = [], None
        for _ in range(max(1, repeats)):
            report = evaluate(policy, instances, refs, p, seed)
            times.append(report.total_time)
        rows.append(SweepRow(p, report.mean_gap, report.mean_objective, statistics.median(times)))
    return rows


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["p_test", "mean_gap_pct", "mean_objective", "total_time_s"])
    for r in rows:
        w.writerow([r.p_test, repr(r.mean_gap), repr(r.mean_objective), repr(r.total_time)])
    return buf.getvalue()


def random_rollout_objectives(instances: list[Instance], seed: int = 0, best_of_starts: bool = True) -> np.ndarray:
    """Objective of a policy choosing uniformly among feasible nodes.

    With ``best_of_starts`` the same multi-start protocol as the learned
    policy is used (best of one trajectory per customer); otherwise the mean
    over starts is returned.
    """
    gen = torch.Generator().manual_seed(seed)
    out = np.empty(len(instances))
    for idx in _groups(instances):
        env = VRPEnv([instances[i] for i in idx])
        state = env.reset()
        state = env.step(state, state.first_action).next_state
        while not state.all_done():
            mask = env.feasible_mask(state)
            flat = mask.reshape(-1, env.n_nodes).double()
            a = torch.multinomial(flat, 1, generator=gen).reshape(state.batch_shape)
            state = env.step(state, a, mask).next_state
        lengths = state.total_distance
        vals = lengths.min(-1).values if best_of_starts else lengths.mean(-1)
        out[list(idx)] = vals.numpy()
    return out
