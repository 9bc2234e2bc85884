"""Batched multi-task VRP decoding environment and solution checking.

State tensors have shape ``(B, P)`` or ``(B, P, M)``: ``B`` instances, ``P``
trajectories per instance, ``M`` nodes (depots first). All environment
arithmetic is float64 so masks can be compared exactly against scalar replays.

Action semantics. Selecting a customer moves the vehicle there. Selecting a
depot ``k`` from a customer closes the current sub-route: the vehicle returns to
the depot it started from (no cost when routes are open) and the next sub-route
starts at ``k``. A closed route's final return leg is charged when the last
customer is served.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import torch

from .instances import Instance

FEAS_TOL = 1e-9


class ContractViolation(RuntimeError):
    """A caller broke an environment precondition (e.g. took a masked action)."""


@dataclass(frozen=True)
class EnvState:
    current_node: torch.Tensor
    start_depot: torch.Tensor
    used_linehaul: torch.Tensor
    used_backhaul: torch.Tensor
    current_time: torch.Tensor
    subroute_distance: torch.Tensor
    total_distance: torch.Tensor
    visited: torch.Tensor
    subroute_len: torch.Tensor
    done: torch.Tensor
    stuck: torch.Tensor
    first_action: torch.Tensor
    step_index: int = 0

    @property
    def batch_shape(self) -> tuple[int, int]:
        return tuple(self.current_node.shape)

    def all_done(self) -> bool:
        return bool(self.done.all())


@dataclass(frozen=True)
class StepOutcome:
    next_state: EnvState
    leg_length: torch.Tensor
    finished: torch.Tensor


@dataclass
class Trajectory:
    """One decoded solution.

    ``actions`` lists the nodes selected after leaving ``start_depot``; decoding
    padding is stripped. A closed route's final return leg is implicit.
    """

    start_depot: int
    actions: list[int]
    log_probs: object = None
    reward: float | None = None

    def to_dict(self) -> dict:
        return {"start": self.start_depot, "sequence": list(self.actions), "reward": self.reward}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        try:
            return cls(int(d["start"]), [int(a) for a in d["sequence"]], reward=d.get("reward"))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed solution record: {exc}") from exc


class VRPEnv:
    """Environment over a batch of instances sharing customer and depot counts."""

    def __init__(self, instances: list[Instance] | Instance, device="cpu"):
        if isinstance(instances, Instance):
            instances = [instances]
        if not instances:
            raise ValueError("empty instance batch")
        self.instances = list(instances)
        n, d = instances[0].n_customers, instances[0].n_depots
        for inst in instances:
            if inst.n_customers != n or inst.n_depots != d:
                raise ValueError("all instances in a batch need the same customer and depot counts")
        self.n_customers, self.n_depots, self.n_nodes = n, d, n + d
        self.device = torch.device(device)

        f64 = dict(dtype=torch.float64, device=self.device)
        arrays = [inst.node_arrays() for inst in instances]
        stack = lambda key: torch.tensor(np.stack([a[key] for a in arrays]), **f64)  # noqa: E731
        self.coords = torch.tensor(np.stack([inst.coords() for inst in instances]), **f64)
        self.dist = torch.tensor(np.stack([inst.distance_matrix() for inst in instances]), **f64)
        self.linehaul = stack("linehaul")
        self.backhaul = stack("backhaul")
        self.early = stack("early")
        self.late = stack("late")
        self.service = stack("service")
        col = lambda vals, **kw: torch.tensor(vals, device=self.device, **kw)[:, None]  # noqa: E731
        self.capacity = col([inst.capacity for inst in instances], dtype=torch.float64)
        self.duration_limit = col([inst.duration_limit for inst in instances], dtype=torch.float64)
        self.depot_late = col([inst.depot_late for inst in instances], dtype=torch.float64)
        self.open = col([inst.variant.open for inst in instances])
        self.strict_backhaul = col([inst.variant.backhaul for inst in instances])
        self.mixed_backhaul = col([inst.variant.mixed_backhaul for inst in instances])
        self.is_customer = torch.arange(self.n_nodes, device=self.device) >= d

    @property
    def batch_size(self) -> int:
        return len(self.instances)

    # -- state construction --------------------------------------------------

    def reset(self, n_trajectories: int | None = None) -> EnvState:
        """Fresh state with ``n_trajectories`` per instance (default: one per customer).

        Trajectory ``i`` is committed to serve customer ``i`` first. When that
        customer is infeasible as an opening move (a backhaul customer under
        strict backhaul ordering), the start is moved to the ``i``-th feasible
        opening customer, counting cyclically.
        """
        P = self.n_customers if n_trajectories is None else n_trajectories
        if P > self.n_customers:
            raise ValueError(f"n_trajectories={P} exceeds the customer count {self.n_customers}")
        if P < 1:
            raise ValueError("n_trajectories must be >= 1")
        B, M, dev = self.batch_size, self.n_nodes, self.device
        zeros = torch.zeros(B, P, dtype=torch.float64, device=dev)
        start = (torch.arange(P, device=dev) % self.n_depots).expand(B, P).clone()
        state = EnvState(
            current_node=start.clone(),
            start_depot=start,
            used_linehaul=zeros,
            used_backhaul=zeros,
            current_time=zeros,
            subroute_distance=zeros,
            total_distance=zeros,
            visited=torch.zeros(B, P, M, dtype=torch.bool, device=dev),
            subroute_len=torch.zeros(B, P, dtype=torch.long, device=dev),
            done=torch.zeros(B, P, dtype=torch.bool, device=dev),
            stuck=torch.zeros(B, P, dtype=torch.bool, device=dev),
            first_action=torch.zeros(B, P, dtype=torch.long, device=dev),
        )
        return replace(state, first_action=self._opening_customers(state))

    def _opening_customers(self, state: EnvState) -> torch.Tensor:
        B, P = state.batch_shape
        D = self.n_depots
        preferred = D + torch.arange(P, device=self.device).expand(B, P)
        ok = self.feasible_mask(state)[..., D:]
        has_pref = ok.gather(-1, (preferred - D)[..., None]).squeeze(-1)
        count = ok.sum(-1)
        if bool((count == 0).any()):
            raise ContractViolation("an instance has no customer reachable from its depot")
        k = torch.arange(P, device=self.device).expand(B, P) % count
        rank = ok.long().cumsum(-1) - 1
        pick = (ok & (rank == k[..., None])).long().argmax(-1) + D
        return torch.where(has_pref, preferred, pick)

    # -- masking -------------------------------------------------------------

    def feasible_mask(self, state: EnvState) -> torch.Tensor:
        """Boolean ``(B, P, M)``: True where the node may be selected next."""
        B, P = state.batch_shape
        D, M = self.n_depots, self.n_nodes
        cur, start = state.current_node, state.start_depot
        d_cur = self.dist.gather(1, cur[..., None].expand(B, P, M))
        # distance from every node back to the trajectory's start depot
        d_ret = self.dist.gather(2, start[:, None, :].expand(B, M, P)).transpose(1, 2)

        ul, ub = state.used_linehaul[..., None], state.used_backhaul[..., None]
        lh, bh = self.linehaul[:, None, :], self.backhaul[:, None, :]
        cap = self.capacity[..., None] + FEAS_TOL
        is_bh = bh > 0
        fits_mixed = ul + ub + lh + bh <= cap
        fits_split = torch.where(is_bh, ub + bh <= cap, ul + lh <= cap)
        fits = torch.where(self.mixed_backhaul[..., None], fits_mixed, fits_split)

        unvisited = ~state.visited & self.is_customer
        linehaul_left = (unvisited & (lh > 0)).any(-1, keepdim=True)
        order_ok = ~(self.strict_backhaul[..., None] & is_bh & linehaul_left)

        arrive = state.current_time[..., None] + d_cur
        in_window = arrive <= self.late[:, None, :] + FEAS_TOL
        finish = torch.maximum(arrive, self.early[:, None, :]) + self.service[:, None, :]
        opn = self.open[..., None]
        can_return = opn | (finish + d_ret <= self.depot_late[..., None] + FEAS_TOL)

        sub = state.subroute_distance[..., None]
        limit = self.duration_limit[..., None] + FEAS_TOL
        within_limit = torch.where(opn, sub + d_cur <= limit, sub + d_cur + d_ret <= limit)

        cust_ok = unvisited & fits & order_ok & in_window & can_return & within_limit
        any_cust = cust_ok.any(-1)
        at_depot = state.subroute_len == 0

        depot_ids = torch.arange(D, device=self.device)
        depot_ok = (~at_depot)[..., None].expand(B, P, D)
        # stranded at a depot: expose only the current depot so the row stays valid
        stranded = at_depot & ~any_cust
        depot_ok = depot_ok | (stranded[..., None] & (depot_ids == cur[..., None]))

        mask = torch.cat([depot_ok, cust_ok[..., D:]], dim=-1)
        finished = torch.zeros_like(mask)
        finished[..., :D] = depot_ids == start[..., None]
        return torch.where(state.done[..., None], finished, mask)

    # -- transition ----------------------------------------------------------

    def step(self, state: EnvState, actions: torch.Tensor, mask: torch.Tensor | None = None) -> StepOutcome:
        actions = torch.as_tensor(actions, device=self.device, dtype=torch.long)
        if actions.shape != state.current_node.shape:
            raise ContractViolation(f"actions shape {tuple(actions.shape)} != {state.batch_shape}")
        if mask is None:
            mask = self.feasible_mask(state)
        allowed = mask.gather(-1, actions[..., None]).squeeze(-1)
        if not bool(allowed.all()):
            bad = (~allowed).nonzero()[0].tolist()
            raise ContractViolation(f"masked action {int(actions[tuple(bad)])} at (instance, trajectory) {tuple(bad)}")

        B, P = state.batch_shape
        D = self.n_depots
        active = ~state.done
        cur, start = state.current_node, state.start_depot
        to_depot = actions < D
        at_depot = state.subroute_len == 0
        stuck = active & to_depot & at_depot
        moving = active & ~stuck
        cust_move = moving & ~to_depot
        depot_move = moving & to_depot

        bidx = torch.arange(B, device=self.device)[:, None]
        d_move = self.dist[bidx, cur, actions]
        d_home = self.dist[bidx, cur, start]
        leg = torch.where(cust_move, d_move, torch.zeros_like(d_move))
        leg = torch.where(depot_move & ~self.open, d_home, leg)

        early = self.early[bidx, actions]
        service = self.service[bidx, actions]
        served_time = torch.maximum(state.current_time + leg, early) + service
        zero = torch.zeros_like(leg)

        def upd(old, on_customer, on_depot):
            return torch.where(cust_move, on_customer, torch.where(depot_move, on_depot, old))

        current_time = upd(state.current_time, served_time, zero)
        sub = upd(state.subroute_distance, state.subroute_distance + leg, zero)
        used_l = upd(state.used_linehaul, state.used_linehaul + self.linehaul[bidx, actions], zero)
        used_b = upd(state.used_backhaul, state.used_backhaul + self.backhaul[bidx, actions], zero)
        sub_len = torch.where(
            cust_move, state.subroute_len + 1, torch.where(depot_move, torch.zeros_like(state.subroute_len), state.subroute_len)
        )
        start_new = torch.where(depot_move, actions, start)
        current = torch.where(moving, actions, cur)
        visited = state.visited | (cust_move[..., None] & (torch.arange(self.n_nodes, device=self.device) == actions[..., None]))
        total = state.total_distance + leg

        complete = cust_move & visited[..., D:].all(-1)
        closing = complete & ~self.open
        ret = self.dist[bidx, actions, start_new]
        total = torch.where(closing, total + ret, total)

        done = state.done | complete | stuck
        nxt = EnvState(
            current_node=current,
            start_depot=start_new,
            used_linehaul=used_l,
            used_backhaul=used_b,
            current_time=current_time,
            subroute_distance=sub,
            total_distance=total,
            visited=visited,
            subroute_len=sub_len,
            done=done,
            stuck=state.stuck | stuck,
            first_action=state.first_action,
            step_index=state.step_index + 1,
        )
        return StepOutcome(next_state=nxt, leg_length=leg, finished=done)

    # -- derived quantities --------------------------------------------------

    def used_capacity(self, state: EnvState) -> torch.Tensor:
        split = torch.where(state.used_backhaul > 0, state.used_backhaul, state.used_linehaul)
        return torch.where(self.mixed_backhaul, state.used_linehaul + state.used_backhaul, split)

    def remaining_capacity(self, state: EnvState) -> torch.Tensor:
        return self.capacity - self.used_capacity(state)

    def remaining_distance(self, state: EnvState) -> torch.Tensor:
        return self.duration_limit - state.subroute_distance

    def linehaul_open(self, state: EnvState) -> torch.Tensor:
        return ((~state.visited) & (self.linehaul[:, None, :] > 0)).sum(-1)

    def trajectories(self, actions: torch.Tensor, state: EnvState, log_probs=None) -> list[list[Trajectory]]:
        """Split a ``(B, P, T)`` action record into per-instance trajectory lists.

        ``state`` is the final state; each trajectory's opening depot is
        recovered as trajectory index modulo the depot count.
        """
        B, P, T = actions.shape
        acts = actions.tolist()
        rewards = (-state.total_distance).tolist()
        out = []
        for b in range(B):
            row = []
            for p in range(P):
                seq = acts[b][p]
                n_real = self._real_length(seq)
                lp = None if log_probs is None else log_probs[b, p]
                row.append(Trajectory(start_depot=p % self.n_depots, actions=seq[:n_real], log_probs=lp, reward=rewards[b][p]))
            out.append(row)
        return out

    def _real_length(self, seq: list[int]) -> int:
        # padding is a run of depot actions after the last customer
        n = len(seq)
        while n and seq[n - 1] < self.n_depots:
            n -= 1
        return n


# -- scalar solution checking ---------------------------------------------------


def _dist(a, b) -> float:
    dx, dy = a[0] - b[0], a[1] - b[1]
    return math.sqrt(dx * dx + dy * dy)


def route_legs(trajectory: Trajectory, instance: Instance, open_route: bool | None = None) -> list[float]:
    """Travelled leg lengths of a trajectory, final return included when closed."""
    if open_route is None:
        open_route = instance.variant.open
    coords = instance.coords()
    D = instance.n_depots
    start = trajectory.start_depot
    cur = start
    legs = []
    for a in trajectory.actions:
        if a < D:
            if cur >= D:
                legs.append(0.0 if open_route else _dist(coords[cur], coords[start]))
            start = cur = a
        else:
            legs.append(_dist(coords[cur], coords[a]))
            cur = a
    if cur >= D and not open_route:
        legs.append(_dist(coords[cur], coords[start]))
    return legs


def route_length(trajectory: Trajectory, instance: Instance, open_route: bool | None = None) -> float:
    return math.fsum(route_legs(trajectory, instance, open_route))


def finalize_reward(trajectories, instance: Instance) -> list[float]:
    """Negative route length of each trajectory, recomputed from its node sequence."""
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    D = instance.n_depots
    out = []
    for t in trajectories:
        served = {a for a in t.actions if a >= D}
        if len(served) != instance.n_customers:
            raise ValueError(f"incomplete trajectory: {len(served)} of {instance.n_customers} customers served")
        out.append(-route_length(t, instance))
    return out


@dataclass
class Violation:
    rule: str
    step: int
    detail: str = ""


@dataclass
class Verdict:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok

    def rules(self) -> set[str]:
        return {v.rule for v in self.violations}


def validate_solution(trajectory: Trajectory, instance: Instance) -> Verdict:
    """Check a complete solution against every routing rule of its variant.

    Rule names: ``node index``, ``visited exactly once``, ``all customers
    visited``, ``capacity``, ``backhaul order``, ``time window``, ``depot
    horizon``, ``duration limit``.
    """
    v = instance.variant
    verdict = Verdict()
    bad = verdict.violations.append
    coords = instance.coords()
    D, N = instance.n_depots, instance.n_customers
    nodes = instance.node_arrays()
    lh, bh, early, late, service = (nodes[k] for k in ("linehaul", "backhaul", "early", "late", "service"))
    Q = instance.capacity + FEAS_TOL
    limit = instance.duration_limit + FEAS_TOL
    horizon = instance.depot_late + FEAS_TOL

    if not 0 <= trajectory.start_depot < D:
        bad(Violation("node index", 0, f"start depot {trajectory.start_depot} is not a depot"))
        return verdict

    seen: set[int] = set()
    linehaul_left = sum(1 for i in range(D, D + N) if lh[i] > 0)
    start = cur = trajectory.start_depot
    t = sub = load_l = load_b = 0.0

    def close_route(step):
        if v.open or cur < D:
            return
        back = _dist(coords[cur], coords[start])
        if t + back > horizon:
            bad(Violation("depot horizon", step, f"return at {t + back:.6g} > {instance.depot_late:.6g}"))
        if sub + back > limit:
            bad(Violation("duration limit", step, f"sub-route length {sub + back:.6g} > {instance.duration_limit:.6g}"))

    for step, a in enumerate(trajectory.actions):
        if not 0 <= a < D + N:
            bad(Violation("node index", step, f"node {a} out of range"))
            continue
        if a < D:
            close_route(step)
            start = cur = a
            t = sub = load_l = load_b = 0.0
            continue
        if a in seen:
            bad(Violation("visited exactly once", step, f"customer {a} visited again"))
        seen.add(a)
        leg = _dist(coords[cur], coords[a])
        arrive = t + leg
        if arrive > late[a] + FEAS_TOL:
            bad(Violation("time window", step, f"arrival {arrive:.6g} after late time {late[a]:.6g} at node {a}"))
        t = max(arrive, early[a]) + service[a]
        sub = sub + leg
        if v.open and sub > limit:
            bad(Violation("duration limit", step, f"sub-route length {sub:.6g} > {instance.duration_limit:.6g}"))
        if v.backhaul and bh[a] > 0 and linehaul_left > 0:
            bad(Violation("backhaul order", step, f"backhaul {a} served with {linehaul_left} linehaul customers left"))
        if lh[a] > 0:
            linehaul_left -= 1
        load_l = load_l + lh[a]
        load_b = load_b + bh[a]
        over = load_l + load_b > Q if v.mixed_backhaul else (load_l > Q or load_b > Q)
        if over:
            bad(Violation("capacity", step, f"sub-route load {load_l:.6g}+{load_b:.6g} exceeds {instance.capacity:.6g}"))
        cur = a
    close_route(len(trajectory.actions))
    missing = N - len(seen)
    if missing:
        bad(Violation("all customers visited", len(trajectory.actions), f"{missing} customers never served"))
    return verdict
