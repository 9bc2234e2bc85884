"""Exact solver for small instances (reference objective for gap reporting).

Two phases. First every feasible single sub-route is enumerated with a
label-setting search keyed by (customer subset, last customer); labels that
are both longer and later than another label on the same key are dropped.
Then the cheapest partition of the customers into sub-routes is found by a
subset DP. Under strict backhaul ordering at most one sub-route may mix
linehaul and backhaul customers (it must be the one where the global
linehaul-to-backhaul switch happens).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .env import FEAS_TOL, Trajectory, route_length, validate_solution
from .instances import Instance

MAX_ORACLE_CUSTOMERS = 10


class OracleCapacityError(ValueError):
    """Instance too large for exact search."""


@dataclass
class OracleResult:
    objective: float
    trajectory: Trajectory


def _dist(a, b) -> float:
    dx, dy = a[0] - b[0], a[1] - b[1]
    return math.sqrt(dx * dx + dy * dy)


def _best_routes(inst: Instance):
    """Cheapest feasible sub-route for every customer subset: ``mask -> (cost, depot, order)``."""
    v = inst.variant
    D, N = inst.n_depots, inst.n_customers
    xy = inst.coords()
    nodes = inst.node_arrays()
    lh, bh, early, late, service = (nodes[k] for k in ("linehaul", "backhaul", "early", "late", "service"))
    Q = inst.capacity + FEAS_TOL
    limit = inst.duration_limit + FEAS_TOL
    horizon = inst.depot_late + FEAS_TOL
    d = [[_dist(xy[i], xy[j]) for j in range(D + N)] for i in range(D + N)]
    is_bh = [bh[D + c] > 0 for c in range(N)]

    best: dict[int, tuple[float, int, tuple[int, ...]]] = {}
    for k in range(D):
        # labels[(mask, last)] = list of (dist, time, load_l, load_b, order)
        frontier: dict[tuple[int, int], list] = {}

        def offer(key, label):
            bucket = frontier.setdefault(key, [])
            dist, time = label[0], label[1]
            for other in bucket:
                if other[0] <= dist and other[1] <= time:
                    return
            bucket[:] = [o for o in bucket if not (dist <= o[0] and time <= o[1])]
            bucket.append(label)

        def extend(mask, last, dist, time, load_l, load_b, order):
            for c in range(N):
                if mask >> c & 1:
                    continue
                node = D + c
                if v.backhaul and not is_bh[c] and any(is_bh[o - D] for o in order):
                    continue
                nl, nb = load_l + lh[node], load_b + bh[node]
                if v.mixed_backhaul:
                    if nl + nb > Q:
                        continue
                elif nl > Q or nb > Q:
                    continue
                leg = d[last][node]
                arrive = time + leg
                if arrive > late[node] + FEAS_TOL:
                    continue
                finish = max(arrive, early[node]) + service[node]
                nd = dist + leg
                back = d[node][k]
                if v.open:
                    if nd > limit:
                        continue
                else:
                    if finish + back > horizon or nd + back > limit:
                        continue
                offer((mask | 1 << c, node), (nd, finish, nl, nb, order + (node,)))

        extend(0, k, 0.0, 0.0, 0.0, 0.0, ())
        for size in range(1, N + 1):
            layer = [(key, labels) for key, labels in frontier.items() if bin(key[0]).count("1") == size]
            for (mask, last), labels in layer:
                for dist, time, load_l, load_b, order in labels:
                    cost = dist if v.open else dist + d[last][k]
                    if mask not in best or cost < best[mask][0]:
                        best[mask] = (cost, k, order)
                    if size < N:
                        extend(mask, last, dist, time, load_l, load_b, order)
            for key, _ in layer:
                del frontier[key]
    return best, is_bh


def oracle_optimal(instance: Instance) -> OracleResult:
    """Exact optimum and one optimal solution of a small instance."""
    N = instance.n_customers
    if N > MAX_ORACLE_CUSTOMERS:
        raise OracleCapacityError(
            f"exact search supports at most {MAX_ORACLE_CUSTOMERS} customers (got {N}); "
            "evaluate larger instances against a policy or an external reference"
        )
    routes, is_bh = _best_routes(instance)
    bh_mask = sum(1 << c for c in range(N) if is_bh[c])
    strict = instance.variant.backhaul

    def mixed(m):
        return strict and bool(m & bh_mask) and bool(m & ~bh_mask)

    full = (1 << N) - 1
    INF = float("inf")
    # f[mask][used_mixed] = (cost, parent_mask, route_mask)
    f = [[(INF, -1, -1), (INF, -1, -1)] for _ in range(full + 1)]
    f[0][0] = (0.0, -1, -1)
    for mask in range(1, full + 1):
        low = mask & -mask
        rest = mask ^ low
        sub = rest
        while True:
            r = sub | low
            if r in routes:
                cost = routes[r][0]
                mx = int(mixed(r))
                for used in (0, 1):
                    if used + mx > 1:
                        continue
                    prev = f[mask ^ r][used]
                    if prev[0] + cost < f[mask][used + mx][0]:
                        f[mask][used + mx] = (prev[0] + cost, mask ^ r, r)
            if sub == 0:
                break
            sub = (sub - 1) & rest
    used = 0 if f[full][0][0] <= f[full][1][0] else 1
    if f[full][used][0] == INF:
        raise ValueError("instance has no feasible solution")

    chosen = []
    mask = full
    while mask:
        _, parent, r = f[mask][used]
        if mixed(r):
            used = 0
        chosen.append(r)
        mask = parent
    # linehaul-only routes, then the mixed one, then backhaul-only
    chosen.sort(key=lambda r: (bool(r & bh_mask)) + (not (r & ~bh_mask)))
    actions: list[int] = []
    start = routes[chosen[0]][1]
    for i, r in enumerate(chosen):
        _, depot, order = routes[r]
        if i:
            actions.append(depot)
        actions.extend(order)
    traj = Trajectory(start_depot=start, actions=actions)
    objective = route_length(traj, instance)
    traj.reward = -objective
    verdict = validate_solution(traj, instance)
    if not verdict.ok:
        raise AssertionError(f"oracle produced an invalid solution: {verdict.violations}")
    return OracleResult(objective=objective, trajectory=traj)
