"""Rule-based dispatchers and the Hungarian-matching dispatcher.

Every dispatcher exposes ``dispatch(sim) -> {driver_id: order_id}``. The
per-driver rules (RAN, RES, REV) only produce proposals; collisions are
settled by :func:`mfdispatch.simcore.resolve_conflicts`, re-applying the same
rule to each loser's shrunken pool.
"""

from __future__ import annotations

import numpy as np

from .hexworld import DomainError
from .simcore import Simulator, orders_near, resolve_conflicts

UNMATCHED = -1


def _pools(sim: Simulator) -> dict[int, list[int]]:
    pools = {}
    for d in sim.idle_drivers():
        cands = sim.candidates(d)
        if cands:
            pools[d] = [o.id for o in cands]
    return pools


def ran_dispatch(sim: Simulator, rng: np.random.Generator) -> dict[int, int]:
    """Proposals: each idle driver picks a uniformly random candidate."""
    return {d: pool[int(rng.integers(len(pool)))] for d, pool in _pools(sim).items()}


def _res_key(order):
    return (order.duration_steps, -order.price, order.id)


def _rev_key(order):
    return (-order.price, order.duration_steps, order.id)


def res_dispatch(sim: Simulator) -> dict[int, int]:
    """Proposals: shortest trip, then higher price, then lower order id."""
    orders = sim.state.orders
    return {d: min(pool, key=lambda i: _res_key(orders[i])) for d, pool in _pools(sim).items()}


def rev_dispatch(sim: Simulator) -> dict[int, int]:
    """Proposals: highest price, then shorter trip, then lower order id."""
    orders = sim.state.orders
    return {d: min(pool, key=lambda i: _rev_key(orders[i])) for d, pool in _pools(sim).items()}


def hungarian(costs) -> list[tuple[int, int]]:
    """Minimum-cost row->column matching of size ``min(rows, cols)``.

    Shortest augmenting path with dual potentials, O(n^3) on the padded square
    matrix. Padding uses zero-cost dummy slots, so dummies never change which
    real pairs are optimal.
    """
    c = np.asarray(costs, dtype=float)
    if c.ndim != 2:
        raise DomainError("cost matrix must be two-dimensional")
    if not np.all(np.isfinite(c)):
        raise DomainError("cost matrix entries must be finite")
    n_rows, n_cols = c.shape
    if n_rows == 0 or n_cols == 0:
        return []
    n = max(n_rows, n_cols)
    a = np.zeros((n, n))
    a[:n_rows, :n_cols] = c

    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = a[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    pairs = [(int(p[j]) - 1, j - 1) for j in range(1, n + 1) if p[j] and p[j] - 1 < n_rows and j - 1 < n_cols]
    return sorted(pairs)


def assignment_cost(costs, pairs) -> float:
    c = np.asarray(costs, dtype=float)
    return float(sum(c[i, j] for i, j in pairs))


def _components(reachable: dict[int, list[int]]) -> list[tuple[list[int], list[int]]]:
    """Connected components of the driver/order reachability graph."""
    parent: dict = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for d, orders in reachable.items():
        for o in orders:
            parent[find(("d", d))] = find(("o", o))
    groups: dict = {}
    for d, orders in reachable.items():
        groups.setdefault(find(("d", d)), ([], set()))[0].append(d)
        for o in orders:
            groups[find(("d", d))][1].add(o)
    return [(sorted(ds), sorted(os_)) for ds, os_ in groups.values()]


def hod_dispatch(sim: Simulator) -> dict[int, int]:
    """Centralized matching minimizing total pick-up distance within the receiving radius.

    The matching decomposes over connected components of the reachability
    graph, so each component is solved separately.
    """
    s = sim.state
    reachable = {}
    for d in sim.idle_drivers():
        near = [o.id for o in orders_near(s, s.drivers[d].location)]
        if near:
            reachable[d] = near
    out = {}
    for drivers, order_ids in sorted(_components(reachable)):
        out.update(_match(sim, drivers, order_ids, reachable))
    return out


def _match(sim: Simulator, drivers: list[int], order_ids: list[int], reachable) -> dict[int, int]:
    s = sim.state
    col = {oid: j for j, oid in enumerate(order_ids)}
    real = np.full((len(drivers), len(order_ids)), np.nan)
    for i, d in enumerate(drivers):
        for oid in reachable[d]:
            real[i, col[oid]] = sim.pickup_km(s.drivers[d], s.orders[oid])
    top = np.nanmax(real)
    sentinel = 1e6 * (top if top > 0 else 1.0)
    costs = np.where(np.isnan(real), sentinel, real)
    out = {}
    for i, j in hungarian(costs):
        if not np.isnan(real[i, j]):
            out[drivers[i]] = order_ids[j]
    return out


class RuleDispatcher:
    """Wraps a proposal rule with conflict resolution."""

    learning = False

    def __init__(self, name: str, rng: np.random.Generator):
        if name not in ("RAN", "RES", "REV"):
            raise DomainError(f"unknown rule dispatcher {name!r}")
        self.name = name
        self.rng = rng

    def _choose(self, sim, pool):
        if self.name == "RAN":
            return pool[int(self.rng.integers(len(pool)))]
        key = _res_key if self.name == "RES" else _rev_key
        orders = sim.state.orders
        return min(pool, key=lambda i: key(orders[i]))

    def dispatch(self, sim: Simulator) -> dict[int, int]:
        pools = _pools(sim)
        if self.name == "RAN":
            proposals = {d: self._choose(sim, pool) for d, pool in pools.items()}
        elif self.name == "RES":
            proposals = res_dispatch(sim)
        else:
            proposals = rev_dispatch(sim)
        return resolve_conflicts(proposals, pools, lambda d, pool: self._choose(sim, pool), self.rng)


class HodDispatcher:
    name = "HOD"
    learning = False

    def dispatch(self, sim: Simulator) -> dict[int, int]:
        return hod_dispatch(sim)
