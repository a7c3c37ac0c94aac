"""Order-dispatching Markov game: entities, order generation, rewards, transitions, metrics.

One :class:`Simulator` owns a :class:`WorldState` and advances it in 10-minute
steps. A step is split in two so dispatchers can look at the world in between::

    sim.begin_step()            # presence toggles, new orders, demand/supply tallies
    assignment = dispatcher.dispatch(sim)
    rewards, metrics = sim.step(assignment)

The pure operations (``destination_potential``, ``reward``, ``resolve_conflicts``,
``maybe_cancel``, ``metrics_report``) are module functions so they can be tested
without a running simulation.
"""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable

import numpy as np

from . import hexworld
from .hexworld import Coord, DomainError, HexGrid

STEP_MINUTES = 10
STEPS_PER_DAY = 24 * 60 // STEP_MINUTES


class ConfigError(ValueError):
    """Raised for unusable simulator inputs (missing data, bad parameters)."""


class OrderStatus(str, Enum):
    OPEN = "open"
    ASSIGNED = "assigned"
    SERVING = "serving"
    COMPLETED = "completed"
    CANCELLED = "cancelled"
    EXPIRED = "expired"


class DriverStatus(str, Enum):
    IDLE = "idle"
    ON_TRIP = "on_trip"
    OFFLINE = "offline"


_ALLOWED = {
    OrderStatus.OPEN: {OrderStatus.ASSIGNED, OrderStatus.EXPIRED},
    OrderStatus.ASSIGNED: {OrderStatus.SERVING, OrderStatus.CANCELLED},
    OrderStatus.SERVING: {OrderStatus.COMPLETED},
}


@dataclass
class Order:
    id: int
    origin: object  # int cell id (grid mode) or Coord
    destination: object
    price: float
    duration_steps: int
    created_step: int
    status: OrderStatus = OrderStatus.OPEN
    origin_cell: int = -1
    dest_cell: int = -1
    dp: float = 0.0
    pickup_steps: int = 0

    def __post_init__(self):
        if not self.price > 0:
            raise DomainError(f"order {self.id}: price must be positive, got {self.price}")
        if self.duration_steps < 1:
            raise DomainError(f"order {self.id}: duration must be at least one step")

    def move_to(self, status: OrderStatus) -> None:
        if status not in _ALLOWED.get(self.status, ()):
            raise DomainError(f"order {self.id}: illegal transition {self.status.value} -> {status.value}")
        self.status = status


@dataclass
class Driver:
    id: int
    location: object
    status: DriverStatus = DriverStatus.IDLE
    trip_end_step: int | None = None
    current_order: int | None = None
    income: float = 0.0
    cell: int = 0


@dataclass(frozen=True)
class Observation:
    location: object
    step: int
    on_trip: bool


@dataclass(frozen=True)
class RewardWeights:
    alpha_dp: float = 0.01
    alpha_pickup: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.alpha_dp) and math.isfinite(self.alpha_pickup)):
            raise DomainError("reward weights must be finite")


@dataclass
class StepMetrics:
    step: int
    gmv: float = 0.0
    orders_generated: int = 0
    orders_served: int = 0
    orders_cancelled: int = 0
    orders_expired: int = 0
    dp_sum: float = 0.0
    pickup_time_sum: float = 0.0  # minutes
    idle: int = 0
    on_trip: int = 0
    offline: int = 0
    prices: list = field(default_factory=list, repr=False)  # completed order prices behind ``gmv``

    def hour(self, steps_per_hour: int = 60 // STEP_MINUTES) -> int:
        return (self.step // steps_per_hour) % 24


@dataclass
class SimConfig:
    mode: str = "grid"  # "grid" | "coordinate"
    rows: int = 10
    cols: int = 10
    cell_km: float = 1.2
    map_width_km: float = 10.0
    fleet_size: int = 200
    radius: float = 0.1  # order receiving radius, unit-square units (coordinate mode)
    patience: int = 1
    on_rate: float = 0.0
    off_rate: float = 0.0
    initially_online: float = 1.0
    cancel_slope: float = 0.0  # cancellation probability per minute of pick-up
    speed_kmh: float = 20.0  # pick-up travel speed (coordinate mode)
    p_sample: float = 1.0
    steps_per_day: int = STEPS_PER_DAY
    step_minutes: int = STEP_MINUTES
    alpha_dp: float = 0.01
    alpha_pickup: float | None = None  # None -> 0 in grid mode, -0.1 in coordinate mode
    log_events: bool = False

    def __post_init__(self):
        if self.mode not in ("grid", "coordinate"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        for name in ("on_rate", "off_rate", "initially_online", "p_sample"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.patience < 1:
            raise ConfigError("patience must be at least one step")

    @property
    def weights(self) -> RewardWeights:
        pickup = self.alpha_pickup
        if pickup is None:
            pickup = 0.0 if self.mode == "grid" else -0.1
        return RewardWeights(self.alpha_dp, pickup)

    def grid(self) -> HexGrid:
        return HexGrid(self.rows, self.cols, self.cell_km)


@dataclass
class WorldState:
    step: int
    mode: str
    grid: HexGrid
    drivers: list[Driver]
    orders: dict[int, Order] = field(default_factory=dict)  # open orders only
    demand: np.ndarray = None  # per-cell open orders (#DD)
    supply: np.ndarray = None  # per-cell idle online drivers (#DS)
    radius: float = 0.1
    map_width_km: float = 10.0
    next_order_id: int = 0
    _by_cell: dict = field(default_factory=dict, repr=False)

    def cell_of_location(self, loc) -> int:
        if self.mode == "grid":
            return int(loc)
        return hexworld.cell_of(loc, self.grid)

    def counts(self) -> dict[str, int]:
        out = {s.value: 0 for s in DriverStatus}
        for d in self.drivers:
            out[d.status.value] += 1
        return out


# -- demand ------------------------------------------------------------------


@dataclass(frozen=True)
class OrderEvent:
    created_step: int
    origin: object
    destination: object
    price: float
    duration_steps: int


class ReplayDemand:
    """Bootstraps orders from a historical event file.

    Events are bucketed by ``created_step mod steps_per_day`` so several
    recorded days pool into one daily profile.
    """

    def __init__(self, events: list[OrderEvent], steps_per_day: int = STEPS_PER_DAY):
        if not events:
            raise ConfigError("replay demand needs at least one order event")
        self.steps_per_day = steps_per_day
        self.by_step: dict[int, list[OrderEvent]] = defaultdict(list)
        for e in events:
            self.by_step[e.created_step % steps_per_day].append(e)

    @classmethod
    def from_file(cls, path, steps_per_day: int = STEPS_PER_DAY) -> ReplayDemand:
        return cls(read_order_events(path), steps_per_day)

    def draw(self, step: int, p_sample: float, rng: np.random.Generator) -> list[OrderEvent]:
        window = self.by_step.get(step % self.steps_per_day, [])
        n = int(math.floor(p_sample * len(window)))
        if n == 0:
            return []
        idx = rng.integers(0, len(window), size=n)
        return [window[i] for i in idx]


class SyntheticDemand:
    """Poisson order arrivals per cell and hour with a destination kernel.

    ``rates`` has shape (24, cells): expected orders per step. ``dest_probs``
    has shape (cells, cells) or (24, cells, cells), rows summing to one.
    Prices are ``base_fare + per_km * km`` times a lognormal noise factor;
    durations are ``1 + floor(km / km_per_step)`` steps.
    """

    def __init__(self, grid: HexGrid, rates, dest_probs, base_fare=2.0, per_km=1.5,
                 km_per_step=2.4, price_noise=0.1, mode="grid", map_width_km=10.0):
        self.grid = grid
        self.rates = np.asarray(rates, dtype=float)
        if self.rates.shape != (24, grid.size) or np.any(self.rates < 0):
            raise ConfigError(f"rates must be a non-negative (24, {grid.size}) array")
        dp = np.asarray(dest_probs, dtype=float)
        if dp.ndim == 2:
            dp = np.broadcast_to(dp, (24,) + dp.shape)
        if dp.shape != (24, grid.size, grid.size) or not np.allclose(dp.sum(-1), 1.0):
            raise ConfigError("destination probabilities must be row-stochastic")
        self.dest_cdf = np.cumsum(dp, axis=-1)
        self.base_fare = base_fare
        self.per_km = per_km
        self.km_per_step = km_per_step
        self.price_noise = price_noise
        self.mode = mode
        self.map_width_km = map_width_km
        self._jitter = 0.5 * hexworld.min_center_spacing(grid) if grid.size > 1 else 0.5

    def draw(self, step: int, p_sample: float, rng: np.random.Generator, steps_per_hour: int = 6) -> list[OrderEvent]:
        hour = (step // steps_per_hour) % 24
        counts = rng.poisson(self.rates[hour] * p_sample)
        out = []
        for cell in np.flatnonzero(counts):
            for _ in range(counts[cell]):
                u = rng.random()
                dest = int(np.searchsorted(self.dest_cdf[hour, cell], u * self.dest_cdf[hour, cell, -1], side="right"))
                dest = min(dest, self.grid.size - 1)
                origin, destination = int(cell), dest
                if self.mode == "grid":
                    km = hexworld.hex_steps(self.grid, origin, destination) * self.grid.cell_km
                else:
                    origin = self._point_in(origin, rng)
                    destination = self._point_in(destination, rng)
                    km = hexworld.distance(origin, destination, map_width_km=self.map_width_km)
                price = (self.base_fare + self.per_km * km) * float(np.exp(self.price_noise * rng.standard_normal()))
                duration = 1 + int(km // self.km_per_step)
                out.append(OrderEvent(step, origin, destination, price, duration))
        return out

    def _point_in(self, cell, rng) -> Coord:
        cx, cy = self.grid.centers[cell]
        ang = rng.uniform(0, 2 * math.pi)
        rad = self._jitter * math.sqrt(rng.random())
        return Coord(float(np.clip(cx + rad * math.cos(ang), 0, 1)), float(np.clip(cy + rad * math.sin(ang), 0, 1)))


def _parse_location(text: str):
    text = text.strip()
    if ";" in text:
        x, y = text.split(";")
        return Coord(float(x), float(y))
    return int(text)


def _format_location(loc) -> str:
    if isinstance(loc, Coord):
        return f"{loc.x!r};{loc.y!r}"
    return str(int(loc))


def read_order_events(path) -> list[OrderEvent]:
    """Read ``created_step,origin,destination,price,duration_steps`` records.

    Grid locations are cell ids; coordinates are written ``x;y``. Lines
    starting with ``#`` and a ``created_step`` header line are skipped.
    """
    events = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0].strip() == "created_step":
                continue
            if len(row) != 5:
                raise ConfigError(f"{path}: expected 5 fields, got {len(row)}: {row}")
            events.append(OrderEvent(int(row[0]), _parse_location(row[1]), _parse_location(row[2]),
                                     float(row[3]), int(row[4])))
    if not events:
        raise ConfigError(f"{path}: no order events")
    return events


def write_order_events(path, events) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["created_step", "origin", "destination", "price", "duration_steps"])
        for e in events:
            w.writerow([e.created_step, _format_location(e.origin), _format_location(e.destination),
                        repr(float(e.price)), e.duration_steps])


# -- game operations ----------------------------------------------------------


def generate_orders(state: WorldState, demand_model, p_sample: float, rng: np.random.Generator) -> list[Order]:
    """Create this step's new open orders and add them to ``state``."""
    if not 0.0 <= p_sample <= 1.0:
        raise ConfigError(f"p_sample must lie in [0, 1], got {p_sample}")
    if p_sample == 0.0:
        return []
    new = []
    for e in demand_model.draw(state.step, p_sample, rng):
        o = Order(state.next_order_id, e.origin, e.destination, e.price, e.duration_steps, state.step)
        o.origin_cell = state.cell_of_location(o.origin)
        o.dest_cell = state.cell_of_location(o.destination)
        state.next_order_id += 1
        state.orders[o.id] = o
        new.append(o)
    return new


def update_presence(state: WorldState, on_rate: float, off_rate: float, rng: np.random.Generator) -> WorldState:
    """Toggle offline drivers on and idle drivers off; on-trip drivers are untouched."""
    if not (0.0 <= on_rate <= 1.0 and 0.0 <= off_rate <= 1.0):
        raise ConfigError("presence rates must lie in [0, 1]")
    # one draw per driver keeps the stream aligned regardless of status mix
    u = rng.random(len(state.drivers))
    for d, ui in zip(state.drivers, u):
        if d.status is DriverStatus.OFFLINE and ui < on_rate:
            d.status = DriverStatus.IDLE
        elif d.status is DriverStatus.IDLE and ui < off_rate:
            d.status = DriverStatus.OFFLINE
    return state


def recount_tallies(state: WorldState) -> None:
    """Recompute #DD / #DS per cell and the origin-cell index of open orders."""
    n = state.grid.size
    demand = np.zeros(n, dtype=int)
    supply = np.zeros(n, dtype=int)
    by_cell = defaultdict(list)
    for o in state.orders.values():
        demand[o.origin_cell] += 1
        by_cell[o.origin_cell].append(o.id)
    for d in state.drivers:
        if d.status is DriverStatus.IDLE:
            supply[d.cell] += 1
    state.demand, state.supply = demand, supply
    state._by_cell = {c: sorted(ids) for c, ids in by_cell.items()}


def _coord_array(locs) -> np.ndarray:
    return np.array([[p.x, p.y] for p in locs], dtype=float).reshape(-1, 2)


def orders_near(state: WorldState, location, radius: float | None = None) -> list[Order]:
    """Open orders a driver standing at ``location`` can receive, sorted by id."""
    if state.mode == "grid":
        return [state.orders[i] for i in state._by_cell.get(int(location), [])]
    r = state.radius if radius is None else radius
    ids = sorted(state.orders)
    if not ids:
        return []
    pts = _coord_array([state.orders[i].origin for i in ids])
    d = np.hypot(pts[:, 0] - location.x, pts[:, 1] - location.y)
    return [state.orders[i] for i, di in zip(ids, d) if di <= r]


def candidate_orders(state: WorldState, driver_id: int) -> list[Order]:
    d = state.drivers[driver_id]
    if d.status is not DriverStatus.IDLE:
        raise DomainError(f"driver {driver_id} is {d.status.value}; only idle online drivers get candidates")
    return orders_near(state, d.location)


def destination_potential(order: Order, state: WorldState) -> int:
    """Demand-supply gap at the destination, gated on a positive gap at the origin."""
    gap_origin = int(state.demand[order.origin_cell] - state.supply[order.origin_cell])
    if gap_origin <= 0:
        return 0
    return int(state.demand[order.dest_cell] - state.supply[order.dest_cell])


def reward(order: Order, pickup_time: float, state: WorldState, w: RewardWeights) -> float:
    if pickup_time < 0:
        raise DomainError("pick-up time cannot be negative")
    return order.price + w.alpha_dp * destination_potential(order, state) + w.alpha_pickup * pickup_time


def resolve_conflicts(proposals: dict[int, int], pools: dict[int, list[int]],
                      reselect: Callable[[int, list[int]], int | None],
                      rng: np.random.Generator) -> dict[int, int]:
    """Turn possibly-colliding driver->order proposals into an injective assignment.

    Each contested order goes to a uniformly drawn proposer; the others call
    ``reselect(driver, pool)`` with their candidate pool minus every order
    already taken, and may return ``None`` to stay idle.
    """
    taken: dict[int, int] = {}
    pending = dict(proposals)
    for d, o in pending.items():
        if o not in pools.get(d, ()):
            raise DomainError(f"driver {d} proposed order {o} outside its candidate set")
    while pending:
        by_order = defaultdict(list)
        for d, o in pending.items():
            by_order[o].append(d)
        losers = []
        for o in sorted(by_order):
            ds = sorted(by_order[o])
            winner = ds[int(rng.integers(len(ds)))] if len(ds) > 1 else ds[0]
            taken[o] = winner
            losers.extend(x for x in ds if x != winner)
        pending = {}
        for d in sorted(losers):
            pool = [o for o in pools[d] if o not in taken]
            if not pool:
                continue
            choice = reselect(d, pool)
            if choice is None:
                continue
            if choice not in pool:
                raise DomainError(f"reselection for driver {d} returned order {choice} outside the updated pool")
            pending[d] = choice
    return {d: o for o, d in taken.items()}


def maybe_cancel(pickup_time: float, slope: float, rng: np.random.Generator) -> bool:
    """Cancel with probability ``min(1, slope * pickup_time)``."""
    if pickup_time < 0 or slope < 0:
        raise DomainError("pick-up time and slope must be non-negative")
    p = min(1.0, slope * pickup_time)
    # always consume one draw so the stream does not depend on p
    u = rng.random()
    return bool(u < p)


def metrics_report(history: list[StepMetrics], steps_per_hour: int = 60 // STEP_MINUTES) -> dict:
    """Daily summary: GMV, ORR, ADP, AAT (minutes), and 24 hourly income buckets."""
    if not history:
        raise DomainError("metrics_report needs at least one step")
    # fsum over individual prices is order-independent, so it matches an event-log recount exactly
    gmv = math.fsum(p for m in history for p in (m.prices or (m.gmv,)))
    generated = sum(m.orders_generated for m in history)
    served = sum(m.orders_served for m in history)
    hourly = [0.0] * 24
    for m in history:
        hourly[m.hour(steps_per_hour)] += m.gmv
    return {
        "GMV": gmv,
        "ORR": served / generated if generated else 0.0,
        "ORR_undefined": generated == 0,
        "ADP": sum(m.dp_sum for m in history) / served if served else 0.0,
        "AAT": sum(m.pickup_time_sum for m in history) / served if served else 0.0,
        "orders_generated": generated,
        "orders_served": served,
        "orders_cancelled": sum(m.orders_cancelled for m in history),
        "hourly_income": hourly,
    }


# -- simulator ----------------------------------------------------------------


class Simulator:
    """Runs one simulated day over a :class:`WorldState`.

    ``streams`` maps the names ``demand``, ``presence``, ``conflict``,
    ``cancellation`` and ``init`` to independent generators.
    """

    def __init__(self, config: SimConfig, demand_model, streams: dict[str, np.random.Generator],
                 driver_weights=None):
        self.config = config
        self.grid = config.grid()
        self.demand_model = demand_model
        self.streams = streams
        self.weights = config.weights
        self.history: list[StepMetrics] = []
        self.events: list[dict] = []
        self.gap_snapshots: list[np.ndarray] = []
        self._pending_metrics: StepMetrics | None = None
        self._in_flight: dict[int, Order] = {}
        self._landed: list[float] = []  # completion prices credited to the next metric record
        self.state = self._initial_state(driver_weights)

    def _initial_state(self, driver_weights) -> WorldState:
        cfg, rng = self.config, self.streams["init"]
        n = self.grid.size
        w = np.ones(n) if driver_weights is None else np.asarray(driver_weights, dtype=float)
        cells = rng.choice(n, size=cfg.fleet_size, p=w / w.sum())
        online = rng.random(cfg.fleet_size) < cfg.initially_online
        drivers = []
        for i, (c, on) in enumerate(zip(cells, online)):
            c = int(c)
            if cfg.mode == "grid":
                loc = c
            else:
                loc = self.grid.center(c)
            status = DriverStatus.IDLE if on else DriverStatus.OFFLINE
            drivers.append(Driver(i, loc, status, cell=c))
        return WorldState(0, cfg.mode, self.grid, drivers, radius=cfg.radius, map_width_km=cfg.map_width_km)

    @property
    def done(self) -> bool:
        return self.state.step >= self.config.steps_per_day

    @property
    def steps_per_hour(self) -> int:
        return 60 // self.config.step_minutes

    def log(self, **record) -> None:
        if self.config.log_events:
            self.events.append(record)

    def begin_step(self) -> StepMetrics:
        """Presence toggles, new orders, tallies. Returns the step's metric record."""
        if self.done:
            raise DomainError("the simulated day is over")
        s, cfg = self.state, self.config
        m = self._new_metrics()
        update_presence(s, cfg.on_rate, cfg.off_rate, self.streams["presence"])
        new = generate_orders(s, self.demand_model, cfg.p_sample, self.streams["demand"])
        m.orders_generated = len(new)
        recount_tallies(s)
        self.gap_snapshots.append(s.demand - s.supply)
        self._pending_metrics = m
        return m

    def idle_drivers(self) -> list[int]:
        return [d.id for d in self.state.drivers if d.status is DriverStatus.IDLE]

    def candidates(self, driver_id: int) -> list[Order]:
        return candidate_orders(self.state, driver_id)

    def observation(self, driver_id: int) -> Observation:
        d = self.state.drivers[driver_id]
        return Observation(d.location, self.state.step, d.status is DriverStatus.ON_TRIP)

    def pickup_km(self, driver: Driver, order: Order) -> float:
        if self.config.mode == "grid":
            return 0.0
        return hexworld.distance(driver.location, order.origin, map_width_km=self.config.map_width_km)

    def pickup_minutes(self, driver: Driver, order: Order) -> float:
        return 60.0 * self.pickup_km(driver, order) / self.config.speed_kmh

    def step(self, assignment: dict[int, int]) -> tuple[dict[int, float], StepMetrics]:
        """Apply a conflict-free assignment, then advance the clock one step."""
        s, cfg = self.state, self.config
        m = self._pending_metrics
        if m is None:
            m = self._new_metrics()
        self._pending_metrics = None
        if len(set(assignment.values())) != len(assignment):
            raise DomainError("assignment gives one order to several drivers")
        for did, oid in assignment.items():
            if not 0 <= did < len(s.drivers):
                raise DomainError(f"unknown driver {did}")
            if oid not in s.orders:
                raise DomainError(f"unknown or closed order {oid}")
            if s.drivers[did].status is not DriverStatus.IDLE:
                raise DomainError(f"driver {did} is not idle")

        rewards: dict[int, float] = {}
        for did in sorted(assignment):
            d, o = s.drivers[did], s.orders[assignment[did]]
            pickup_min = self.pickup_minutes(d, o)
            pickup_steps = int(round(pickup_min / cfg.step_minutes))
            o.dp = destination_potential(o, s)
            o.move_to(OrderStatus.ASSIGNED)
            del s.orders[o.id]
            self.log(event="assign", step=s.step, driver=did, order=o.id, price=o.price, dp=o.dp,
                     pickup_minutes=pickup_min)
            if cfg.mode == "coordinate" and maybe_cancel(pickup_min, cfg.cancel_slope, self.streams["cancellation"]):
                o.move_to(OrderStatus.CANCELLED)
                m.orders_cancelled += 1
                rewards[did] = self.weights.alpha_pickup * pickup_min / cfg.step_minutes
                self.log(event="cancel", step=s.step, driver=did, order=o.id)
                continue
            o.move_to(OrderStatus.SERVING)
            o.pickup_steps = pickup_steps
            rewards[did] = reward(o, pickup_min / cfg.step_minutes, s, self.weights)
            d.status = DriverStatus.ON_TRIP
            d.current_order = o.id
            d.trip_end_step = s.step + pickup_steps + o.duration_steps
            self._in_flight[o.id] = o
            m.orders_served += 1
            m.dp_sum += o.dp
            m.pickup_time_sum += pickup_min

        # unserved orders age out
        for oid in sorted(s.orders):
            o = s.orders[oid]
            if s.step + 1 - o.created_step >= cfg.patience:
                o.move_to(OrderStatus.EXPIRED)
                del s.orders[oid]
                m.orders_expired += 1

        counts = s.counts()
        m.idle, m.on_trip, m.offline = counts["idle"], counts["on_trip"], counts["offline"]
        self.history.append(m)

        s.step += 1
        self._complete_trips()
        return rewards, m

    def _complete_trips(self) -> None:
        s = self.state
        if s.step >= self.config.steps_per_day:
            return
        for d in s.drivers:
            if d.status is DriverStatus.ON_TRIP and d.trip_end_step == s.step:
                o = self._in_flight.pop(d.current_order)
                o.move_to(OrderStatus.COMPLETED)
                d.location = o.destination
                d.cell = o.dest_cell
                d.income += o.price
                d.status = DriverStatus.IDLE
                d.current_order = None
                d.trip_end_step = None
                self._landed.append(o.price)
                self.log(event="complete", step=s.step, driver=d.id, order=o.id, price=o.price)

    def _new_metrics(self) -> StepMetrics:
        prices, self._landed = self._landed, []
        return StepMetrics(self.state.step, gmv=math.fsum(prices), prices=prices)

    def run_step(self, dispatcher) -> tuple[dict[int, int], dict[int, float], StepMetrics]:
        self.begin_step()
        assignment = dispatcher.dispatch(self)
        rewards, m = self.step(assignment)
        return assignment, rewards, m

    def summary(self) -> dict:
        return metrics_report(self.history, self.steps_per_hour)

    def write_events(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.events:
                fh.write(json.dumps(rec) + "\n")


def recount_gmv(events) -> float:
    """Independent GMV from an event stream: prices of completed orders."""
    cancelled = {e["order"] for e in events if e["event"] == "cancel"}
    return math.fsum(e["price"] for e in events if e["event"] == "complete" and e["order"] not in cancelled)


def read_events(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
