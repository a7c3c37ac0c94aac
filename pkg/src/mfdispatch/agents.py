"""Learning dispatchers: Q-IOD, IOD and COD.

All drivers share one actor (ranking network) and one critic. The actor scores
every (observation, candidate order) pair; a Boltzmann selector turns the
scores into a choice. COD feeds the neighborhood mean action into the critic
and bootstraps with the mean-field value of the next observation.

Decision intervals are semi-Markov: a transition runs from the step a driver
takes an order to the step it is idle again, and the bootstrap term is
discounted by ``gamma ** elapsed_steps``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import neuralnet as nn
from .hexworld import DomainError
from .neuralnet import MlpParams, NumericError
from .simcore import DriverStatus, Simulator, WorldState, orders_near, resolve_conflicts

VARIANTS = ("IOD", "COD", "Q-IOD")
OBS_DIM = 5  # x, y, sin(day phase), cos(day phase), on-trip flag
ACTOR_ACTION_DIM = 4  # origin x, y, destination x, y
CRITIC_ACTION_DIM = 3  # destination x, y, pick-up distance


class UnderfilledError(RuntimeError):
    """Raised when a replay sample asks for more experiences than are stored."""


# -- embeddings -----------------------------------------------------------------


class Embedder:
    """Maps simulator entities to fixed-length real vectors in [0, 1] (or [-1, 1] for time)."""

    def __init__(self, sim: Simulator):
        self.mode = sim.config.mode
        self.grid = sim.grid
        self.steps_per_day = sim.config.steps_per_day
        self.map_width_km = sim.config.map_width_km
        # pick-up distances are divided by this before entering the critic
        self.km_scale = self.map_width_km if self.mode == "coordinate" else self.grid.cell_km * max(self.grid.rows, self.grid.cols)

    def xy(self, loc) -> tuple[float, float]:
        if self.mode == "grid":
            x, y = self.grid.centers[int(loc)]
            return float(x), float(y)
        return loc.x, loc.y

    def observation(self, loc, step: int, on_trip: bool = False) -> np.ndarray:
        x, y = self.xy(loc)
        phase = 2.0 * math.pi * (step % self.steps_per_day) / self.steps_per_day
        return np.array([x, y, math.sin(phase), math.cos(phase), float(on_trip)])

    def actor_action(self, order) -> np.ndarray:
        return np.array(self.xy(order.origin) + self.xy(order.destination))

    def critic_action(self, order, pickup_km: float) -> np.ndarray:
        return np.array(self.xy(order.destination) + (pickup_km / self.km_scale,))


def mean_action_feature(mean_action) -> np.ndarray:
    # squashes the unbounded driver/order ratio into [0, 1)
    a = np.asarray(mean_action, dtype=float)
    return a / (1.0 + a)


# -- selector ---------------------------------------------------------------------


def boltzmann_probs(values, beta: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise DomainError("no candidates to select from")
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite ranking values")
    if beta < 0:
        raise DomainError("beta must be non-negative")
    z = beta * (v - v.max())
    e = np.exp(z)
    return e / e.sum()


def boltzmann_select(values, beta: float, rng: np.random.Generator) -> tuple[int, np.ndarray]:
    """Sample an index from softmax(beta * values)."""
    p = boltzmann_probs(values, beta)
    idx = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
    return min(idx, len(p) - 1), p


def temperature(episode: int, horizon: int, start: float = 1.0, end: float = 0.01) -> float:
    """Exponential decay from ``start`` to ``end`` over ``horizon`` episodes, then flat.

    The selector uses ``beta = 1 / temperature``.
    """
    if episode < 0:
        raise DomainError("episode must be non-negative")
    if horizon <= 0 or episode >= horizon:
        return end
    return start * (end / start) ** (episode / horizon)


# -- mean action --------------------------------------------------------------------


def mean_action(state: WorldState, driver_id: int) -> float:
    """Drivers in the neighborhood divided by orders the driver can receive.

    The neighborhood is the driver's cell in grid mode and a disc of twice the
    receiving radius in coordinate mode. The driver counts itself. The
    denominator is floored at one.
    """
    me = state.drivers[driver_id]
    if state.mode == "grid":
        drivers = int(state.supply[me.cell]) if state.supply is not None else sum(
            1 for d in state.drivers if d.status is DriverStatus.IDLE and d.cell == me.cell)
        orders = len(orders_near(state, me.location))
    else:
        idle = [d for d in state.drivers if d.status is DriverStatus.IDLE]
        if idle:
            pts = np.array([[d.location.x, d.location.y] for d in idle])
            drivers = int(np.sum(np.hypot(pts[:, 0] - me.location.x, pts[:, 1] - me.location.y) <= 2 * state.radius))
        else:
            drivers = 0
        orders = len(orders_near(state, me.location))
    if me.status is not DriverStatus.IDLE:
        drivers += 1
    return drivers / max(orders, 1)


# -- experience replay --------------------------------------------------------------


@dataclass
class Experience:
    obs: np.ndarray
    action: np.ndarray  # critic action embedding of the taken order
    reward: float
    next_obs: np.ndarray
    next_actor_cands: np.ndarray  # (m', ACTOR_ACTION_DIM)
    next_critic_cands: np.ndarray  # (m', CRITIC_ACTION_DIM)
    next_mean_action: float
    mean_action: float = 0.0
    actor_cands: np.ndarray | None = None  # candidate set at decision time
    critic_cands: np.ndarray | None = None
    elapsed: int = 1


class ReplayBuffer:
    def __init__(self, capacity: int = 500_000):
        if capacity < 1:
            raise DomainError("capacity must be positive")
        self.capacity = capacity
        self._items: list = []
        self._head = 0

    def __len__(self):
        return len(self._items)

    def push(self, item) -> None:
        if len(self._items) < self.capacity:
            self._items.append(item)
        else:
            self._items[self._head] = item
            self._head = (self._head + 1) % self.capacity

    def items(self) -> list:
        """Stored items, oldest first."""
        return self._items[self._head:] + self._items[:self._head]

    def sample(self, k: int, rng: np.random.Generator) -> list:
        if k > len(self._items):
            raise UnderfilledError(f"asked for {k} experiences, buffer holds {len(self._items)}")
        idx = rng.choice(len(self._items), size=k, replace=False)
        return [self._items[i] for i in idx]


def replay_push(buffer: ReplayBuffer, item) -> None:
    buffer.push(item)


def replay_sample(buffer: ReplayBuffer, k: int, rng: np.random.Generator) -> list:
    return buffer.sample(k, rng)


# -- networks -----------------------------------------------------------------------


@dataclass
class AgentConfig:
    variant: str = "COD"
    actor_hidden: tuple = (32, 16)
    critic_hidden: tuple = (64, 32)
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    gamma: float = 0.95
    batch_size: int = 256
    update_every: int = 200  # new experiences between update rounds
    updates_per_round: int = 1
    buffer_capacity: int = 500_000
    tau_critic: float = 0.01
    tau_actor: float = 0.01
    temperature_start: float = 1.0
    temperature_end: float = 0.01
    reward_scale: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise DomainError(f"unknown learning variant {self.variant!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise DomainError("gamma must lie in [0, 1]")
        self.actor_hidden = tuple(self.actor_hidden)
        self.critic_hidden = tuple(self.critic_hidden)

    @property
    def uses_mean_action(self) -> bool:
        return self.variant == "COD"

    @property
    def critic_input_dim(self) -> int:
        return OBS_DIM + CRITIC_ACTION_DIM + (1 if self.uses_mean_action else 0)


PAPER_ACTOR_HIDDEN = (256, 128, 64)
PAPER_CRITIC_HIDDEN = (512, 256, 128, 64)


@dataclass
class AgentNets:
    critic: MlpParams
    critic_target: MlpParams
    critic_opt: nn.AdamState
    actor: MlpParams | None = None
    actor_target: MlpParams | None = None
    actor_opt: nn.AdamState | None = None

    @classmethod
    def create(cls, cfg: AgentConfig, rng: np.random.Generator) -> AgentNets:
        critic = nn.init_mlp((cfg.critic_input_dim,) + cfg.critic_hidden + (1,), rng, "relu")
        actor = None
        if cfg.variant != "Q-IOD":
            actor = nn.init_mlp((OBS_DIM + ACTOR_ACTION_DIM,) + cfg.actor_hidden + (1,), rng, "sigmoid")
        return cls(
            critic, critic.copy(), nn.AdamState.for_params(critic),
            actor, actor.copy() if actor else None, nn.AdamState.for_params(actor) if actor else None,
        )

    def roles(self) -> dict[str, MlpParams]:
        out = {"critic": self.critic, "critic_target": self.critic_target}
        if self.actor is not None:
            out.update(actor=self.actor, actor_target=self.actor_target)
        return out

    def save(self, directory, cfg: AgentConfig) -> dict[str, str]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        paths = {}
        opts = {"critic": self.critic_opt, "actor": self.actor_opt}
        for role, params in self.roles().items():
            p = d / f"{role}.json"
            nn.save_checkpoint(p, params, opts.get(role))
            paths[role] = str(p)
        meta = d / "agent.json"
        meta.write_text(json.dumps({"version": nn.CHECKPOINT_VERSION, "config": asdict(cfg)}, sort_keys=True))
        paths["meta"] = str(meta)
        return paths

    @classmethod
    def load(cls, directory, cfg: AgentConfig) -> AgentNets:
        d = Path(directory)
        saved = json.loads((d / "agent.json").read_text())["config"]
        if saved["variant"] != cfg.variant or tuple(saved["actor_hidden"]) != cfg.actor_hidden \
                or tuple(saved["critic_hidden"]) != cfg.critic_hidden:
            raise DomainError(f"checkpoint in {d} was trained with a different architecture")
        critic, copt = nn.load_checkpoint(d / "critic.json")
        critic_t, _ = nn.load_checkpoint(d / "critic_target.json")
        actor = actor_t = aopt = None
        if cfg.variant != "Q-IOD":
            actor, aopt = nn.load_checkpoint(d / "actor.json")
            actor_t, _ = nn.load_checkpoint(d / "actor_target.json")
        return cls(critic, critic_t, copt, actor, actor_t, aopt)


# -- batched helpers ------------------------------------------------------------------


def _segments(counts: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(len(counts)), counts)


def _segment_softmax(values: np.ndarray, seg: np.ndarray, n: int, beta: float) -> np.ndarray:
    top = np.full(n, -np.inf)
    np.maximum.at(top, seg, values)
    e = np.exp(beta * (values - top[seg]))
    return e / np.bincount(seg, weights=e, minlength=n)[seg]


def _segment_weighted_mean(probs, q, seg, n) -> np.ndarray:
    # anchored on each segment's first entry so equal q values give exactly q
    counts = np.bincount(seg, minlength=n)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    anchor = np.zeros(n)
    has = counts > 0
    anchor[has] = q[first[has]]
    return anchor + np.bincount(seg, weights=probs * (q - anchor[seg]), minlength=n)


def _critic_inputs(obs, actions, mean_actions, cfg: AgentConfig) -> np.ndarray:
    cols = [obs, actions]
    if cfg.uses_mean_action:
        cols.append(mean_action_feature(mean_actions).reshape(-1, 1))
    return np.hstack(cols)


def rank(actor: MlpParams, obs: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Ranking value for every (observation, candidate) pair; one row per candidate."""
    cands = np.atleast_2d(np.asarray(candidates, dtype=float))
    if cands.shape[0] == 0 or cands.size == 0:
        raise DomainError("cannot rank an empty candidate list")
    x = np.hstack([np.broadcast_to(obs, (cands.shape[0], len(obs))), cands])
    return nn.forward(actor, x)[:, 0]


def critic_values(critic: MlpParams, cfg: AgentConfig, obs, critic_cands, mean_act: float) -> np.ndarray:
    cands = np.atleast_2d(critic_cands)
    m = cands.shape[0]
    x = _critic_inputs(np.broadcast_to(obs, (m, len(obs))), cands, np.full(m, mean_act), cfg)
    return nn.forward(critic, x)[:, 0]


def _next_values(nets: AgentNets, cfg: AgentConfig, batch: list[Experience], beta: float) -> np.ndarray:
    """Bootstrap value of each experience's next observation under the target networks."""
    n = len(batch)
    counts = np.array([len(e.next_critic_cands) for e in batch])
    out = np.zeros(n)
    if counts.sum() == 0:
        return out
    seg = _segments(counts)
    obs = np.vstack([e.next_obs for e in batch])[seg]
    ccands = np.vstack([e.next_critic_cands for e in batch if len(e.next_critic_cands)])
    mas = np.array([e.next_mean_action for e in batch])[seg]
    q = nn.forward(nets.critic_target, _critic_inputs(obs, ccands, mas, cfg))[:, 0]
    has = counts > 0
    if cfg.variant == "Q-IOD":
        top = np.full(n, -np.inf)
        np.maximum.at(top, seg, q)
        out[has] = top[has]
        return out
    acands = np.vstack([e.next_actor_cands for e in batch if len(e.next_actor_cands)])
    mu = nn.forward(nets.actor_target, np.hstack([obs, acands]))[:, 0]
    if cfg.variant == "IOD":
        # greedy candidate under the target actor; ties -> first listed
        order = np.lexsort((np.arange(len(mu)), -mu, seg))
        first = np.concatenate([[0], np.cumsum(counts)[:-1]])
        pick = order[first[has]]
        out[has] = q[pick]
        return out
    probs = _segment_softmax(mu, seg, n, beta)
    out[has] = _segment_weighted_mean(probs, q, seg, n)[has]
    return out


def critic_targets(nets: AgentNets, cfg: AgentConfig, batch: list[Experience], beta: float) -> np.ndarray:
    r = np.array([e.reward for e in batch])
    disc = cfg.gamma ** np.array([e.elapsed for e in batch], dtype=float)
    return r + disc * _next_values(nets, cfg, batch, beta)


def critic_target_iod(nets: AgentNets, e: Experience, gamma: float) -> float:
    """``r + gamma**elapsed * Q-(o', a*)`` with ``a*`` the target actor's top-ranked candidate."""
    cfg = AgentConfig(variant="IOD", gamma=gamma)
    return float(critic_targets(nets, cfg, [e], beta=1.0)[0])


def mf_value(nets: AgentNets, next_obs, next_actor_cands, next_critic_cands, next_mean_action: float,
             beta: float) -> float:
    """Mean-field value: sum over next candidates of pi-(a'|o') * Q-(o', (mean action, a'))."""
    if len(next_critic_cands) == 0:
        return 0.0
    cfg = AgentConfig(variant="COD")
    e = Experience(np.zeros(OBS_DIM), np.zeros(CRITIC_ACTION_DIM), 0.0, np.asarray(next_obs, dtype=float),
                   np.atleast_2d(next_actor_cands), np.atleast_2d(next_critic_cands), next_mean_action)
    return float(_next_values(nets, cfg, [e], beta)[0])


def critic_update(nets: AgentNets, cfg: AgentConfig, batch: list[Experience], beta: float) -> float:
    """One Adam step on the squared TD error. Returns the pre-step loss."""
    if not batch:
        raise DomainError("empty batch")
    y = critic_targets(nets, cfg, batch, beta)
    x = _critic_inputs(np.vstack([e.obs for e in batch]), np.vstack([e.action for e in batch]),
                       np.array([e.mean_action for e in batch]), cfg)
    q = nn.forward(nets.critic, x)[:, 0]
    err = q - y
    loss = float(np.mean(err**2))
    if not math.isfinite(loss):
        raise NumericError("critic loss is not finite")
    grads, _ = nn.backward(nets.critic, x, (2.0 * err / len(batch))[:, None])
    nets.critic_opt, nets.critic = nn.adam_step(nets.critic_opt, nets.critic, grads, cfg.critic_lr)
    return loss


def actor_objective_grad(nets: AgentNets, cfg: AgentConfig, batch: list[Experience], beta: float):
    """Mean over the batch of sum_a pi(a|o) Q(o, (mean action, a)) and its actor gradient.

    Q is held fixed; only the Boltzmann weights depend on the actor.
    """
    usable = [e for e in batch if e.actor_cands is not None and len(e.actor_cands)]
    if not usable:
        return 0.0, None
    n = len(usable)
    counts = np.array([len(e.actor_cands) for e in usable])
    seg = _segments(counts)
    obs = np.vstack([e.obs for e in usable])[seg]
    acands = np.vstack([e.actor_cands for e in usable])
    ccands = np.vstack([e.critic_cands for e in usable])
    mas = np.array([e.mean_action for e in usable])[seg]
    q = nn.forward(nets.critic, _critic_inputs(obs, ccands, mas, cfg))[:, 0]
    xa = np.hstack([obs, acands])
    mu = nn.forward(nets.actor, xa)[:, 0]
    probs = _segment_softmax(mu, seg, n, beta)
    value = _segment_weighted_mean(probs, q, seg, n)
    # d/dmu_j sum_k pi_k q_k = beta * pi_j * (q_j - sum_k pi_k q_k)
    dmu = beta * probs * (q - value[seg])
    grads, _ = nn.backward(nets.actor, xa, (-dmu / n)[:, None])
    return float(value.mean()), grads


def actor_update(nets: AgentNets, cfg: AgentConfig, batch: list[Experience], beta: float) -> float:
    """Softmax policy-gradient ascent step. No-op for Q-IOD."""
    if cfg.variant == "Q-IOD":
        return 0.0
    if not batch:
        raise DomainError("empty batch")
    objective, grads = actor_objective_grad(nets, cfg, batch, beta)
    if grads is None:
        return objective
    if not all(np.all(np.isfinite(a)) for a in grads.arrays()):
        raise NumericError("actor gradient is not finite")
    nets.actor_opt, nets.actor = nn.adam_step(nets.actor_opt, nets.actor, grads, cfg.actor_lr)
    return objective


def soft_update_targets(nets: AgentNets, cfg: AgentConfig) -> None:
    nets.critic_target = nn.soft_update(nets.critic_target, nets.critic, cfg.tau_critic)
    if nets.actor is not None:
        nets.actor_target = nn.soft_update(nets.actor_target, nets.actor, cfg.tau_actor)


# -- dispatcher ------------------------------------------------------------------------


@dataclass
class _Decision:
    obs: np.ndarray
    order_ids: list[int]
    actor_cands: np.ndarray
    critic_cands: np.ndarray
    values: np.ndarray
    mean_action: float


@dataclass
class _Pending:
    exp: Experience
    start_step: int
    ready_step: int


@dataclass
class TrainStats:
    updates: int = 0
    critic_loss: list = field(default_factory=list)
    actor_objective: list = field(default_factory=list)


class LearningDispatcher:
    """Shared-parameter dispatcher for every driver; optionally learns online."""

    learning = True

    def __init__(self, cfg: AgentConfig, nets: AgentNets, select_rng: np.random.Generator,
                 train_rng: np.random.Generator | None = None, train: bool = False):
        self.cfg = cfg
        self.name = cfg.variant
        self.nets = nets
        self.select_rng = select_rng
        self.train_rng = train_rng
        self.train = train
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.beta = 1.0 / cfg.temperature_start
        self.stats = TrainStats()
        self._pending: dict[int, _Pending] = {}
        self._fresh = 0
        self._embedder: Embedder | None = None

    def set_temperature(self, t: float) -> None:
        self.beta = 1.0 / t

    # Algorithm order per step: close finished transitions (store, learn), then act.
    def dispatch(self, sim: Simulator) -> dict[int, int]:
        if self._embedder is None or self._embedder.grid is not sim.grid:
            self._embedder = Embedder(sim)
        if self.train:
            self._close_transitions(sim, terminal=False)
        decisions = self._decide(sim)
        if not decisions:
            return {}
        pools = {d: dec.order_ids for d, dec in decisions.items()}
        proposals = {}
        for d, dec in decisions.items():
            idx, _ = boltzmann_select(dec.values, self.beta, self.select_rng)
            proposals[d] = dec.order_ids[idx]

        def reselect(d, pool):
            dec = decisions[d]
            keep = [i for i, o in enumerate(dec.order_ids) if o in set(pool)]
            idx, _ = boltzmann_select(dec.values[keep], self.beta, self.select_rng)
            return dec.order_ids[keep[idx]]

        assignment = resolve_conflicts(proposals, pools, reselect, self.select_rng)
        self._last = (decisions, assignment, sim.state.step)
        return assignment

    def observe(self, sim: Simulator, assignment: dict[int, int], rewards: dict[int, float]) -> None:
        """Open a transition for every driver that took an order this step."""
        if not self.train:
            return
        decisions, _, step = self._last
        for d, oid in assignment.items():
            dec = decisions[d]
            j = dec.order_ids.index(oid)
            drv = sim.state.drivers[d]
            ready = drv.trip_end_step if drv.status is DriverStatus.ON_TRIP else step + 1
            exp = Experience(dec.obs, dec.critic_cands[j], self.cfg.reward_scale * rewards[d], None, None, None,
                             0.0, dec.mean_action, dec.actor_cands, dec.critic_cands)
            self._pending[d] = _Pending(exp, step, ready)

    def end_episode(self, sim: Simulator) -> None:
        if self.train:
            self._close_transitions(sim, terminal=True)
        self._pending.clear()

    def _decide(self, sim: Simulator) -> dict[int, _Decision]:
        s, emb = sim.state, self._embedder
        rows_obs, rows_act, owners = [], [], []
        decisions = {}
        for d in sim.idle_drivers():
            cands = sim.candidates(d)
            if not cands:
                continue
            drv = s.drivers[d]
            obs = emb.observation(drv.location, s.step, False)
            acts = np.array([emb.actor_action(o) for o in cands])
            crit = np.array([emb.critic_action(o, sim.pickup_km(drv, o)) for o in cands])
            ma = mean_action(s, d) if self.cfg.uses_mean_action or self.train else 0.0
            decisions[d] = _Decision(obs, [o.id for o in cands], acts, crit, None, ma)
        if not decisions:
            return {}
        for d, dec in decisions.items():
            m = len(dec.order_ids)
            rows_obs.append(np.broadcast_to(dec.obs, (m, OBS_DIM)))
            rows_act.append(dec.actor_cands if self.nets.actor is not None else dec.critic_cands)
            owners.append(np.full(m, d))
        obs = np.vstack(rows_obs)
        acts = np.vstack(rows_act)
        if self.nets.actor is not None:
            values = nn.forward(self.nets.actor, np.hstack([obs, acts]))[:, 0]
        else:
            mas = np.concatenate([np.full(len(dec.order_ids), dec.mean_action) for dec in decisions.values()])
            values = nn.forward(self.nets.critic, _critic_inputs(obs, acts, mas, self.cfg))[:, 0]
        start = 0
        for dec in decisions.values():
            m = len(dec.order_ids)
            dec.values = values[start:start + m]
            start += m
        return decisions

    def _close_transitions(self, sim: Simulator, terminal: bool) -> None:
        s, emb = sim.state, self._embedder
        for d in sorted(self._pending):
            p = self._pending[d]
            drv = s.drivers[d]
            if not terminal and (s.step < p.ready_step or drv.status is DriverStatus.ON_TRIP):
                continue
            e = p.exp
            e.elapsed = max(1, s.step - p.start_step) if not terminal else max(1, p.ready_step - p.start_step)
            if terminal:
                e.next_obs = emb.observation(drv.location, s.step, drv.status is DriverStatus.ON_TRIP)
                e.next_actor_cands = np.zeros((0, ACTOR_ACTION_DIM))
                e.next_critic_cands = np.zeros((0, CRITIC_ACTION_DIM))
                e.next_mean_action = 0.0
            else:
                cands = orders_near(s, drv.location)
                e.next_obs = emb.observation(drv.location, s.step, False)
                e.next_actor_cands = np.array([emb.actor_action(o) for o in cands]).reshape(-1, ACTOR_ACTION_DIM)
                e.next_critic_cands = np.array([emb.critic_action(o, sim.pickup_km(drv, o)) for o in cands]
                                               ).reshape(-1, CRITIC_ACTION_DIM)
                e.next_mean_action = mean_action(s, d)
            del self._pending[d]
            self.buffer.push(e)
            self._fresh += 1
            if self._fresh >= self.cfg.update_every and len(self.buffer) >= self.cfg.batch_size:
                self._fresh = 0
                self.learn()

    def learn(self) -> None:
        cfg = self.cfg
        for _ in range(cfg.updates_per_round):
            batch = self.buffer.sample(cfg.batch_size, self.train_rng)
            self.stats.critic_loss.append(critic_update(self.nets, cfg, batch, self.beta))
            self.stats.actor_objective.append(actor_update(self.nets, cfg, batch, self.beta))
            self.stats.updates += 1
        soft_update_targets(self.nets, cfg)
