"""Mean-field Q-learning with linear function approximation on small Markov games.

Each agent's Q is ``omega(s, (abar, a)) @ phi``. The TD rule is

    delta = r + gamma * E_{a' ~ boltzmann(Q(s', abar, .), T)} Q(s', abar, a') - Q(s, abar, a)
    phi  <- phi + alpha * delta * omega(s, abar, a)

and the averaged dynamics are the linear ODE ``dphi/dt = A phi + b`` whose rest
point ``-A^-1 b`` and the sign of the symmetric part of ``A`` are reported.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .hexworld import DomainError


class SingularityError(np.linalg.LinAlgError):
    """Raised when the ODE matrix is too ill-conditioned to solve."""


# -- games and bases ----------------------------------------------------------


@dataclass
class SmallGame:
    """Fully observable Markov game with enumerated states and joint actions.

    ``transitions[s, j, s']`` and ``rewards[i, s, j]`` are indexed by the flat
    joint-action id ``j`` (row-major over agents).
    """

    n_states: int
    n_agents: int
    n_actions: int
    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float
    bound: float = field(init=False)

    def __post_init__(self):
        nj = self.n_actions**self.n_agents
        self.transitions = np.asarray(self.transitions, dtype=float)
        self.rewards = np.asarray(self.rewards, dtype=float)
        if self.transitions.shape != (self.n_states, nj, self.n_states):
            raise DomainError(f"transitions must have shape {(self.n_states, nj, self.n_states)}")
        if not np.allclose(self.transitions.sum(-1), 1.0) or np.any(self.transitions < 0):
            raise DomainError("transition rows must be probability vectors")
        if self.rewards.shape != (self.n_agents, self.n_states, nj):
            raise DomainError(f"rewards must have shape {(self.n_agents, self.n_states, nj)}")
        if not 0.0 <= self.gamma < 1.0:
            raise DomainError("gamma must lie in [0, 1)")
        self.bound = float(np.max(np.abs(self.rewards))) if self.rewards.size else 0.0

    @property
    def n_joint(self) -> int:
        return self.n_actions**self.n_agents

    def joint(self, j: int) -> tuple[int, ...]:
        return tuple(int(x) for x in np.unravel_index(j, (self.n_actions,) * self.n_agents))

    def joint_id(self, actions) -> int:
        return int(np.ravel_multi_index(tuple(actions), (self.n_actions,) * self.n_agents))

    def mean_levels(self) -> list[float]:
        """Possible values of the mean of the other agents' actions."""
        k = self.n_agents - 1
        if k == 0:
            return [0.0]
        top = (self.n_actions - 1) * k
        return [v / top if top else 0.0 for v in range(top + 1)]

    def mean_of_others(self, actions, i: int) -> float:
        others = [a for n, a in enumerate(actions) if n != i]
        if not others or self.n_actions == 1:
            return 0.0
        return sum(others) / ((self.n_actions - 1) * len(others))


def coordination_game(payoff=((1.0, 0.0), (0.0, 2.0))) -> SmallGame:
    """Two agents, two actions, one state, identical payoffs, no future."""
    pay = np.asarray(payoff, dtype=float)
    r = np.array([[pay[a, b] for a, b in itertools.product(range(2), repeat=2)]])
    return SmallGame(1, 2, 2, np.ones((1, 4, 1)), np.stack([r, r]), gamma=0.0)


def chain_game(gamma: float = 0.9, slip: float = 0.1) -> SmallGame:
    """Single agent, two states. Action 0 stays, action 1 switches (with slip).

    Reward 1 for acting in state 1, 0.2 for switching out of state 0.
    """
    p = np.zeros((2, 2, 2))
    for s in range(2):
        p[s, 0, s] = 1.0
        p[s, 1, 1 - s] = 1.0 - slip
        p[s, 1, s] = slip
    r = np.array([[[0.0, 0.2], [1.0, 1.0]]])
    return SmallGame(2, 1, 2, p, r, gamma)


class FeatureBasis:
    """P features over (state, mean action, own action)."""

    def __init__(self, fn: Callable[[int, float, int], np.ndarray], dim: int, game: SmallGame):
        self.fn = fn
        self.dim = dim
        self.game = game
        self._cache: dict = {}

    def __call__(self, s: int, abar: float, a: int) -> np.ndarray:
        key = (s, round(abar, 12), a)
        v = self._cache.get(key)
        if v is None:
            v = np.asarray(self.fn(s, abar, a), dtype=float)
            if v.shape != (self.dim,):
                raise DomainError(f"basis returned shape {v.shape}, expected ({self.dim},)")
            self._cache[key] = v
        return v

    def domain(self) -> list[tuple[int, float, int]]:
        g = self.game
        return [(s, m, a) for s in range(g.n_states) for m in g.mean_levels() for a in range(g.n_actions)]

    def matrix(self) -> np.ndarray:
        return np.array([self(*p) for p in self.domain()])

    def independent(self) -> bool:
        return int(np.linalg.matrix_rank(self.matrix())) == self.dim

    @classmethod
    def one_hot(cls, game: SmallGame) -> FeatureBasis:
        levels = game.mean_levels()
        index = {}
        for s in range(game.n_states):
            for k, m in enumerate(levels):
                for a in range(game.n_actions):
                    index[(s, round(m, 12), a)] = len(index)
        dim = len(index)

        def fn(s, abar, a):
            v = np.zeros(dim)
            v[index[(s, round(abar, 12), a)]] = 1.0
            return v

        basis = cls(fn, dim, game)
        basis.index = index
        return basis


@dataclass
class LinearQ:
    phi: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        if not np.all(np.isfinite(self.phi)):
            raise DomainError("phi must be finite")


def evaluate(q: LinearQ, basis: FeatureBasis, s: int, abar: float, a: int) -> float:
    return float(basis(s, abar, a) @ q.phi)


def boltzmann(values, temperature: float) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    if temperature <= 0:
        raise DomainError("temperature must be positive")
    z = (v - v.max()) / temperature
    e = np.exp(z)
    return e / e.sum()


def _next_features(q: LinearQ, basis: FeatureBasis, s_next: int, abar: float, temperature: float) -> np.ndarray:
    """Expected next feature vector under the Boltzmann policy of the current Q."""
    feats = np.array([basis(s_next, abar, a) for a in range(basis.game.n_actions)])
    return boltzmann(feats @ q.phi, temperature) @ feats


@dataclass(frozen=True)
class Transition:
    s: int
    abar: float
    a: int
    r: float
    s_next: int


def td_delta(q: LinearQ, basis: FeatureBasis, tr: Transition, temperature: float, gamma: float | None = None) -> float:
    g = basis.game.gamma if gamma is None else gamma
    if not 0.0 <= g < 1.0:
        raise DomainError("gamma must lie in [0, 1)")
    nxt = _next_features(q, basis, tr.s_next, tr.abar, temperature) @ q.phi if g else 0.0
    return tr.r + g * nxt - evaluate(q, basis, tr.s, tr.abar, tr.a)


def update(q: LinearQ, basis: FeatureBasis, tr: Transition, alpha: float, temperature: float) -> LinearQ:
    if alpha < 0:
        raise DomainError("step size must be non-negative")
    delta = td_delta(q, basis, tr, temperature)
    return LinearQ(q.phi + alpha * delta * basis(tr.s, tr.abar, tr.a))


# -- ODE matrices -------------------------------------------------------------


def uniform_behavior(game: SmallGame) -> Callable[[int], np.ndarray]:
    probs = np.full((game.n_agents, game.n_actions), 1.0 / game.n_actions)
    return lambda s: probs


def _joint_probs(game: SmallGame, per_agent: np.ndarray) -> np.ndarray:
    out = np.ones(game.n_joint)
    for j in range(game.n_joint):
        for i, a in enumerate(game.joint(j)):
            out[j] *= per_agent[i, a]
    return out


def _contributions(game, q, basis, agent, temperature):
    """Per (s, joint, s') outer products omega (gamma * omega_bar' - omega)^T and omega * r."""
    S, J, P = game.n_states, game.n_joint, basis.dim
    a_mat = np.zeros((S, J, S, P, P))
    b_vec = np.zeros((S, J, P))
    for s in range(S):
        for j in range(J):
            acts = game.joint(j)
            abar = game.mean_of_others(acts, agent)
            w = basis(s, abar, acts[agent])
            b_vec[s, j] = w * game.rewards[agent, s, j]
            for s2 in range(S):
                w_next = _next_features(q, basis, s2, abar, temperature) if game.gamma else np.zeros(P)
                a_mat[s, j, s2] = np.outer(w, game.gamma * w_next - w)
    return a_mat, b_vec


def stationary_distribution(game: SmallGame, behavior) -> np.ndarray:
    chain = np.array([_joint_probs(game, behavior(s)) @ game.transitions[s] for s in range(game.n_states)])
    vals, vecs = np.linalg.eig(chain.T)
    k = int(np.argmin(np.abs(vals - 1.0)))
    d = np.real(vecs[:, k])
    return d / d.sum()


def estimate_ode(game: SmallGame, q: LinearQ, basis: FeatureBasis, temperature: float, budget: int,
                 behavior=None, agent: int = 0, exact: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """A = E[omega (gamma omega_bar' - omega)^T], b = E[omega r] under the behavior chain.

    ``exact`` enumerates the stationary distribution; otherwise a single chain
    of ``budget`` transitions is simulated.
    """
    if budget <= 0 and not exact:
        raise DomainError("sample budget must be positive")
    behavior = behavior or uniform_behavior(game)
    a_mat, b_vec = _contributions(game, q, basis, agent, temperature)
    jp = np.array([_joint_probs(game, behavior(s)) for s in range(game.n_states)])
    if exact:
        d = stationary_distribution(game, behavior)
        w = d[:, None, None] * jp[:, :, None] * game.transitions
        return np.einsum("sjt,sjtpq->pq", w, a_mat), np.einsum("sj,sjp->p", w.sum(-1), b_vec)
    rng = rng or np.random.default_rng(0)
    jcdf = np.cumsum(jp, axis=1)
    tcdf = np.cumsum(game.transitions, axis=2)
    u_joint = rng.random(budget)
    u_next = rng.random(budget)
    counts = np.zeros((game.n_states, game.n_joint, game.n_states))
    s = int(rng.integers(game.n_states))
    nj, ns = game.n_joint - 1, game.n_states - 1
    for t in range(budget):
        j = min(int(np.searchsorted(jcdf[s], u_joint[t], side="right")), nj)
        s2 = min(int(np.searchsorted(tcdf[s, j], u_next[t], side="right")), ns)
        counts[s, j, s2] += 1
        s = s2
    w = counts / budget
    return np.einsum("sjt,sjtpq->pq", w, a_mat), np.einsum("sj,sjp->p", w.sum(-1), b_vec)


def equilibrium_and_stability(a, b, max_condition: float = 1e12) -> tuple[np.ndarray, bool]:
    """Rest point of dphi/dt = A phi + b and whether sym(A) is negative definite."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.shape != (a.shape[0],):
        raise DomainError("A must be square and b must match it")
    cond = float(np.linalg.cond(a))
    if not math.isfinite(cond) or cond > max_condition:
        raise SingularityError(f"A is singular or ill-conditioned (condition number {cond:.3e})")
    phi = np.linalg.solve(a, -b)
    stable = bool(np.all(np.linalg.eigvalsh(0.5 * (a + a.T)) < 0))
    return phi, stable


# -- schedules and experiments -----------------------------------------------------


@dataclass(frozen=True)
class StepSize:
    """alpha_t = scale / (t / horizon + 1); constant when ``horizon`` is inf."""

    scale: float = 1.0
    horizon: float = 100.0

    def __call__(self, t):
        return self.scale / (np.asarray(t, dtype=float) / self.horizon + 1.0)


@dataclass(frozen=True)
class Temperature:
    """T_t = start / (1 + t / tau), decaying to zero."""

    start: float = 1.0
    tau: float = 100.0
    floor: float = 1e-6

    def __call__(self, t):
        return np.maximum(self.start / (1.0 + np.asarray(t, dtype=float) / self.tau), self.floor)


def check_step_sizes(alpha, t_max: float = 1e6) -> dict[str, bool]:
    """Numerical heuristics for sum(alpha) = inf and sum(alpha^2) < inf.

    Divergent sums need t * alpha_t to stay away from zero; convergent square
    sums need t * alpha_t^2 to shrink.
    """
    lo, hi = t_max / 10.0, t_max
    a_lo, a_hi = float(alpha(lo)), float(alpha(hi))
    return {
        "sum_diverges": hi * a_hi >= 0.5 * lo * a_lo,
        "square_sum_converges": hi * a_hi**2 < 0.9 * lo * a_lo**2,
        "bounded": 0.0 < float(alpha(0)) <= 1.0,
    }


@dataclass
class ConvergenceReport:
    phis: list[np.ndarray]
    lines: list[dict]
    diverged: bool
    preconditions: dict
    stable: bool | None
    greedy: tuple | None
    oracle_distance: float | None

    def to_jsonl(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.lines)


def greedy_joint(game: SmallGame, basis: FeatureBasis, phis, start_actions, s: int = 0, rounds: int = 20) -> tuple:
    """Iterate simultaneous greedy mean-field responses until they stop changing."""
    acts = tuple(start_actions)
    for _ in range(rounds):
        new = tuple(
            int(np.argmax([basis(s, game.mean_of_others(acts, i), a) @ phis[i] for a in range(game.n_actions)]))
            for i in range(game.n_agents))
        if new == acts:
            break
        acts = new
    return acts


def run_convergence_experiment(game: SmallGame, basis: FeatureBasis, episodes: int, steps_per_episode: int,
                               alpha=None, temperature=None, rng: np.random.Generator | None = None,
                               explore: float = 0.0, guard: float = 1e6, oracle=None) -> ConvergenceReport:
    """Independent linear mean-field learners, one per agent, on ``game``.

    Agents act by Boltzmann over Q(s, abar_prev, .) where abar_prev is the mean
    of the other agents' previous actions; with probability ``explore`` an
    action is drawn uniformly instead. Each agent updates on its realized mean
    action.
    """
    alpha = alpha or StepSize()
    temperature = temperature or Temperature()
    rng = rng or np.random.default_rng(0)
    pre = check_step_sizes(alpha)
    phis = [np.zeros(basis.dim) for _ in range(game.n_agents)]
    lines = []
    s = int(rng.integers(game.n_states))
    acts = tuple(int(x) for x in rng.integers(game.n_actions, size=game.n_agents))
    diverged = False
    t = 0
    for ep in range(episodes):
        errs = []
        for _ in range(steps_per_episode):
            temp = float(temperature(t))
            chosen = []
            for i in range(game.n_agents):
                if explore and rng.random() < explore:
                    chosen.append(int(rng.integers(game.n_actions)))
                    continue
                m = game.mean_of_others(acts, i)
                vals = [basis(s, m, a) @ phis[i] for a in range(game.n_actions)]
                p = boltzmann(vals, temp)
                chosen.append(min(int(np.searchsorted(np.cumsum(p), rng.random(), side="right")), game.n_actions - 1))
            acts = tuple(chosen)
            j = game.joint_id(acts)
            s2 = min(int(np.searchsorted(np.cumsum(game.transitions[s, j]), rng.random(), side="right")),
                     game.n_states - 1)
            step = float(alpha(t))
            for i in range(game.n_agents):
                tr = Transition(s, game.mean_of_others(acts, i), acts[i], float(game.rewards[i, s, j]), s2)
                q = LinearQ(phis[i])
                delta = td_delta(q, basis, tr, temp)
                errs.append(abs(delta))
                phis[i] = q.phi + step * delta * basis(tr.s, tr.abar, tr.a)
            s = s2
            t += 1
            if any(not np.all(np.isfinite(p)) or np.linalg.norm(p) > guard for p in phis):
                diverged = True
                break
        rec = {"episode": ep, "td_error": float(np.mean(errs)) if errs else 0.0, "diverged": diverged,
               "temperature": float(temperature(t)), "alpha": float(alpha(t))}
        if not diverged:
            rec["phi_distance"] = _distance_to_rest_point(game, basis, phis, float(temperature(t)))
        lines.append(rec)
        if diverged:
            break
    stable = None
    greedy = None
    dist = None
    if not diverged:
        stable = _stable_at_rest_point(game, basis, phis, float(temperature(t)))
        greedy = greedy_joint(game, basis, phis, acts, s)
        if oracle is not None:
            dist = float(max(np.max(np.abs(p - np.asarray(o))) for p, o in zip(phis, oracle)))
    for rec in lines:
        rec["preconditions"] = pre
    return ConvergenceReport(phis, lines, diverged, pre, stable, greedy, dist)


def _rest_points(game, basis, phis, temp):
    out = []
    for i, phi in enumerate(phis):
        a, b = estimate_ode(game, LinearQ(phi), basis, temp, budget=0, agent=i, exact=True)
        out.append(equilibrium_and_stability(a, b))
    return out


def _distance_to_rest_point(game, basis, phis, temp) -> float | None:
    try:
        rest = _rest_points(game, basis, phis, temp)
    except SingularityError:
        return None
    return float(max(np.linalg.norm(p - r[0]) for p, r in zip(phis, rest)))


def _stable_at_rest_point(game, basis, phis, temp) -> bool | None:
    try:
        rest = _rest_points(game, basis, phis, temp)
        rest = _rest_points(game, basis, [r[0] for r in rest], temp)
    except SingularityError:
        return None
    return all(flag for _, flag in rest)


def value_iteration(game: SmallGame, tol: float = 1e-12) -> np.ndarray:
    """Optimal Q[s, a] of a single-agent game."""
    if game.n_agents != 1:
        raise DomainError("value iteration oracle is single-agent")
    q = np.zeros((game.n_states, game.n_actions))
    while True:
        v = q.max(axis=1)
        new = game.rewards[0] + game.gamma * game.transitions @ v
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
