import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mfdispatch import agents as ag
from mfdispatch import neuralnet as nn
from mfdispatch import simcore as sc
from mfdispatch.hexworld import Coord, DomainError, HexGrid


def nets_for(variant="COD", seed=0, **kw):
    cfg = ag.AgentConfig(variant=variant, actor_hidden=(8,), critic_hidden=(8,), **kw)
    return cfg, ag.AgentNets.create(cfg, np.random.default_rng(seed))


def constant_net(sizes, value, act="identity"):
    """Net whose output is ``value`` for any input (zero weights, output bias)."""
    p = nn.init_mlp(sizes, np.random.default_rng(0), act)
    for w in p.weights:
        w[:] = 0.0
    p.biases[-1][:] = value
    return p


def experience(reward=1.0, n_next=2, n_cur=2, elapsed=1, rng=None):
    rng = rng or np.random.default_rng(0)
    return ag.Experience(
        rng.random(ag.OBS_DIM), rng.random(ag.CRITIC_ACTION_DIM), reward, rng.random(ag.OBS_DIM),
        rng.random((n_next, ag.ACTOR_ACTION_DIM)), rng.random((n_next, ag.CRITIC_ACTION_DIM)), 0.5,
        mean_action=0.5, actor_cands=rng.random((n_cur, ag.ACTOR_ACTION_DIM)),
        critic_cands=rng.random((n_cur, ag.CRITIC_ACTION_DIM)), elapsed=elapsed)


# -- selector -------------------------------------------------------------------------


def test_boltzmann_known_values():
    np.testing.assert_allclose(ag.boltzmann_probs([1.0, 0.0], 1.0), [0.7311, 0.2689], atol=1e-4)
    np.testing.assert_allclose(ag.boltzmann_probs([3.0, 3.0, 3.0], 5.0), [1 / 3] * 3)
    assert ag.boltzmann_probs([2.0], 1.0).tolist() == [1.0]
    with pytest.raises(DomainError):
        ag.boltzmann_probs([], 1.0)
    with pytest.raises(nn.NumericError):
        ag.boltzmann_probs([np.nan, 1.0], 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(0, 1e3), st.floats(-1e3, 1e3))
def test_boltzmann_normalized_and_shift_invariant(values, beta, shift):
    p = ag.boltzmann_probs(values, beta)
    assert abs(p.sum() - 1.0) <= 1e-12
    np.testing.assert_allclose(ag.boltzmann_probs(np.array(values) + shift, beta), p, atol=1e-9)


def test_boltzmann_large_beta_is_greedy():
    rng = np.random.default_rng(0)
    picks = [ag.boltzmann_select([0.2, 0.9, 0.5], 1e3, rng)[0] for _ in range(10_000)]
    assert picks.count(1) / len(picks) > 0.999


def test_boltzmann_select_frequencies():
    rng = np.random.default_rng(1)
    counts = Counter(ag.boltzmann_select([1.0, 0.0], 1.0, rng)[0] for _ in range(20_000))
    assert abs(counts[0] / 20_000 - 0.7311) < 0.01


def test_temperature_schedule():
    assert ag.temperature(0, 20) == 1.0
    assert ag.temperature(20, 20) == 0.01 and ag.temperature(50, 20) == 0.01
    assert ag.temperature(10, 20) == pytest.approx(0.1)
    with pytest.raises(DomainError):
        ag.temperature(-1, 20)


# -- mean action ----------------------------------------------------------------------


def scene(n_idle, n_orders, busy_self=False):
    g = HexGrid(2, 2)
    drivers = [sc.Driver(i, 0, cell=0) for i in range(max(n_idle, 1) + (1 if busy_self else 0))]
    if busy_self:
        drivers[-1].status = sc.DriverStatus.ON_TRIP
    else:
        drivers = drivers[:n_idle]
    s = sc.WorldState(0, "grid", g, drivers)
    for i in range(n_orders):
        s.orders[i] = sc.Order(i, 0, 3, 5.0, 1, 0, origin_cell=0, dest_cell=3)
    s.orders[99] = sc.Order(99, 3, 0, 5.0, 1, 0, origin_cell=3, dest_cell=0)
    sc.recount_tallies(s)
    return s


def test_mean_action_two_drivers_three_orders():
    assert ag.mean_action(scene(2, 3), 0) == pytest.approx(2 / 3, abs=0)
    assert ag.mean_action(scene(2, 3), 0) == 2 / 3


def test_mean_action_conventions():
    assert ag.mean_action(scene(1, 4), 0) == 1 / 4
    assert ag.mean_action(scene(3, 0), 0) == 3.0
    # a busy driver adds itself to the count of idle peers
    s = scene(1, 2, busy_self=True)
    assert ag.mean_action(s, len(s.drivers) - 1) == 2 / 2


def test_mean_action_coordinate_neighborhood():
    g = HexGrid(10, 10)
    locs = [Coord(0.5, 0.5), Coord(0.65, 0.5), Coord(0.75, 0.5)]
    s = sc.WorldState(0, "coordinate", g, [sc.Driver(i, c, cell=0) for i, c in enumerate(locs)], radius=0.1)
    s.orders[0] = sc.Order(0, Coord(0.52, 0.5), Coord(0.1, 0.1), 5.0, 1, 0)
    sc.recount_tallies(s)
    # peers within 2r = 0.2 are self and the driver at 0.65
    assert ag.mean_action(s, 0) == 2.0


# -- replay ---------------------------------------------------------------------------


def test_replay_fifo_and_permutation():
    b = ag.ReplayBuffer(3)
    for i in range(4):
        ag.replay_push(b, i)
    assert b.items() == [1, 2, 3]
    assert sorted(ag.replay_sample(b, 3, np.random.default_rng(0))) == [1, 2, 3]
    with pytest.raises(ag.UnderfilledError):
        b.sample(4, np.random.default_rng(0))
    with pytest.raises(DomainError):
        ag.ReplayBuffer(0)


def test_replay_uniform_frequency():
    b = ag.ReplayBuffer(10)
    for i in range(10):
        b.push(i)
    rng = np.random.default_rng(0)
    counts = Counter(b.sample(1, rng)[0] for _ in range(10_000))
    assert all(abs(counts[i] - 1000) <= 60 for i in range(10))


# -- ranking, critic, targets --------------------------------------------------------------


def test_rank_properties():
    _, nets = nets_for()
    obs = np.random.default_rng(1).random(ag.OBS_DIM)
    cands = np.random.default_rng(2).random((4, ag.ACTOR_ACTION_DIM))
    v = ag.rank(nets.actor, obs, cands)
    assert v.shape == (4,) and np.all((v > 0) & (v < 1))
    assert ag.rank(nets.actor, obs, cands[[1, 1]])[0] == ag.rank(nets.actor, obs, cands[[1, 1]])[1]
    perm = [2, 0, 3, 1]
    np.testing.assert_array_equal(ag.rank(nets.actor, obs, cands[perm]), v[perm])
    assert ag.rank(nets.actor, obs, cands[:1]).shape == (1,)
    with pytest.raises(DomainError):
        ag.rank(nets.actor, obs, np.zeros((0, ag.ACTOR_ACTION_DIM)))


def test_iod_target_arithmetic():
    cfg, nets = nets_for("IOD")
    nets.critic_target = constant_net(nets.critic_target.sizes, 2.0)
    e = experience(reward=1.0)
    assert ag.critic_target_iod(nets, e, 0.95) == pytest.approx(2.9)
    assert ag.critic_target_iod(nets, e, 0.0) == 1.0
    e.elapsed = 3
    assert ag.critic_target_iod(nets, e, 0.5) == pytest.approx(1.0 + 0.125 * 2.0)
    empty = experience(reward=5.0, n_next=0)
    assert ag.critic_target_iod(nets, empty, 0.95) == 5.0


def test_iod_target_uses_top_ranked_candidate():
    cfg, nets = nets_for("IOD", seed=3)
    e = experience(n_next=4, rng=np.random.default_rng(5))
    mu = ag.rank(nets.actor_target, e.next_obs, e.next_actor_cands)
    q = ag.critic_values(nets.critic_target, cfg, e.next_obs, e.next_critic_cands, e.next_mean_action)
    assert ag.critic_target_iod(nets, e, 0.9) == pytest.approx(e.reward + 0.9 * q[np.argmax(mu)], abs=1e-12)


def test_mf_value_cases():
    cfg, nets = nets_for("COD", seed=4)
    rng = np.random.default_rng(6)
    obs, acts, crits = rng.random(ag.OBS_DIM), rng.random((3, ag.ACTOR_ACTION_DIM)), rng.random((3, 3))
    mu = ag.rank(nets.actor_target, obs, acts)
    q = ag.critic_values(nets.critic_target, cfg, obs, crits, 0.7)
    pi = np.exp(2.0 * mu) / np.exp(2.0 * mu).sum()
    assert ag.mf_value(nets, obs, acts, crits, 0.7, beta=2.0) == pytest.approx(float(pi @ q), abs=1e-10)
    assert ag.mf_value(nets, obs, acts[:1], crits[:1], 0.7, beta=2.0) == pytest.approx(q[0], abs=1e-12)
    nets.critic_target = constant_net(nets.critic_target.sizes, 1.25)
    assert ag.mf_value(nets, obs, acts, crits, 0.7, beta=2.0) == 1.25
    assert ag.mf_value(nets, obs, acts[:0], crits[:0], 0.7, beta=2.0) == 0.0


def test_qiod_target_is_max():
    cfg, nets = nets_for("Q-IOD", seed=2)
    e = experience(n_next=3, rng=np.random.default_rng(8))
    q = ag.critic_values(nets.critic_target, cfg, e.next_obs, e.next_critic_cands, e.next_mean_action)
    assert ag.critic_targets(nets, cfg, [e], 1.0)[0] == pytest.approx(e.reward + cfg.gamma * q.max())


def test_batched_targets_match_one_at_a_time():
    cfg, nets = nets_for("COD", seed=1)
    rng = np.random.default_rng(0)
    batch = [experience(reward=float(i), n_next=int(rng.integers(0, 4)), rng=rng, elapsed=1 + i % 3)
             for i in range(12)]
    together = ag.critic_targets(nets, cfg, batch, 3.0)
    alone = [ag.critic_targets(nets, cfg, [e], 3.0)[0] for e in batch]
    np.testing.assert_allclose(together, alone, atol=1e-12)


# -- updates --------------------------------------------------------------------------------


def test_critic_update_gamma_zero_loss_is_regression():
    cfg, nets = nets_for("IOD", gamma=0.0)
    e = experience(reward=3.0)
    x = ag._critic_inputs(e.obs[None], e.action[None], np.array([e.mean_action]), cfg)
    q = nn.forward(nets.critic, x)[0, 0]
    assert ag.critic_update(nets, cfg, [e], 1.0) == pytest.approx((3.0 - q) ** 2)


def test_critic_update_zero_error_leaves_params():
    cfg, nets = nets_for("IOD", gamma=0.0)
    e = experience()
    x = ag._critic_inputs(e.obs[None], e.action[None], np.array([e.mean_action]), cfg)
    e.reward = float(nn.forward(nets.critic, x)[0, 0])
    before = [a.copy() for a in nets.critic.arrays()]
    assert ag.critic_update(nets, cfg, [e], 1.0) == 0.0
    for a, b in zip(before, nets.critic.arrays()):
        np.testing.assert_array_equal(a, b)


def test_critic_overfits_fixed_batch():
    cfg = ag.AgentConfig("COD", gamma=0.0, critic_lr=1e-2)
    nets = ag.AgentNets.create(cfg, np.random.default_rng(0))
    rng = np.random.default_rng(0)
    batch = [experience(reward=float(rng.uniform(1, 3)), rng=rng) for _ in range(16)]
    losses = [ag.critic_update(nets, cfg, batch, 1.0) for _ in range(200)]
    assert losses[-1] < 0.01 * losses[0]


def test_actor_gradient_zero_for_equal_q():
    cfg, nets = nets_for("COD")
    nets.critic = constant_net(nets.critic.sizes, 0.37, "relu")
    _, grads = ag.actor_objective_grad(nets, cfg, [experience(n_cur=3)], 2.0)
    assert all(not a.any() for a in grads.arrays())


def test_actor_gradient_matches_finite_differences():
    cfg, nets = nets_for("COD", seed=9)
    rng = np.random.default_rng(1)
    batch = [experience(n_cur=3, rng=rng) for _ in range(3)]
    _, grads = ag.actor_objective_grad(nets, cfg, batch, 4.0)
    h = 1e-6
    w = nets.actor.weights[0]
    for idx in [(0, 0), (3, 2), (8, 5)]:
        old = w[idx]
        w[idx] = old + h
        up, _ = ag.actor_objective_grad(nets, cfg, batch, 4.0)
        w[idx] = old - h
        down, _ = ag.actor_objective_grad(nets, cfg, batch, 4.0)
        w[idx] = old
        # gradients are of the negated objective (Adam minimizes)
        assert -grads.weights[0][idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-9)


def test_actor_update_two_candidate_bandit():
    cfg, nets = nets_for("COD", actor_lr=1e-2)
    nets.critic = nn.init_mlp(nets.critic.sizes, np.random.default_rng(0), "relu")
    e = experience(n_cur=2)
    # critic prefers the first candidate
    q = ag.critic_values(nets.critic, cfg, e.obs, e.critic_cands, e.mean_action)
    if q[0] < q[1]:
        e.actor_cands = e.actor_cands[::-1].copy()
        e.critic_cands = e.critic_cands[::-1].copy()
    probs = []
    for _ in range(60):
        mu = ag.rank(nets.actor, e.obs, e.actor_cands)
        probs.append(ag.boltzmann_probs(mu, 5.0)[0])
        ag.actor_update(nets, cfg, [e], 5.0)
    assert all(b >= a for a, b in zip(probs, probs[1:]))
    assert probs[-1] > probs[0]
    # bounded by the sigmoid range: pi <= e^beta / (e^beta + 1)
    assert probs[-1] < math.exp(5) / (math.exp(5) + 1)


def test_actor_update_qiod_is_noop():
    cfg, nets = nets_for("Q-IOD")
    assert nets.actor is None
    before = [a.copy() for a in nets.critic.arrays()]
    assert ag.actor_update(nets, cfg, [experience()], 1.0) == 0.0
    for a, b in zip(before, nets.critic.arrays()):
        np.testing.assert_array_equal(a, b)


def test_soft_update_targets_moves_towards_online():
    cfg, nets = nets_for("COD", tau_critic=1.0, tau_actor=0.0)
    nets.critic = nn.init_mlp(nets.critic.sizes, np.random.default_rng(5), "relu")
    nets.actor = nn.init_mlp(nets.actor.sizes, np.random.default_rng(6), "sigmoid")
    old_actor_target = nets.actor_target.copy()
    ag.soft_update_targets(nets, cfg)
    np.testing.assert_array_equal(nets.critic_target.weights[0], nets.critic.weights[0])
    np.testing.assert_array_equal(nets.actor_target.weights[0], old_actor_target.weights[0])


def test_agent_config_validation():
    with pytest.raises(DomainError):
        ag.AgentConfig(variant="DQN")
    with pytest.raises(DomainError):
        ag.AgentConfig(gamma=1.5)
    assert ag.AgentConfig("COD").critic_input_dim == ag.AgentConfig("IOD").critic_input_dim + 1


def test_nets_save_load_roundtrip(tmp_path):
    cfg, nets = nets_for("COD", seed=11)
    nets.save(tmp_path, cfg)
    back = ag.AgentNets.load(tmp_path, cfg)
    for role, p in nets.roles().items():
        for a, b in zip(p.arrays(), back.roles()[role].arrays()):
            np.testing.assert_array_equal(a, b)
    with pytest.raises(DomainError):
        ag.AgentNets.load(tmp_path, ag.AgentConfig("IOD", actor_hidden=(8,), critic_hidden=(8,)))


# -- dispatcher -------------------------------------------------------------------------------


def test_learning_dispatcher_trains_and_assigns_validly():
    from mfdispatch import harness

    cfg = harness.preset("desk", fleet_size=40, agent={"batch_size": 32, "update_every": 50})
    streams = harness.rng_streams(0, 0, 1)
    sim = harness.make_simulator(cfg, streams)
    nets = ag.AgentNets.create(cfg.agent_config(), streams["nets"])
    disp = harness.make_dispatcher("COD", cfg, streams, nets=nets, train=True)
    harness.run_episode(sim, disp)
    assert disp.stats.updates > 0
    assert all(math.isfinite(x) for x in disp.stats.critic_loss)
    assert len(disp.buffer) > 0 and not disp._pending
    e = disp.buffer.items()[0]
    assert e.elapsed >= 1 and e.next_obs is not None
