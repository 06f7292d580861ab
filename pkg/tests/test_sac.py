import numpy as np
import pytest
from scipy.stats import norm

from rcac import diffcompute as dc
from rcac.errors import ConfigurationError
from rcac.sac import Agent, SacHyper, log1m_tanh_sq, squashed_log_prob
from rcac.srl import Autoencoder

from gradcheck import REL_TOL, check_param_sets


def _setup(dtype=np.float64, hyper=None, seed=0, action_dim=2):
    ae = Autoencoder((3, 16, 16), np.random.default_rng(seed), num_filters=4, latent_dim=3,
                     dtype=dtype)
    hyper = hyper or SacHyper(hidden_dim=16)
    agent = Agent("task", 3, action_dim, ae.enc_params, np.random.default_rng(seed + 1),
                  hyper, dtype)
    return ae, agent


def _jitter(rng, *sets, scale=0.2):
    for ps in sets:
        for v in ps.values.values():
            v += scale * rng.standard_normal(v.shape)


def _grads(ps):
    return ps, {k: v.copy() for k, v in ps.grads.items()}


def test_log1m_tanh_sq_stable_and_exact():
    u = np.array([-30.0, -2.0, 0.0, 0.5, 30.0])
    direct = np.log(1 - np.tanh(u[1:4]) ** 2)
    np.testing.assert_allclose(log1m_tanh_sq(u[1:4]), direct, rtol=1e-12)
    assert np.isfinite(log1m_tanh_sq(u)).all()


def test_log_prob_matches_change_of_variables_density():
    rng = np.random.default_rng(0)
    mu = rng.uniform(-1, 1, (200, 2))
    log_std = rng.uniform(-2, 0.5, (200, 2))
    noise = rng.standard_normal((200, 2))
    u = mu + np.exp(log_std) * noise
    a = np.tanh(u)
    # oracle: density of atanh(a) under N(mu, std), divided by |da/du| = 1 - a^2
    oracle = (norm.logpdf(np.arctanh(a), mu, np.exp(log_std)) - np.log(1 - a * a)).sum(axis=1)
    keep = np.abs(a).max(axis=1) < 0.999  # arctanh loses precision close to +-1
    np.testing.assert_allclose(squashed_log_prob(noise, log_std, u)[keep], oracle[keep], atol=1e-5)


def test_actions_bounded_and_deterministic_mode():
    _, agent = _setup()
    z = np.random.default_rng(1).uniform(-1, 1, (64, 3))
    a, logp = agent.sample_action(z, np.random.default_rng(2))
    assert a.shape == (64, 2) and logp.shape == (64,)
    assert np.all(np.abs(a) <= 1)
    d1, none = agent.sample_action(z, deterministic=True)
    d2, _ = agent.sample_action(z, deterministic=True)
    assert none is None
    np.testing.assert_array_equal(d1, d2)


def test_log_std_stays_in_bounds():
    _, agent = _setup()
    for v in agent.actor_params.values.values():
        v *= 1000.0
    _, log_std, _, _ = agent._policy_head(np.ones((4, 3)))
    assert np.all(log_std >= -10) and np.all(log_std <= 2)


def _fix_target_heads(agent, q1_value, q2_value):
    for ps, value in ((agent.q1_target, q1_value), (agent.q2_target, q2_value)):
        ps["q%s.4.w" % ps.names()[0][1]][...] = 0.0
        ps["q%s.4.b" % ps.names()[0][1]][...] = value


def test_critic_target_worked_example(monkeypatch):
    _, agent = _setup()
    _fix_target_heads(agent, 2.0, 5.0)
    monkeypatch.setattr(agent, "sample_action",
                        lambda z, rng=None, noise=None: (np.zeros((len(z), 2)), -np.ones(len(z))))
    y = agent.critic_target(np.array([1.0]), np.array([0.0]), np.zeros((1, 3)), None)
    # 1 + 0.99 * (min(2, 5) - 0.1 * (-1)) = 1 + 0.99 * 2.1
    assert y[0] == pytest.approx(3.079, abs=1e-12)
    y_done = agent.critic_target(np.array([1.0]), np.array([1.0]), np.zeros((1, 3)), None)
    assert y_done[0] == 1.0


def test_critic_target_gamma_zero_is_reward(monkeypatch):
    _, agent = _setup(hyper=SacHyper(hidden_dim=16, gamma=0.0))
    r = np.array([0.3, -2.0, 7.5])
    y = agent.critic_target(r, np.zeros(3), np.zeros((3, 3)), np.random.default_rng(0))
    np.testing.assert_array_equal(y, r)


def test_critic_target_uses_smaller_twin(monkeypatch):
    _, agent = _setup()
    _fix_target_heads(agent, 4.0, -1.0)
    monkeypatch.setattr(agent, "sample_action",
                        lambda z, rng=None, noise=None: (np.zeros((len(z), 2)), np.zeros(len(z))))
    y = agent.critic_target(np.zeros(1), np.zeros(1), np.zeros((1, 3)), None)
    assert y[0] == pytest.approx(0.99 * -1.0)


def test_critic_gradient_matches_finite_differences():
    ae, agent = _setup()
    rng = np.random.default_rng(3)
    _jitter(rng, ae.enc_params)
    obs = rng.random((4, 3, 16, 16))
    actions = rng.uniform(-1, 1, (4, 2))
    y = rng.standard_normal(4)
    agent.critic_objective(ae.encoder, obs, actions, y)
    sets = {"q1": _grads(agent.q1_params), "q2": _grads(agent.q2_params),
            "enc": _grads(ae.enc_params)}
    worst, where = check_param_sets(
        lambda: agent.critic_objective(ae.encoder, obs, actions, y, compute_grads=False), sets)
    assert worst < REL_TOL, where


def test_actor_gradient_matches_finite_differences():
    ae, agent = _setup()
    rng = np.random.default_rng(4)
    _jitter(rng, ae.enc_params)
    _jitter(rng, agent.actor_params, scale=0.3)
    obs = rng.random((5, 3, 16, 16))
    noise = rng.standard_normal((5, 2))

    def loss():
        z, _ = dc.forward(ae.encoder, ae.enc_params, obs, record=False)
        return agent.actor_objective(z, noise, compute_grads=False)[0]

    z, etape = dc.forward(ae.encoder, ae.enc_params, obs)
    q_before = {k: v.copy() for k, v in agent.q1_params.grads.items()}
    agent.actor_objective(z, noise, etape=etape)
    sets = {"actor": _grads(agent.actor_params), "enc": _grads(ae.enc_params)}
    worst, where = check_param_sets(loss, sets)
    assert worst < REL_TOL, where
    for k in q_before:  # critics are held fixed by the actor loss
        np.testing.assert_array_equal(agent.q1_params.grads[k], q_before[k])


def test_temperature_gradient_matches_finite_differences():
    _, agent = _setup()
    logp = np.array([-1.5, 0.3, 2.0])
    agent.temperature_objective(logp)
    worst, where = check_param_sets(lambda: agent.temperature_objective(logp, False),
                                    {"alpha": _grads(agent.log_alpha)})
    assert worst < REL_TOL, where


def test_critic_update_moves_encoder_actor_update_does_not():
    ae, agent = _setup(np.float32)
    rng = np.random.default_rng(5)
    obs = rng.random((8, 3, 16, 16), dtype=np.float32)
    w = ae.enc_params["enc.1.w"].copy()
    agent.update_actor_and_temperature(ae.encoder, obs, rng)
    np.testing.assert_array_equal(ae.enc_params["enc.1.w"], w)
    agent.update_critic(ae.encoder, obs, rng.uniform(-1, 1, (8, 2)).astype(np.float32),
                        np.ones(8, np.float32), obs, np.zeros(8, np.float32), rng)
    assert not np.array_equal(ae.enc_params["enc.1.w"], w)


def test_actor_grad_to_encoder_flag():
    ae, agent = _setup(np.float32, hyper=SacHyper(hidden_dim=16, actor_grad_to_encoder=True))
    obs = np.random.default_rng(6).random((8, 3, 16, 16), dtype=np.float32)
    w = ae.enc_params["enc.1.w"].copy()
    agent.update_actor_and_temperature(ae.encoder, obs, np.random.default_rng(0))
    assert not np.array_equal(ae.enc_params["enc.1.w"], w)


def test_critic_fixed_point_single_terminal_transition():
    ae, agent = _setup(np.float32)
    rng = np.random.default_rng(7)
    obs = rng.random((1, 3, 16, 16), dtype=np.float32)
    next_obs = rng.random((1, 3, 16, 16), dtype=np.float32)
    action = rng.uniform(-1, 1, (1, 2)).astype(np.float32)
    reward = np.array([0.7], np.float32)
    for _ in range(200):
        agent.update_critic(ae.encoder, obs, action, reward, next_obs, np.ones(1, np.float32), rng)
    q1, q2 = agent.q_values(ae.encode(obs), action)
    assert abs(q1[0] - 0.7) < 0.05 and abs(q2[0] - 0.7) < 0.05


def test_alpha_positive_and_tracks_entropy():
    ae, agent = _setup(np.float32)
    rng = np.random.default_rng(8)
    obs = rng.random((8, 3, 16, 16), dtype=np.float32)
    for _ in range(20):
        agent.update_actor_and_temperature(ae.encoder, obs, rng)
        assert agent.alpha > 0
    # entropy far above target: logp << -A, so alpha must shrink
    before = agent.alpha
    agent.temperature_objective(np.full(8, -50.0))
    agent.alpha_opt.step()
    assert agent.alpha < before


def test_target_soft_update():
    _, agent = _setup()
    name = "q1.0.w"
    agent.q1_params[name][...] += 1.0
    before = agent.q1_target[name].copy()
    agent.update_targets()
    np.testing.assert_allclose(agent.q1_target[name], before + 0.01, rtol=1e-12)


def test_state_roundtrip_and_role_check(tmp_path):
    ae, agent = _setup(np.float32)
    rng = np.random.default_rng(9)
    obs = rng.random((4, 3, 16, 16), dtype=np.float32)
    agent.update_actor_and_temperature(ae.encoder, obs, rng)
    path = tmp_path / "a.ckpt"
    dc.save_arrays(path, agent.state_arrays(), agent.state_meta())
    arrays, meta = dc.load_arrays(path)
    _, other = _setup(np.float32, seed=5)
    other.load_state_arrays(arrays, meta)
    z = ae.encode(obs)
    np.testing.assert_array_equal(agent.sample_action(z, deterministic=True)[0],
                                  other.sample_action(z, deterministic=True)[0])
    assert other.actor_opt.step_count == 1 and other.alpha == agent.alpha
    curious = Agent("curious", 3, 2, ae.enc_params, rng, SacHyper(hidden_dim=16), np.float32)
    with pytest.raises(ConfigurationError):
        curious.load_state_arrays(arrays, meta)


def test_bad_hyper():
    with pytest.raises(ConfigurationError):
        SacHyper(log_std_min=3.0)
