import numpy as np
import pytest

from rcac.envs import PendulumSwingup, PointReacherSparse, make_env, wrap_angle
from rcac.errors import ConfigurationError, UsageError


def test_reset_is_deterministic_under_seed():
    for env_id in ("pendulum_swingup", "point_reacher_sparse"):
        a = make_env(env_id).reset(seed=5)
        b = make_env(env_id).reset(seed=5)
        assert a.tobytes() == b.tobytes()


def test_reset_fills_stack_with_initial_frame():
    env = make_env("pendulum_swingup", obs_size=32, frame_stack=3)
    obs = env.reset(seed=1)
    assert obs.shape == (9, 32, 32) and obs.dtype == np.uint8
    np.testing.assert_array_equal(obs[0:3], obs[3:6])
    np.testing.assert_array_equal(obs[3:6], obs[6:9])


def test_pendulum_reset_distribution():
    env = PendulumSwingup(obs_size=16)
    states = []
    for seed in range(2000):
        env.reset(seed=seed)
        states.append(env.state.copy())
    states = np.array(states)
    assert np.all(states[:, 0] > -np.pi) and np.all(states[:, 0] <= np.pi)
    assert np.all(np.abs(states[:, 1]) <= 1.0)
    # roughly uniform: each angle quartile holds about a quarter
    counts = np.histogram(states[:, 0], bins=4, range=(-np.pi, np.pi))[0]
    assert counts.min() > 400


def test_reacher_reset_distribution():
    env = PointReacherSparse(obs_size=16)
    for seed in range(500):
        env.reset(seed=seed)
        np.testing.assert_array_equal(env.state[:4], 0.0)
        assert 0.5 <= np.hypot(*env.state[4:6]) <= 0.9


def test_pendulum_hanging_down_stays_put():
    env = PendulumSwingup(obs_size=16)
    env.reset(seed=0)
    env.state = np.array([np.pi, 0.0])
    for _ in range(20):
        env.step([0.0])
    assert abs(abs(env.state[0]) - np.pi) < 1e-9
    assert abs(env.state[1]) < 1e-9


def test_pendulum_one_step_matches_reference_integration():
    # frozen from a standalone semi-implicit Euler loop: 4 ticks x 10 substeps, h = 0.005
    env = PendulumSwingup(obs_size=16, action_repeat=4)
    env.reset(seed=0)
    env.state = np.array([0.1, 0.0])
    env.step([0.0])
    assert env.state[0] == pytest.approx(0.1322933560947463, abs=1e-12)
    assert env.state[1] == pytest.approx(0.33015006768860494, abs=1e-12)


def test_pendulum_energy_drift_under_one_percent():
    env = PendulumSwingup(obs_size=16, action_repeat=1)
    scale = env.mass * env.gravity * env.length  # range of the potential energy
    for theta0 in (0.3, np.pi / 2, 2.0, np.pi - 0.1):
        env.reset(seed=0)
        env.state = np.array([theta0, 0.0])
        e0 = env.energy()
        worst = 0.0
        for _ in range(200):
            env.step([0.0])
            worst = max(worst, abs(env.energy() - e0))
        assert worst / scale < 0.01, theta0


def test_reacher_reward_at_goal():
    env = PointReacherSparse(obs_size=16)
    env.reset(seed=3)
    goal = env.state[4:6]
    state = env.state.copy()
    state[0:2] = goal
    assert env.reward_at(state) == 1.0
    state[0:2] = goal + np.array([0.06, 0.0])
    assert env.reward_at(state) == 0.0
    env.state = state.copy()
    env.state[0:2] = goal
    assert env.step([0.0, 0.0]).reward == env.action_repeat  # stays on the goal each tick


@pytest.mark.parametrize("repeat,length", [(4, 250), (1, 1000), (2, 500)])
def test_episode_length(repeat, length):
    env = make_env("pendulum_swingup", obs_size=16, action_repeat=repeat)
    assert env.episode_length == length


def test_truncation_and_step_after_end():
    env = make_env("point_reacher_sparse", obs_size=16, action_repeat=4)
    env.reset(seed=0)
    results = [env.step([0.1, -0.2]) for _ in range(env.episode_length)]
    assert not any(r.truncated for r in results[:-1])
    assert results[-1].truncated and not results[-1].done
    with pytest.raises(UsageError):
        env.step([0.0, 0.0])
    env.reset()
    env.step([0.0, 0.0])


def test_step_before_reset_is_usage_error():
    with pytest.raises(UsageError):
        make_env("pendulum_swingup", obs_size=16).step([0.0])


def test_render_determinism_and_angle_difference():
    env = PendulumSwingup(obs_size=48)
    a = env.render(np.array([0.0, 0.0]))
    b = env.render(np.array([0.0, 0.0]))
    assert a.tobytes() == b.tobytes()
    c = env.render(np.array([np.pi, 0.0]))
    differing = np.any(a != c, axis=0).mean()
    assert differing >= 0.01


def test_background_constant_across_states():
    env = PendulumSwingup(obs_size=48)
    rng = np.random.default_rng(0)
    first = env.render(np.array([0.0, 0.0]))
    for theta in rng.uniform(-np.pi, np.pi, 50):
        frame = env.render(np.array([theta, 0.0]))
        # corners lie outside the reach of rod + bob
        for r, c in ((0, 0), (0, 47), (47, 0), (47, 47)):
            np.testing.assert_array_equal(frame[:, r, c], first[:, r, c])
    reacher = PointReacherSparse(obs_size=48)
    reacher.reset(seed=0)
    bg = reacher.render(reacher.state)[:, 0, 0]
    np.testing.assert_array_equal(bg, [24, 28, 40])


def test_frame_stack_shift():
    env = make_env("point_reacher_sparse", obs_size=24, frame_stack=3)
    prev = env.reset(seed=2)
    rng = np.random.default_rng(0)
    for _ in range(10):
        obs = env.step(rng.uniform(-1, 1, 2)).observation
        for k in range(2):
            np.testing.assert_array_equal(obs[3 * k:3 * k + 3], prev[3 * k + 3:3 * k + 6])
        prev = obs


def test_trajectory_determinism():
    def rollout():
        env = make_env("pendulum_swingup", obs_size=24)
        obs = [env.reset(seed=9)]
        rng = np.random.default_rng(4)
        for _ in range(30):
            obs.append(env.step(rng.uniform(-1, 1, 1)).observation)
        return b"".join(o.tobytes() for o in obs)

    assert rollout() == rollout()


@pytest.mark.parametrize("env_id", ["pendulum_swingup", "point_reacher_sparse"])
def test_reward_bounds_random_steps(env_id):
    env = make_env(env_id, obs_size=16)
    rng = np.random.default_rng(0)
    env.reset(seed=0)
    rewards = []
    for _ in range(100_000 // env.action_repeat):
        res = env.step(rng.uniform(-1.2, 1.2, env.action_dim))
        rewards.append(res.reward)
        if res.truncated:
            env.reset()
    rewards = np.array(rewards)
    assert rewards.min() >= 0.0 and rewards.max() <= env.action_repeat
    if env_id == "point_reacher_sparse":
        assert set(np.unique(rewards)) <= set(range(env.action_repeat + 1))


def test_angles_wrapped():
    assert wrap_angle(-np.pi) == np.pi
    assert wrap_angle(3 * np.pi) == pytest.approx(np.pi)
    assert wrap_angle(0.5) == 0.5


def test_unknown_env_id():
    with pytest.raises(ConfigurationError):
        make_env("cartpole")


def test_frame_dump(tmp_path):
    env = make_env("pendulum_swingup", obs_size=16, frame_dump_dir=tmp_path / "frames")
    env.reset(seed=0)
    env.step([0.5])
    assert len(list((tmp_path / "frames").glob("*.png"))) == 2
