import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from rcac.errors import UsageError
from rcac.replay import ReplayBuffer, Transition


def _tagged(i, shape=(1, 2, 2)):
    obs = np.full(shape, i % 256, dtype=np.uint8)
    return Transition(obs, np.array([float(i)]), float(i), obs, False)


def test_fifo_capacity_three():
    buf = ReplayBuffer((1, 2, 2), 1, capacity=3)
    for i in (1, 2, 3, 4):
        buf.push(_tagged(i))
    assert sorted(buf.rewards[:3].tolist()) == [2.0, 3.0, 4.0]


@settings(max_examples=50, deadline=None)
@given(capacity=st.integers(1, 20), pushes=st.integers(1, 80))
def test_fifo_overwrite_order(capacity, pushes):
    buf = ReplayBuffer((1, 2, 2), 1, capacity=capacity)
    for i in range(pushes):
        buf.push(_tagged(i))
    assert len(buf) == min(pushes, capacity)
    held = sorted(buf.rewards[:len(buf)].astype(int).tolist())
    assert held == list(range(max(0, pushes - capacity), pushes))


def test_single_item_sampling():
    buf = ReplayBuffer((1, 2, 2), 1, capacity=10)
    buf.push(_tagged(7))
    batch = buf.sample(16, np.random.default_rng(0))
    assert np.all(batch.rewards == 7.0)
    assert np.allclose(batch.obs, 7 / 255)


def test_saturation():
    buf = ReplayBuffer((1, 1, 1), 1, capacity=80_000)
    obs = np.zeros((1, 1, 1), np.uint8)
    for _ in range(80_005):
        buf.push(Transition(obs, [0.0], 0.0, obs, False))
    assert len(buf) == 80_000


def test_sampling_determinism():
    buf = ReplayBuffer((1, 2, 2), 1, capacity=50)
    for i in range(50):
        buf.push(_tagged(i))
    a = buf.sample(128, np.random.default_rng(3))
    b = buf.sample(128, np.random.default_rng(3))
    np.testing.assert_array_equal(a.indices, b.indices)
    assert len(a) == 128 and a.obs.shape == (128, 1, 2, 2) and a.obs.dtype == np.float32


def test_sampling_uniform_chi_squared():
    buf = ReplayBuffer((1, 1, 1), 1, capacity=1000)
    for i in range(100):
        buf.push(_tagged(i, (1, 1, 1)))
    idx = buf.sample_indices(100_000, np.random.default_rng(0))
    counts = np.bincount(idx, minlength=100)
    assert counts.size == 100  # never beyond the filled region
    assert stats.chisquare(counts).pvalue > 0.001


def test_never_samples_unfilled():
    buf = ReplayBuffer((1, 1, 1), 1, capacity=1000)
    for i in range(5):
        buf.push(_tagged(i, (1, 1, 1)))
    assert buf.sample_indices(10_000, np.random.default_rng(1)).max() < 5


def test_empty_sample_is_usage_error():
    with pytest.raises(UsageError):
        ReplayBuffer((1, 1, 1), 1).sample(1, np.random.default_rng(0))


def test_exact_bytes_and_memory_bound():
    buf = ReplayBuffer((9, 48, 48), 2, capacity=100)
    rng = np.random.default_rng(0)
    obs = rng.integers(0, 256, (9, 48, 48), dtype=np.uint8)
    buf.push(Transition(obs, [0.1, 0.2], 1.0, obs, False))
    assert buf.obs[0].tobytes() == obs.tobytes()
    arrays = (buf.obs, buf.next_obs, buf.actions, buf.rewards, buf.dones)
    assert sum(a.nbytes for a in arrays) == 100 * buf.nbytes_per_transition()


def test_snapshot_roundtrip(tmp_path):
    buf = ReplayBuffer((1, 2, 2), 1, capacity=4)
    for i in range(6):
        buf.push(_tagged(i))
    buf.save(tmp_path / "buf.ckpt")
    again = ReplayBuffer.load(tmp_path / "buf.ckpt")
    assert again.size == 4 and again.index == buf.index
    np.testing.assert_array_equal(again.obs, buf.obs)
    np.testing.assert_array_equal(again.rewards, buf.rewards)
