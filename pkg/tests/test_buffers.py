import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from algos.buffers import ReplayBuffer, RolloutBuffer, RunningMeanStd, WorkerRollout, gae_compute
from core.errors import ShapeError


def brute_force_gae(rewards, values, dones, last_value, gamma, lam):
    n = len(rewards)
    next_values = np.append(values[1:], last_value)
    deltas = rewards + gamma * (1 - dones) * next_values - values
    out = np.zeros(n)
    for t in range(n):
        weight = 1.0
        for k in range(t, n):
            out[t] += weight * deltas[k]
            if dones[k]:
                break
            weight *= gamma * lam
    return out


class TestGae:
    def test_lambda_zero_is_one_step_td(self, rng):
        r, v = rng.normal(size=6), rng.normal(size=6)
        d = np.array([0, 0, 1, 0, 0, 0], dtype=float)
        adv, _ = gae_compute(r, v, d, 0.7, 0.99, 0.0)
        next_v = np.append(v[1:], 0.7)
        np.testing.assert_allclose(adv, r + 0.99 * (1 - d) * next_v - v, rtol=1e-12)

    def test_gamma_zero(self, rng):
        r, v = rng.normal(size=5), rng.normal(size=5)
        adv, ret = gae_compute(r, v, np.zeros(5), 3.0, 0.0, 0.95)
        np.testing.assert_allclose(adv, r - v)
        np.testing.assert_allclose(ret, r)

    @settings(max_examples=30)
    @given(st.integers(1, 12), st.floats(0, 1), st.floats(0, 1), st.integers(0, 2 ** 31 - 1))
    def test_matches_brute_force_sum(self, n, gamma, lam, seed):
        rng = np.random.default_rng(seed)
        r, v = rng.normal(size=n), rng.normal(size=n)
        d = (rng.uniform(size=n) < 0.2).astype(float)
        adv, ret = gae_compute(r, v, d, 0.3, gamma, lam)
        np.testing.assert_allclose(adv, brute_force_gae(r, v, d, 0.3, gamma, lam), rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(ret, adv + v)

    def test_no_bootstrap_across_episode_end(self):
        adv, _ = gae_compute(np.ones(2), np.zeros(2), np.array([1.0, 0.0]), 100.0, 0.9, 0.9)
        assert adv[0] == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            gae_compute(np.zeros(3), np.zeros(2), np.zeros(3), 0.0, 0.9, 0.9)


class TestReplayBuffer:
    def test_wraps_around(self):
        buf = ReplayBuffer(3, 1, 1)
        for i in range(5):
            buf.add([i], [0.0], float(i), [i + 1], False)
        assert len(buf) == 3
        assert sorted(buf.rewards.tolist()) == [2.0, 3.0, 4.0]

    def test_samples_only_filled_slots(self, rng):
        buf = ReplayBuffer(100, 2, 1)
        buf.add([1.0, 2.0], [0.5], -1.0, [1.5, 2.5], True)
        batch = buf.sample(8, rng)
        assert len(batch) == 8
        np.testing.assert_array_equal(batch.rewards, np.full(8, -1.0))
        np.testing.assert_array_equal(batch.dones, np.ones(8))

    def test_seeded_sampling(self):
        buf = ReplayBuffer(10, 1, 1)
        for i in range(10):
            buf.add([i], [0.0], float(i), [i], False)
        a = buf.sample(5, np.random.default_rng(1)).rewards
        b = buf.sample(5, np.random.default_rng(1)).rewards
        np.testing.assert_array_equal(a, b)

    def test_empty_buffer(self, rng):
        with pytest.raises(ValueError):
            ReplayBuffer(4, 1, 1).sample(2, rng)

    def test_observation_sample_is_capped(self, rng):
        buf = ReplayBuffer(10, 2, 1)
        for _ in range(3):
            buf.add([0.0, 0.0], [0.0], 0.0, [0.0, 0.0], False)
        assert buf.sample_observations(256, rng).shape == (3, 2)


class TestRunningMeanStd:
    def test_merging_batches_matches_full_statistics(self, rng):
        data = rng.normal(loc=3.0, scale=2.0, size=(1000, 2))
        rms = RunningMeanStd((2,), epsilon=1e-12)
        for chunk in np.array_split(data, 7):
            rms.update(chunk)
        np.testing.assert_allclose(rms.mean, data.mean(axis=0), rtol=1e-9)
        np.testing.assert_allclose(rms.var, data.var(axis=0), rtol=1e-8)

    def test_copy_is_independent(self, rng):
        rms = RunningMeanStd()
        rms.update(rng.normal(size=10))
        clone = rms.copy()
        rms.update(rng.normal(size=10) + 5)
        assert clone.mean != rms.mean


def worker(steps, value=0.0):
    return WorkerRollout(
        raw_observations=np.zeros((steps, 2)),
        observations=np.zeros((steps, 2)),
        actions=np.zeros((steps, 1)),
        log_probs=np.zeros(steps),
        values=np.full(steps, value),
        raw_rewards=np.ones(steps),
        dones=np.zeros(steps),
        terminal_values=np.zeros(steps),
        last_value=value,
    )


class TestRolloutBuffer:
    def test_worker_major_flattening(self):
        buf = RolloutBuffer.from_workers([worker(3, 0.0), worker(3, 1.0)], [np.zeros(3), np.ones(3)])
        buf.compute_advantages(0.99, 0.95)
        flat = buf.flat()
        np.testing.assert_array_equal(flat["values"], [0, 0, 0, 1, 1, 1])
        assert flat["observations"].shape == (6, 2)

    def test_unequal_lengths(self):
        with pytest.raises(ShapeError):
            RolloutBuffer.from_workers([worker(3), worker(2)], [np.zeros(3), np.zeros(2)])

    def test_flat_needs_advantages(self):
        buf = RolloutBuffer.from_workers([worker(2)], [np.zeros(2)])
        with pytest.raises(ValueError):
            buf.flat()
