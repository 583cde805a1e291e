import numpy as np
import pytest

import algos.ppo as ppo_module
from algos.policies import PpoPolicy
from algos.ppo import PpoAgent, compute_ppo_losses, normalize_advantages, ppo_loss, ppo_train
from core.envs import make_env
from core.errors import NonFiniteError
from utils.helpers import SeedStreams

PPO_KEYS = {
    "algo.name": "ppo",
    "algo.n_workers": 2,
    "algo.n_steps": 64,
    "algo.n_epochs": 2,
    "algo.batch_size": 32,
    "algo.learning_rate": 3e-4,
    "run.total_steps": 256,
}


def worker_envs(n, env_id="double_integrator"):
    return [make_env(env_id) for _ in range(n)]


def layer_by_layer(net, x):
    h = np.array(x, dtype=float)
    latent = h
    for k, layer in enumerate(net.layers):
        if k == len(net.layers) - 1:
            latent = h
        h = layer.weight @ h + layer.bias
        if layer.activation == "tanh":
            h = np.tanh(h)
    return latent, h


def hand_batch(policy, rng, n=8):
    obs = rng.normal(size=(n, 2))
    actions = rng.normal(scale=0.3, size=(n, 1))
    current = policy.evaluate(obs, actions).log_prob
    return {
        "observations": obs,
        "actions": actions,
        "log_probs": current + rng.normal(scale=0.3, size=n),
        "advantages": normalize_advantages(rng.normal(size=n)),
        "returns": rng.normal(size=n),
    }


def gsde_policy(rng, features="latent"):
    return PpoPolicy.build(2, 1, [4], rng, use_gsde=True, log_std_init=-1.0, features=features, activation="tanh")


class TestPpoLoss:
    def test_unchanged_policy_gives_negative_mean_advantage(self, rng):
        policy = gsde_policy(rng)
        batch = hand_batch(policy, rng)
        batch["log_probs"] = policy.evaluate(batch["observations"], batch["actions"]).log_prob
        agent = PpoAgent(policy, 2)
        policy_loss, _, _ = ppo_loss(batch, agent, 0.4)
        assert policy_loss == pytest.approx(-np.mean(batch["advantages"]), abs=1e-12)

    def test_clip_caps_positive_advantage(self, rng):
        policy = gsde_policy(rng)
        batch = hand_batch(policy, rng)
        batch["log_probs"] = policy.evaluate(batch["observations"], batch["actions"]).log_prob - np.log(2.0)
        batch["advantages"] = np.abs(batch["advantages"]) + 0.1
        report = compute_ppo_losses(policy, batch, 0.4)
        assert report.policy_loss == pytest.approx(-1.4 * np.mean(batch["advantages"]), rel=1e-12)
        assert report.clip_fraction == 1.0
        # clipped samples contribute no policy gradient
        assert not np.any(report.grads[0]) and not np.any(report.grads[-1])

    def test_matches_straight_line_recomputation(self, rng):
        policy = gsde_policy(rng)
        batch = hand_batch(policy, rng)
        clip = 0.4
        surrogate, squared_errors, entropies = [], [], []
        sigma = np.exp(policy.log_std)
        for s, a, old, adv, ret in zip(batch["observations"], batch["actions"], batch["log_probs"],
                                       batch["advantages"], batch["returns"]):
            latent, mean = layer_by_layer(policy.net, s)
            logp, entropy = 0.0, 0.0
            for j in range(len(mean)):
                std = np.sqrt(sum((latent[i] * sigma[i, j]) ** 2 for i in range(len(latent))))
                logp += -(a[j] - mean[j]) ** 2 / (2 * std ** 2) - np.log(std) - 0.5 * np.log(2 * np.pi)
                entropy += 0.5 + 0.5 * np.log(2 * np.pi) + np.log(std)
            ratio = np.exp(logp - old)
            surrogate.append(min(ratio * adv, min(max(ratio, 1 - clip), 1 + clip) * adv))
            squared_errors.append((ret - layer_by_layer(policy.value_net, s)[1][0]) ** 2)
            entropies.append(entropy)
        expected = (-np.mean(surrogate), np.mean(squared_errors), np.mean(entropies))
        np.testing.assert_allclose(ppo_loss(batch, PpoAgent(policy, 2), clip), expected, rtol=1e-12, atol=1e-14)

    def test_non_finite_ratio(self, rng):
        policy = gsde_policy(rng)
        batch = hand_batch(policy, rng)
        batch["log_probs"] = batch["log_probs"] - 1e4
        with pytest.raises(NonFiniteError):
            compute_ppo_losses(policy, batch, 0.4)


class TestPpoGradients:
    @pytest.mark.parametrize("use_gsde, features", [(True, "state"), (False, "latent")])
    def test_total_loss_gradients_match_finite_differences(self, use_gsde, features):
        rng = np.random.default_rng(6)
        policy = PpoPolicy.build(2, 1, [4], rng, use_gsde=use_gsde, log_std_init=-0.5, features=features,
                                 activation="tanh")
        batch = hand_batch(policy, rng)
        vf_coef, ent_coef = 0.5, 0.01
        report = compute_ppo_losses(policy, batch, 0.4, vf_coef, ent_coef)
        saved = [p.copy() for p in policy.parameters()]

        def total_loss(params):
            policy.set_parameters(params)
            try:
                r = compute_ppo_losses(policy, batch, 0.4, vf_coef, ent_coef)
                return r.policy_loss + vf_coef * r.value_loss - ent_coef * r.entropy
            finally:
                policy.set_parameters(saved)

        h = 1e-6
        for k, p in enumerate(saved):
            for idx in np.ndindex(p.shape):
                plus = [q.copy() for q in saved]
                minus = [q.copy() for q in saved]
                plus[k][idx] += h
                minus[k][idx] -= h
                numeric = (total_loss(plus) - total_loss(minus)) / (2 * h)
                assert report.grads[k][idx] == pytest.approx(numeric, rel=1e-5, abs=1e-8)


class TestAdvantageNormalisation:
    def test_zero_mean_unit_std(self, rng):
        adv = normalize_advantages(rng.normal(loc=3.0, scale=5.0, size=100))
        assert adv.mean() == pytest.approx(0.0, abs=1e-12)
        assert adv.std() == pytest.approx(1.0, rel=1e-6)

    def test_constant_advantages_stay_finite(self):
        assert not np.any(normalize_advantages(np.full(4, 2.0)))


class TestPpoTrain:
    def test_episodic_interval_keeps_one_matrix_per_rollout(self, make_config):
        config = make_config(**{**PPO_KEYS, "algo.n_workers": 1, "algo.n_steps": 16, "noise.gsde_interval": 16,
                                "run.total_steps": 32})
        result = ppo_train(config, worker_envs(1), SeedStreams(0))
        assert [len(rollout[0]) for rollout in result.rollout_noise] == [1, 1]

    def test_interval_sets_draws_per_rollout(self, make_config):
        config = make_config(**{**PPO_KEYS, "algo.n_workers": 1, "algo.n_steps": 16, "run.total_steps": 16})
        result = ppo_train(config, worker_envs(1), SeedStreams(0))
        assert config.noise.gsde_interval == 4
        matrices = result.rollout_noise[0][0]
        assert len(matrices) == 4
        assert len({m.tobytes() for m in matrices}) == 4

    def test_every_worker_draws_its_own_matrix(self, make_config):
        config = make_config(**{**PPO_KEYS, "algo.n_workers": 16, "algo.n_steps": 4, "run.total_steps": 64})
        result = ppo_train(config, worker_envs(16), SeedStreams(1))
        first = [matrices[0] for matrices in result.rollout_noise[0]]
        assert len(first) == 16
        assert len({m.tobytes() for m in first}) == 16

    def test_episode_timesteps_interleave_workers(self, make_config):
        result = ppo_train(make_config(**PPO_KEYS), worker_envs(2), SeedStreams(2))
        assert [r.timestep for r in result.log] == [199, 200]
        assert result.total_steps == 256

    def test_budget_rounds_down_to_whole_worker_steps(self, make_config):
        config = make_config(**{**PPO_KEYS, "algo.n_workers": 3, "algo.n_steps": 10, "run.total_steps": 25})
        assert ppo_train(config, worker_envs(3), SeedStreams(3)).total_steps == 24

    def test_zero_budget(self, make_config):
        result = ppo_train(make_config(**{**PPO_KEYS, "run.total_steps": 0}), worker_envs(2), SeedStreams(0))
        assert result.log == [] and result.total_steps == 0

    def test_normalisation_statistics_advance(self, make_config):
        result = ppo_train(make_config(**PPO_KEYS), worker_envs(2), SeedStreams(4))
        assert result.agent.obs_rms.count == pytest.approx(256 + 1e-4)
        assert result.agent.ret_rms.count == pytest.approx(256 + 1e-4)

    def test_gaussian_noise_records_no_matrices(self, make_config):
        config = make_config(**{**PPO_KEYS, "noise.type": "gaussian", "algo.n_workers": 2})
        result = ppo_train(config, worker_envs(2), SeedStreams(5))
        assert all(not matrices for rollout in result.rollout_noise for matrices in rollout)

    def test_parallel_collection_matches_serial(self, make_config):
        serial = ppo_train(make_config(**PPO_KEYS), worker_envs(2), SeedStreams(7))
        parallel = ppo_train(make_config(**{**PPO_KEYS, "run.parallel_workers": True}), worker_envs(2), SeedStreams(7))
        assert serial.log == parallel.log
        for a, b in zip(serial.agent.policy.parameters(), parallel.agent.policy.parameters()):
            np.testing.assert_array_equal(a, b)

    def test_divergence_reports_timestep(self, make_config, monkeypatch):
        def explode(*args, **kwargs):
            raise NonFiniteError("policy parameter 0 became non-finite")

        monkeypatch.setattr(ppo_module, "ppo_update", explode)
        with pytest.raises(NonFiniteError) as info:
            ppo_train(make_config(**PPO_KEYS), worker_envs(2), SeedStreams(0))
        assert info.value.timestep == 128

    def test_requires_a_worker(self, make_config):
        with pytest.raises(ValueError):
            ppo_train(make_config(**PPO_KEYS), [], SeedStreams(0))


@pytest.mark.slow
def test_ppo_gsde_improves_by_five_standard_errors(make_config, improvement_margin):
    from utils.metrics import evaluate_policy

    keys = {**PPO_KEYS, "noise.type": "gsde", "noise.gsde_interval": 4, "algo.net_arch": [64, 64],
            "algo.n_workers": 4, "algo.n_steps": 512, "algo.n_epochs": 10, "algo.batch_size": 128,
            "run.total_steps": 100_000}
    config = make_config(**keys)
    before, after = [], []
    for seed in range(5):
        initial = PpoAgent.from_config(config, 3, 1, SeedStreams(seed).policy_init)
        before.append(evaluate_policy(initial, make_env("double_integrator"), 10, seed=99).mean_return)
        result = ppo_train(config, worker_envs(4), SeedStreams(seed))
        after.append(evaluate_policy(result.agent, make_env("double_integrator"), 10, seed=99).mean_return)
    assert improvement_margin(before, after) >= 5.0
