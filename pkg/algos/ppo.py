"""Clipped-surrogate PPO with per-worker gSDE noise and running normalisation."""
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import List

import numpy as np

from algos.buffers import RolloutBuffer, RunningMeanStd, WorkerRollout
from algos.common import (
    EpisodeCallback,
    EpisodeRecord,
    TrainingResult,
    check_finite,
    pack_adam,
    pack_params,
    scheduled,
    unpack_adam,
    unpack_params,
)
from algos.policies import PpoPolicy
from core.envs import action_dim, action_limit, observation_dim, scale_action
from core.errors import NonFiniteError
from core.nn import AdamState, adam_step, clip_grad_norm
from utils.metrics import Trajectory, continuity_cost

logger = logging.getLogger(__name__)

CLIP_OBS = 10.0
CLIP_REWARD = 10.0
NORM_EPS = 1e-8
ADVANTAGE_EPS = 1e-8


def normalize_observation(obs, rms: RunningMeanStd):
    return np.clip((np.asarray(obs) - rms.mean) / np.sqrt(rms.var + NORM_EPS), -CLIP_OBS, CLIP_OBS)


def normalize_advantages(advantages):
    advantages = np.asarray(advantages, dtype=np.float64)
    return (advantages - advantages.mean()) / (advantages.std() + ADVANTAGE_EPS)


class PpoAgent:
    def __init__(self, policy: PpoPolicy, observation_dim, learning_rate=3e-5, normalize=True):
        self.policy = policy
        self.normalize = normalize
        self.obs_rms = RunningMeanStd((observation_dim,))
        self.ret_rms = RunningMeanStd(())
        self.optimizer = AdamState.for_params(policy.parameters(), learning_rate)

    @classmethod
    def from_config(cls, config, observation_dim, action_dim, rng):
        algo, noise = config.algo, config.noise
        policy = PpoPolicy.build(
            observation_dim, action_dim, algo.net_arch, rng,
            use_gsde=noise.type == "gsde",
            log_std_init=noise.log_std_init,
            sample_interval=noise.gsde_interval,
            transform="expln" if noise.use_expln else "exp",
            features=noise.features,
            activation=algo.activation,
        )
        return cls(policy, observation_dim, algo.learning_rate, algo.normalize)

    def observe(self, obs, rms=None):
        if not self.normalize:
            return np.asarray(obs, dtype=np.float64)
        return normalize_observation(obs, self.obs_rms if rms is None else rms)

    def predict(self, observation):
        """Deterministic mean action clipped to [-1, 1]."""
        action = self.policy.deterministic(self.observe(observation))
        return action[0] if np.ndim(observation) == 1 else action

    def state_dict(self):
        state = {"kind": "ppo"}
        state.update(pack_params("policy", self.policy.parameters()))
        state.update(pack_adam("optimizer", self.optimizer))
        state.update({
            "obs_rms.mean": self.obs_rms.mean, "obs_rms.var": self.obs_rms.var, "obs_rms.count": self.obs_rms.count,
            "ret_rms.mean": np.atleast_1d(self.ret_rms.mean), "ret_rms.var": np.atleast_1d(self.ret_rms.var),
            "ret_rms.count": self.ret_rms.count,
        })
        return state

    def load_state_dict(self, state):
        self.policy.set_parameters(unpack_params(state, "policy", self.policy.parameters()))
        self.optimizer = unpack_adam(state, "optimizer", self.optimizer)
        for name in ("obs_rms", "ret_rms"):
            rms = getattr(self, name)
            rms.mean = np.asarray(state[f"{name}.mean"], dtype=np.float64).reshape(np.shape(rms.mean))
            rms.var = np.asarray(state[f"{name}.var"], dtype=np.float64).reshape(np.shape(rms.var))
            rms.count = float(state[f"{name}.count"])


@dataclass
class PpoLossReport:
    policy_loss: float
    value_loss: float
    entropy: float
    grads: list
    clip_fraction: float


def compute_ppo_losses(policy: PpoPolicy, batch, clip_range, vf_coef=0.5, ent_coef=0.0) -> PpoLossReport:
    """Losses and gradients on a minibatch whose advantages are already normalised."""
    ev = policy.evaluate(batch["observations"], batch["actions"])
    advantages = np.asarray(batch["advantages"], dtype=np.float64)
    returns = np.asarray(batch["returns"], dtype=np.float64)
    n = advantages.shape[0]

    ratio = np.exp(ev.log_prob - batch["log_probs"])
    if not np.all(np.isfinite(ratio)):
        raise NonFiniteError(f"importance ratio is non-finite (max logpi change {np.max(ev.log_prob - batch['log_probs']):.4g})")
    clipped = np.clip(ratio, 1.0 - clip_range, 1.0 + clip_range)
    policy_loss = float(-np.mean(np.minimum(ratio * advantages, clipped * advantages)))
    value_loss = float(np.mean(np.square(returns - ev.values)))
    entropy = float(np.mean(ev.entropy))

    inactive = ((advantages > 0) & (ratio > 1.0 + clip_range)) | ((advantages < 0) & (ratio < 1.0 - clip_range))
    d_log_prob = -advantages * ratio * (~inactive) / n
    d_values = vf_coef * 2.0 * (ev.values - returns) / n
    d_entropy = np.full(n, -ent_coef / n)
    grads = policy.backward(ev, d_log_prob, d_entropy, d_values)
    return PpoLossReport(policy_loss, value_loss, entropy, grads, float(np.mean(inactive)))


def ppo_loss(batch, agent: PpoAgent, clip_range, vf_coef=0.5, ent_coef=0.0):
    """(policy loss, value loss, entropy bonus) for one minibatch."""
    report = compute_ppo_losses(agent.policy, batch, clip_range, vf_coef, ent_coef)
    return report.policy_loss, report.value_loss, report.entropy


class RolloutWorker:
    """One environment with its own noise generator and episode bookkeeping."""

    def __init__(self, index, env, env_seed, rng):
        self.index = index
        self.env = env
        self.rng = rng
        self.obs, _ = env.reset(seed=env_seed)
        self.episode_return = 0.0
        self.executed = []
        self.discounted_return = 0.0

    def collect(self, agent: PpoAgent, policy: PpoPolicy, obs_rms, n_steps) -> WorkerRollout:
        """Run ``n_steps`` transitions against a read-only policy snapshot."""
        distribution = policy.make_distribution()
        obs_dim = observation_dim(self.env)
        raw_obs, norm_obs = np.zeros((n_steps, obs_dim)), np.zeros((n_steps, obs_dim))
        actions = np.zeros((n_steps, action_dim(self.env)))
        log_probs, values, rewards = np.zeros(n_steps), np.zeros(n_steps), np.zeros(n_steps)
        dones, terminal_values = np.zeros(n_steps), np.zeros(n_steps)
        noise_matrices, episodes = [], []

        for t in range(n_steps):
            obs = agent.observe(self.obs, obs_rms)
            action, log_prob, value = policy.act(obs[None], distribution, self.rng)
            if distribution is not None and distribution.steps_since_resample == 1:
                noise_matrices.append(distribution.theta_eps.copy())
            physical = scale_action(self.env, action[0])
            next_obs, reward, terminated, truncated, _ = self.env.step(physical)
            done = terminated or truncated

            raw_obs[t], norm_obs[t], actions[t] = self.obs, obs, action[0]
            log_probs[t], values[t], rewards[t], dones[t] = log_prob[0], value[0], reward, done
            if truncated and not terminated:
                terminal_values[t] = policy.values(agent.observe(next_obs, obs_rms)[None])[0]

            self.episode_return += reward
            self.executed.append(physical)
            if done:
                cost = continuity_cost(Trajectory.symmetric(np.array(self.executed), action_limit(self.env))) \
                    if len(self.executed) > 1 else 0.0
                episodes.append((t, self.episode_return, cost))
                self.episode_return, self.executed = 0.0, []
                self.obs, _ = self.env.reset()
            else:
                self.obs = next_obs

        last_value = policy.values(agent.observe(self.obs, obs_rms)[None])[0]
        return WorkerRollout(raw_obs, norm_obs, actions, log_probs, values, rewards, dones, terminal_values,
                             float(last_value), noise_matrices, episodes)

    def process_rewards(self, rollout: WorkerRollout, gamma):
        """Discounted running returns used to fit the reward scale; resets at episode ends."""
        returns = np.zeros(len(rollout))
        for t in range(len(rollout)):
            self.discounted_return = self.discounted_return * gamma + rollout.raw_rewards[t]
            returns[t] = self.discounted_return
            if rollout.dones[t]:
                self.discounted_return = 0.0
        return returns


def collect_rollouts(agent: PpoAgent, workers: List[RolloutWorker], n_steps, parallel=False) -> List[WorkerRollout]:
    """Collect from every worker against a frozen snapshot; results come back in worker order."""
    policy = agent.policy.copy()
    obs_rms = agent.obs_rms.copy()
    if not parallel or len(workers) == 1:
        return [w.collect(agent, policy, obs_rms, n_steps) for w in workers]
    results = [None] * len(workers)
    with ThreadPoolExecutor(max_workers=len(workers)) as executor:
        futures = {executor.submit(w.collect, agent, policy, obs_rms, n_steps): w.index for w in workers}
        for future in as_completed(futures):
            results[futures[future]] = future.result()
    return results


def ppo_update(agent: PpoAgent, buffer: RolloutBuffer, config, rng, progress):
    algo = config.algo
    data = buffer.flat()
    n = data["advantages"].shape[0]
    lr = scheduled(algo.learning_rate, algo.lr_schedule, progress)
    clip_range = scheduled(algo.clip_range, algo.clip_range_schedule, progress)
    report = None
    for _ in range(algo.n_epochs):
        order = rng.permutation(n)
        for start in range(0, n, algo.batch_size):
            idx = order[start:start + algo.batch_size]
            batch = {key: value[idx] for key, value in data.items()}
            batch["advantages"] = normalize_advantages(batch["advantages"])
            report = compute_ppo_losses(agent.policy, batch, clip_range, algo.vf_coef, algo.ent_coef)
            grads = clip_grad_norm(report.grads, algo.max_grad_norm)
            params, agent.optimizer = adam_step(agent.policy.parameters(), grads, agent.optimizer, lr)
            check_finite(params, "policy")
            agent.policy.set_parameters(params)
    return report


def ppo_train(config, envs, streams, callback: EpisodeCallback = None, agent=None) -> TrainingResult:
    """``envs`` is one environment per worker; their count must equal algo.n_workers."""
    algo = config.algo
    budget = config.run.total_steps
    if not envs:
        raise ValueError("ppo_train needs at least one worker environment")
    if agent is None:
        agent = PpoAgent.from_config(config, observation_dim(envs[0]), action_dim(envs[0]), streams.policy_init)
    result = TrainingResult(agent)
    if budget == 0:
        return result

    workers = [
        RolloutWorker(w, env, int(streams.env.integers(2 ** 31 - 1)), streams.child(f"noise/worker{w}"))
        for w, env in enumerate(envs)
    ]
    n_workers = len(workers)
    steps = episode = 0
    while steps < budget:
        n_steps = min(algo.n_steps, (budget - steps) // n_workers)
        if n_steps == 0:
            break
        rollouts = collect_rollouts(agent, workers, n_steps, config.run.parallel_workers)
        result.rollout_noise.append([r.noise_matrices for r in rollouts])

        finished = sorted(
            (steps + t * n_workers + w + 1, ret, cost)
            for w, rollout in enumerate(rollouts)
            for t, ret, cost in rollout.episodes
        )
        for timestep, ret, cost in finished:
            episode += 1
            record = EpisodeRecord(timestep, episode, ret, cost)
            result.log.append(record)
            logger.debug("episode %d @ %d: return %.3f, continuity %.3f", episode, timestep, ret, cost)
            if callback is not None:
                callback(record, agent)

        rewards = []
        if agent.normalize:
            discounted = [workers[w].process_rewards(r, algo.gamma) for w, r in enumerate(rollouts)]
            agent.ret_rms.update(np.concatenate(discounted))
            scale = np.sqrt(agent.ret_rms.var + NORM_EPS)
            for r in rollouts:
                rewards.append(np.clip(r.raw_rewards / scale, -CLIP_REWARD, CLIP_REWARD) + algo.gamma * r.terminal_values)
            agent.obs_rms.update(np.concatenate([r.raw_observations for r in rollouts]))
        else:
            rewards = [r.raw_rewards + algo.gamma * r.terminal_values for r in rollouts]

        buffer = RolloutBuffer.from_workers(rollouts, rewards)
        buffer.compute_advantages(algo.gamma, algo.gae_lambda)
        steps += n_steps * n_workers
        try:
            report = ppo_update(agent, buffer, config, streams.update, steps / budget)
        except NonFiniteError as e:
            e.timestep = steps
            raise
        logger.debug("update @ %d: policy %.4f, value %.4f, clip fraction %.3f", steps, report.policy_loss,
                     report.value_loss, report.clip_fraction)
    result.total_steps = steps
    return result
