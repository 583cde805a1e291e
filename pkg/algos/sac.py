"""Soft Actor-Critic with episodic training and pluggable exploration."""
import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from algos.buffers import ReplayBatch, ReplayBuffer
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
from algos.policies import SacActor
from core.distributions import squash
from core.envs import action_dim, action_limit, observation_dim, scale_action
from core.errors import NonFiniteError, ShapeError
from core.exploration import OuProcess, ParamNoise, action_distance, adapt_param_noise, ou_step, perturb_params
from core.nn import AdamState, Mlp, adam_step, mlp_backward, mlp_forward
from utils.metrics import Trajectory, continuity_cost

logger = logging.getLogger(__name__)

PARAM_NOISE_STATES = 256


def sac_critic_target(rewards, dones, q1_next, q2_next, log_prob_next, alpha, gamma):
    """y = r + gamma (1 - done) (min(q1', q2') - alpha logpi')."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    soft_value = np.minimum(q1_next, q2_next) - alpha * np.asarray(log_prob_next)
    return np.asarray(rewards) + gamma * (1.0 - np.asarray(dones, dtype=np.float64)) * soft_value


def soft_update(online, target, tau):
    """target <- tau * online + (1 - tau) * target for aligned parameter lists."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    if len(online) != len(target):
        raise ShapeError(f"{len(online)} online arrays vs {len(target)} target arrays")
    updated = []
    for o, t in zip(online, target):
        if np.shape(o) != np.shape(t):
            raise ShapeError(f"online shape {np.shape(o)} != target shape {np.shape(t)}")
        updated.append(tau * np.asarray(o) + (1.0 - tau) * np.asarray(t))
    return updated


def q_forward(critic: Mlp, observations, actions):
    inputs = np.concatenate([np.atleast_2d(observations), np.atleast_2d(actions)], axis=1)
    _, q, tape = mlp_forward(critic, inputs)
    return q[:, 0], tape


class SacAgent:
    def __init__(self, actor: SacActor, critics: List[Mlp], gamma=0.98, tau=0.02, learning_rate=7.3e-4,
                 target_entropy=None, ent_coef_init=1.0):
        if len(critics) != 2:
            raise ValueError("SAC uses exactly two critics")
        self.actor = actor
        self.critics = critics
        self.critic_targets = [c.copy() for c in critics]
        self.gamma = float(gamma)
        self.tau = float(tau)
        self.log_alpha = np.array([np.log(ent_coef_init)])
        self.target_entropy = -float(actor.net.output_dim) if target_entropy is None else float(target_entropy)
        self.actor_opt = AdamState.for_params(actor.parameters(), learning_rate)
        self.critic_opt = AdamState.for_params(self.critic_parameters(), learning_rate)
        self.alpha_opt = AdamState.for_params([self.log_alpha], learning_rate)

    @classmethod
    def from_config(cls, config, observation_dim, action_dim, rng):
        algo, noise = config.algo, config.noise
        actor = SacActor.build(
            observation_dim, action_dim, algo.net_arch, rng,
            use_gsde=noise.type == "gsde",
            log_std_init=noise.log_std_init,
            sample_interval=noise.gsde_interval,
            transform="expln" if noise.use_expln else "exp",
            features=noise.features,
            activation=algo.activation,
            clip_mean=algo.clip_mean,
        )
        critics = [Mlp.build(observation_dim + action_dim, algo.net_arch, 1, rng, algo.activation) for _ in range(2)]
        return cls(actor, critics, algo.gamma, algo.tau, algo.learning_rate, algo.target_entropy, algo.ent_coef_init)

    @property
    def alpha(self):
        return float(np.exp(self.log_alpha[0]))

    def critic_parameters(self):
        return self.critics[0].parameters() + self.critics[1].parameters()

    def set_critic_parameters(self, params):
        k = len(self.critics[0].parameters())
        self.critics = [self.critics[0].with_parameters(params[:k]), self.critics[1].with_parameters(params[k:])]

    def predict(self, observation):
        """Deterministic squashed-mean action in [-1, 1]; no agent state changes."""
        action = self.actor.deterministic(observation)
        return action[0] if np.ndim(observation) == 1 else action

    def state_dict(self):
        state = {"kind": "sac"}
        state.update(pack_params("actor", self.actor.parameters()))
        state.update(pack_params("critic", self.critic_parameters()))
        for k, target in enumerate(self.critic_targets):
            state.update(pack_params(f"critic_target{k}", target.parameters()))
        state["log_alpha"] = self.log_alpha
        state.update(pack_adam("actor_opt", self.actor_opt))
        state.update(pack_adam("critic_opt", self.critic_opt))
        state.update(pack_adam("alpha_opt", self.alpha_opt))
        return state

    def load_state_dict(self, state):
        self.actor.set_parameters(unpack_params(state, "actor", self.actor.parameters()))
        self.set_critic_parameters(unpack_params(state, "critic", self.critic_parameters()))
        self.critic_targets = [
            t.with_parameters(unpack_params(state, f"critic_target{k}", t.parameters()))
            for k, t in enumerate(self.critic_targets)
        ]
        self.log_alpha = unpack_params({"log_alpha.0": state["log_alpha"]}, "log_alpha", [self.log_alpha])[0]
        self.actor_opt = unpack_adam(state, "actor_opt", self.actor_opt)
        self.critic_opt = unpack_adam(state, "critic_opt", self.critic_opt)
        self.alpha_opt = unpack_adam(state, "alpha_opt", self.alpha_opt)


@dataclass
class SacLossReport:
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    critic_grads: list
    actor_grads: list
    alpha_grad: np.ndarray
    log_prob: np.ndarray


def compute_sac_losses(agent: SacAgent, batch: ReplayBatch, rng) -> SacLossReport:
    """All three losses and their gradients, evaluated on the agent's current parameters.

    The temperature used in the critic and actor losses is exp(log_alpha) before this step's
    update; the log-probabilities are constants in the temperature loss.
    """
    n = len(batch)
    alpha = agent.alpha

    nxt = agent.actor.sample(batch.next_observations, rng)
    q1_next, _ = q_forward(agent.critic_targets[0], batch.next_observations, nxt.action)
    q2_next, _ = q_forward(agent.critic_targets[1], batch.next_observations, nxt.action)
    y = sac_critic_target(batch.rewards, batch.dones, q1_next, q2_next, nxt.log_prob, alpha, agent.gamma)

    critic_loss, critic_grads = 0.0, []
    for critic in agent.critics:
        q, tape = q_forward(critic, batch.observations, batch.actions)
        diff = q - y
        critic_loss += 0.5 * float(np.mean(np.square(diff)))
        grads, _ = mlp_backward(critic, tape, (diff / n)[:, None])
        critic_grads.extend(grads)

    pi = agent.actor.sample(batch.observations, rng)
    q_pi = [q_forward(c, batch.observations, pi.action) for c in agent.critics]
    first_is_min = q_pi[0][0] <= q_pi[1][0]
    min_q = np.where(first_is_min, q_pi[0][0], q_pi[1][0])
    actor_loss = float(np.mean(alpha * pi.log_prob - min_q))
    d_action = np.zeros_like(pi.action)
    obs_dim = batch.observations.shape[1]
    for critic, (_, tape), mask in zip(agent.critics, q_pi, (first_is_min, ~first_is_min)):
        _, d_inputs = mlp_backward(critic, tape, (-mask.astype(np.float64) / n)[:, None])
        d_action += d_inputs[:, obs_dim:]
    actor_grads = agent.actor.backward(pi, np.full(n, alpha / n), d_action)

    entropy_gap = pi.log_prob + agent.target_entropy
    alpha_loss = float(-np.mean(agent.log_alpha[0] * entropy_gap))
    alpha_grad = np.array([-np.mean(entropy_gap)])

    for name, value in (("critic", critic_loss), ("actor", actor_loss), ("alpha", alpha_loss)):
        if not np.isfinite(value):
            raise NonFiniteError(
                f"{name} loss is {value} (alpha={alpha:.4g}, mean logpi={np.mean(pi.log_prob):.4g}, "
                f"mean target={np.mean(y):.4g})"
            )
    return SacLossReport(critic_loss, actor_loss, alpha_loss, critic_grads, actor_grads, alpha_grad, pi.log_prob)


def sac_losses(batch: ReplayBatch, agent: SacAgent, rng):
    """(critic loss, actor loss, alpha loss) for one minibatch."""
    report = compute_sac_losses(agent, batch, rng)
    return report.critic_loss, report.actor_loss, report.alpha_loss


def sac_update(agent: SacAgent, batch: ReplayBatch, rng, learning_rate=None) -> SacLossReport:
    """One gradient step: fresh theta_eps, simultaneous actor/critic/temperature updates, target smoothing."""
    if agent.actor.use_gsde:
        agent.actor.distribution.resample_noise(rng)
    report = compute_sac_losses(agent, batch, rng)

    critic_params, agent.critic_opt = adam_step(agent.critic_parameters(), report.critic_grads, agent.critic_opt,
                                                learning_rate)
    actor_params, agent.actor_opt = adam_step(agent.actor.parameters(), report.actor_grads, agent.actor_opt,
                                              learning_rate)
    (log_alpha,), agent.alpha_opt = adam_step([agent.log_alpha], [report.alpha_grad], agent.alpha_opt, learning_rate)
    check_finite(critic_params, "critic")
    check_finite(actor_params, "actor")
    check_finite([log_alpha], "log_alpha")

    agent.set_critic_parameters(critic_params)
    agent.actor.set_parameters(actor_params)
    agent.log_alpha = log_alpha
    agent.critic_targets = [
        target.with_parameters(soft_update(critic.parameters(), target.parameters(), agent.tau))
        for critic, target in zip(agent.critics, agent.critic_targets)
    ]
    return report


class Explorer:
    """Collection-time behaviour of one noise type on top of the SAC actor."""

    def __init__(self, noise_config, action_dim):
        self.kind = noise_config.type
        self.ou = None
        self.param_noise = None
        if self.kind == "ou":
            self.ou = OuProcess(action_dim, noise_config.sigma, noise_config.ou_theta, noise_config.ou_dt)
        elif self.kind == "param":
            self.param_noise = ParamNoise(noise_config.sigma, noise_config.param_adapt_factor,
                                          noise_config.param_target_distance)
        self.perturbed = None

    def start_episode(self, agent: SacAgent, replay: ReplayBuffer, rng):
        if self.kind == "gsde":
            agent.actor.distribution.resample_noise(rng)
        elif self.kind == "ou":
            self.ou.reset()
        elif self.kind == "param":
            net = agent.actor.net
            if len(replay) > 0:
                states = replay.sample_observations(PARAM_NOISE_STATES, rng)
                trial = perturb_params(net, self.param_noise.stddev, rng)
                adapt_param_noise(self.param_noise, action_distance(net, trial, states))
            self.perturbed = perturb_params(net, self.param_noise.stddev, rng)

    def act(self, agent: SacAgent, observation, rng):
        actor = agent.actor
        if self.kind == "none":
            return actor.deterministic(observation)[0]
        if self.kind == "ou":
            return np.clip(actor.deterministic(observation)[0] + ou_step(self.ou, rng), -1.0, 1.0)
        if self.kind == "param":
            _, mean, _ = mlp_forward(self.perturbed, observation)
            return squash(np.clip(mean, -actor.clip_mean, actor.clip_mean))[0]
        return actor.explore(observation, rng)[0]


def sac_train(config, env, streams, callback: EpisodeCallback = None, agent=None) -> TrainingResult:
    """Episodic SAC: collect one episode, then as many gradient steps as it had transitions."""
    algo = config.algo
    budget = config.run.total_steps
    obs_dim, act_dim = observation_dim(env), action_dim(env)
    if agent is None:
        agent = SacAgent.from_config(config, obs_dim, act_dim, streams.policy_init)
    result = TrainingResult(agent, replay=ReplayBuffer(algo.buffer_size, obs_dim, act_dim))
    if budget == 0:
        return result

    replay = result.replay
    explorer = Explorer(config.noise, act_dim)
    warmup_uniform = config.noise.type != "none"
    obs, _ = env.reset(seed=int(streams.env.integers(2 ** 31 - 1)))
    steps = episode = 0
    while steps < budget:
        explorer.start_episode(agent, replay, streams.noise)
        episode_return, executed = 0.0, []
        while True:
            if steps < algo.learning_starts and warmup_uniform:
                action = streams.noise.uniform(-1.0, 1.0, act_dim)
            else:
                action = explorer.act(agent, obs, streams.noise)
            physical = scale_action(env, action)
            next_obs, reward, terminated, truncated, _ = env.step(physical)
            replay.add(obs, action, reward, next_obs, terminated)
            executed.append(physical)
            episode_return += reward
            obs = next_obs
            steps += 1
            done = terminated or truncated
            if done or steps >= budget:
                break

        if steps >= algo.learning_starts:
            n_updates = len(executed) if algo.gradient_steps < 0 else algo.gradient_steps
            lr = scheduled(algo.learning_rate, algo.lr_schedule, steps / budget)
            try:
                for _ in range(n_updates):
                    sac_update(agent, replay.sample(algo.batch_size, streams.update), streams.update, lr)
            except NonFiniteError as e:
                e.timestep = steps
                raise

        if done:
            episode += 1
            cost = continuity_cost(Trajectory.symmetric(np.array(executed), action_limit(env))) if len(executed) > 1 else 0.0
            record = EpisodeRecord(steps, episode, episode_return, cost)
            result.log.append(record)
            logger.debug("episode %d @ %d: return %.3f, continuity %.3f", episode, steps, episode_return, cost)
            if callback is not None:
                callback(record, agent)
            obs, _ = env.reset()
    result.total_steps = steps
    return result
