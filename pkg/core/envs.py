"""Desk-scale continuous-control tasks and observation wrappers, on the gymnasium API."""
import gymnasium
import numpy as np
from gymnasium import spaces
from gymnasium.utils import seeding
from gymnasium.wrappers import TimeLimit

from core.errors import EpisodeFinishedError


def wrap_angle(theta):
    """Map an angle to (-pi, pi]."""
    wrapped = (float(theta) + np.pi) % (2.0 * np.pi) - np.pi
    return np.pi if wrapped == -np.pi else wrapped


class ControlEnv(gymnasium.Env):
    """Task with a symmetric action box; the horizon is enforced by TimeLimit, not here."""

    metadata = {"render_modes": []}
    max_steps = 1

    def __init__(self, max_steps=None, seed=None):
        if max_steps is not None:
            self.max_steps = int(max_steps)
        if seed is not None:
            self.np_random, _ = seeding.np_random(seed)
        self.started = False

    def reset(self, *, seed=None, options=None):
        super().reset(seed=seed)
        self.started = True
        self._reset_state()
        return self._observation(), {}

    def step(self, action):
        if not self.started:
            raise EpisodeFinishedError(f"{type(self).__name__} has no episode yet, call reset()")
        u = np.clip(np.asarray(action, dtype=np.float64).reshape(self.action_space.shape),
                    self.action_space.low, self.action_space.high)
        reward = self._advance(u)
        return self._observation(), float(reward), False, False, {}

    def _reset_state(self):
        raise NotImplementedError

    def _advance(self, u):
        raise NotImplementedError

    def _observation(self):
        raise NotImplementedError


class Pendulum(ControlEnv):
    """Torque-limited pendulum swing-up; theta = 0 is upright."""

    max_steps = 200
    gravity = 10.0
    mass = 1.0
    length = 1.0
    dt = 0.05
    max_speed = 8.0
    max_torque = 2.0

    def __init__(self, max_steps=None, seed=None):
        super().__init__(max_steps, seed)
        bound = np.array([1.0, 1.0, self.max_speed])
        self.observation_space = spaces.Box(-bound, bound, dtype=np.float64)
        self.action_space = spaces.Box(-self.max_torque, self.max_torque, shape=(1,), dtype=np.float64)
        self.theta = 0.0
        self.theta_dot = 0.0

    def set_state(self, theta, theta_dot):
        self.theta, self.theta_dot = float(theta), float(theta_dot)

    def _reset_state(self):
        self.theta = float(self.np_random.uniform(-np.pi, np.pi))
        self.theta_dot = float(self.np_random.uniform(-1.0, 1.0))

    def _advance(self, u):
        torque = float(u[0])
        reward = -(wrap_angle(self.theta) ** 2 + 0.1 * self.theta_dot ** 2 + 0.001 * torque ** 2)
        acceleration = (
            3.0 * self.gravity / (2.0 * self.length) * np.sin(self.theta)
            + 3.0 / (self.mass * self.length ** 2) * torque
        )
        # semi-implicit Euler: velocity first, then position with the new velocity
        self.theta_dot = float(np.clip(self.theta_dot + acceleration * self.dt, -self.max_speed, self.max_speed))
        self.theta = float(self.theta + self.theta_dot * self.dt)
        return reward

    def _observation(self):
        return np.array([np.cos(self.theta), np.sin(self.theta), self.theta_dot])


class DoubleIntegrator(ControlEnv):
    """Unit point mass on a line, driven to the origin."""

    max_steps = 100
    dt = 0.1

    def __init__(self, max_steps=None, seed=None):
        super().__init__(max_steps, seed)
        self.observation_space = spaces.Box(-np.inf, np.inf, shape=(2,), dtype=np.float64)
        self.action_space = spaces.Box(-1.0, 1.0, shape=(1,), dtype=np.float64)
        self.position = 0.0
        self.velocity = 0.0

    def set_state(self, position, velocity):
        self.position, self.velocity = float(position), float(velocity)

    def _reset_state(self):
        self.position = float(self.np_random.uniform(-1.0, 1.0))
        self.velocity = 0.0

    def _advance(self, u):
        force = float(u[0])
        reward = -(self.position ** 2 + 0.1 * self.velocity ** 2 + 0.001 * force ** 2)
        self.velocity = self.velocity + force * self.dt
        self.position = self.position + self.velocity * self.dt
        return reward

    def _observation(self):
        return np.array([self.position, self.velocity])


def wrap_time_feature(obs, t, horizon):
    """Append the remaining fraction of the episode, (T - t) / T."""
    if t < 0 or t > horizon:
        raise ValueError(f"elapsed steps {t} outside [0, {horizon}]")
    return np.append(np.asarray(obs, dtype=np.float64), (horizon - t) / horizon)


class TimeFeatureWrapper(gymnasium.ObservationWrapper):
    def __init__(self, env, horizon=None):
        super().__init__(env)
        self.horizon = int(horizon if horizon is not None else env.unwrapped.max_steps)
        self.t = 0
        inner = env.observation_space
        self.observation_space = spaces.Box(np.append(inner.low, 0.0), np.append(inner.high, 1.0), dtype=np.float64)

    def reset(self, *, seed=None, options=None):
        self.t = 0
        return super().reset(seed=seed, options=options)

    def step(self, action):
        self.t = min(self.t + 1, self.horizon)
        return super().step(action)

    def observation(self, observation):
        return wrap_time_feature(observation, self.t, self.horizon)


class HistoryWrapper(gymnasium.Wrapper):
    """Observation = (current obs, previous obs, last normalised action)."""

    def __init__(self, env):
        super().__init__(env)
        inner, box = env.observation_space, env.action_space
        self.observation_space = spaces.Box(np.concatenate([inner.low, inner.low, -np.ones(box.shape)]),
                                            np.concatenate([inner.high, inner.high, np.ones(box.shape)]),
                                            dtype=np.float64)
        self.current_obs = np.zeros(inner.shape)
        self.previous_obs = np.zeros(inner.shape)
        self.last_action = np.zeros(box.shape)

    def _stacked(self):
        return np.concatenate([self.current_obs, self.previous_obs, self.last_action])

    def reset(self, *, seed=None, options=None):
        self.current_obs, info = self.env.reset(seed=seed, options=options)
        self.previous_obs = np.zeros_like(self.current_obs)
        self.last_action = np.zeros(self.action_space.shape)
        return self._stacked(), info

    def step(self, action):
        observation, reward, terminated, truncated, info = self.env.step(action)
        box = self.action_space
        self.previous_obs = self.current_obs
        self.current_obs = observation
        self.last_action = np.clip(np.asarray(action, dtype=np.float64).reshape(box.shape), box.low, box.high) / box.high
        return self._stacked(), reward, terminated, truncated, info


class EpisodeGuard(gymnasium.Wrapper):
    """Refuses to step a finished episode instead of silently running past the horizon."""

    def __init__(self, env):
        super().__init__(env)
        self.finished = True

    def reset(self, *, seed=None, options=None):
        observation, info = self.env.reset(seed=seed, options=options)
        self.finished = False
        return observation, info

    def step(self, action):
        if self.finished:
            raise EpisodeFinishedError(f"{self.env.unwrapped.__class__.__name__} episode is over, call reset()")
        observation, reward, terminated, truncated, info = self.env.step(action)
        self.finished = terminated or truncated
        return observation, reward, terminated, truncated, info


def observation_dim(env):
    return int(env.observation_space.shape[0])


def action_dim(env):
    return int(env.action_space.shape[0])


def action_limit(env):
    return float(env.action_space.high[0])


def horizon(env):
    return env.unwrapped.max_steps


def scale_action(env, normalized):
    """Map a policy action in [-1, 1] onto the physical action box."""
    return np.clip(np.asarray(normalized, dtype=np.float64), -1.0, 1.0) * env.action_space.high


ENVS = {"pendulum": Pendulum, "double_integrator": DoubleIntegrator}
GYM_IDS = {"pendulum": "GsdeLab/Pendulum-v0", "double_integrator": "GsdeLab/DoubleIntegrator-v0"}

for _name, _gym_id in GYM_IDS.items():
    if _gym_id not in gymnasium.registry:
        gymnasium.register(id=_gym_id, entry_point=ENVS[_name], max_episode_steps=ENVS[_name].max_steps)


def make_env(env_id, time_feature=True, history=False, max_steps=None, seed=None):
    if env_id not in ENVS:
        raise ValueError(f"unknown environment {env_id!r}, expected one of {sorted(ENVS)}")
    base = ENVS[env_id](max_steps=max_steps, seed=seed)
    env = TimeLimit(base, max_episode_steps=base.max_steps)
    if history:
        env = HistoryWrapper(env)
    if time_feature:
        env = TimeFeatureWrapper(env, base.max_steps)
    return EpisodeGuard(env)
