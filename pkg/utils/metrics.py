"""Smoothness and performance measurement: continuity cost, deterministic evaluation and Pareto points."""
import logging
import math
from dataclasses import dataclass
from typing import List, Mapping, Optional, Sequence, Tuple

import numpy as np

from core.envs import action_limit, scale_action
from core.errors import ShapeError

logger = logging.getLogger(__name__)

BOUNDS_TOLERANCE = 1e-9


@dataclass
class Trajectory:
    actions: np.ndarray  # (T, action_dim)
    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if self.actions.ndim == 1:
            self.actions = self.actions[:, None]
        if self.actions.ndim != 2:
            raise ShapeError(f"actions must be (T, action_dim), got shape {self.actions.shape}")
        width = self.actions.shape[1]
        try:
            self.low = np.broadcast_to(np.asarray(self.low, dtype=np.float64), (width,))
            self.high = np.broadcast_to(np.asarray(self.high, dtype=np.float64), (width,))
        except ValueError:
            raise ShapeError(f"action bounds do not match action_dim {width}") from None
        if self.actions.shape[0] < 1:
            raise ValueError("a trajectory needs at least one action")
        if np.any(self.high <= self.low):
            raise ValueError("action bounds must satisfy low < high")
        if np.any(self.actions < self.low - BOUNDS_TOLERANCE) or np.any(self.actions > self.high + BOUNDS_TOLERANCE):
            raise ValueError("trajectory actions leave the action bounds")

    @classmethod
    def symmetric(cls, actions, limit):
        return cls(actions, -limit, limit)

    def __len__(self):
        return self.actions.shape[0]


def continuity_cost(traj: Trajectory) -> float:
    """100 * mean over steps and dimensions of ((a_{t+1} - a_t) / (high - low))^2."""
    if len(traj) < 2:
        raise ValueError("continuity cost needs at least two actions")
    steps = np.diff(traj.actions, axis=0) / (traj.high - traj.low)
    return float(100.0 * np.mean(np.square(steps)))


def std_error(values):
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(values.size))


@dataclass(frozen=True)
class EvalReport:
    mean_return: float
    std_error: float
    mean_continuity_cost: float
    episodes: int
    timestep: int = 0

    def __post_init__(self):
        if self.episodes < 1:
            raise ValueError("an evaluation covers at least one episode")

    def to_dict(self):
        return {
            "mean_return": self.mean_return,
            "std_error": self.std_error,
            "mean_continuity_cost": self.mean_continuity_cost,
            "episodes": self.episodes,
            "timestep": self.timestep,
        }


def evaluate_policy(agent, env, episodes, seed, timestep=0) -> EvalReport:
    """Run ``episodes`` episodes with the deterministic controller; only ``env`` changes state."""
    if episodes < 1:
        raise ValueError("episodes must be >= 1")
    returns, costs = [], []
    for k in range(episodes):
        obs, _ = env.reset(seed=seed if k == 0 else None)
        total, executed = 0.0, []
        while True:
            action = scale_action(env, agent.predict(obs))
            executed.append(action)
            obs, reward, terminated, truncated, _ = env.step(action)
            total += reward
            if terminated or truncated:
                break
        returns.append(total)
        if len(executed) >= 2:
            costs.append(continuity_cost(Trajectory.symmetric(np.array(executed), action_limit(env))))
    report = EvalReport(
        mean_return=float(np.mean(returns)),
        std_error=std_error(returns),
        mean_continuity_cost=float(np.mean(costs)) if costs else float("nan"),
        episodes=episodes,
        timestep=timestep,
    )
    logger.info("eval @ %d: return %.3f +/- %.3f, continuity %.3f", timestep, report.mean_return,
                report.std_error, report.mean_continuity_cost)
    return report


@dataclass(frozen=True)
class RunSummary:
    final_return: float
    train_continuity_cost: float


@dataclass(frozen=True)
class ParetoPoint:
    label: str
    interval: Optional[int]
    mean_return: float
    se_return: float
    mean_ctrain: float
    se_ctrain: float
    n_seeds: int
    normalized_return: Optional[float] = None


def normalize_return(value, best):
    """Maps ``best`` to 1.0; equals value / best whenever best > 0, stays monotone for best <= 0."""
    scale = abs(best) if best != 0 else 1.0
    return 1.0 - (best - value) / scale


def aggregate_pareto(groups: Mapping[Tuple[str, Optional[int]], Sequence[RunSummary]], normalize=False) -> List[ParetoPoint]:
    """One point per (label, interval) group, ordered by label then interval."""
    points = []
    for (label, interval), runs in groups.items():
        if not runs:
            raise ValueError(f"configuration {label!r} has no completed runs")
        returns = [r.final_return for r in runs]
        costs = [r.train_continuity_cost for r in runs]
        points.append(ParetoPoint(
            label=label,
            interval=interval,
            mean_return=float(np.mean(returns)),
            se_return=std_error(returns),
            mean_ctrain=float(np.mean(costs)),
            se_ctrain=std_error(costs),
            n_seeds=len(runs),
        ))
    points.sort(key=lambda p: (p.label, p.interval if p.interval is not None else math.inf))
    if normalize and points:
        best = max(p.mean_return for p in points)
        points = [
            ParetoPoint(p.label, p.interval, p.mean_return, p.se_return, p.mean_ctrain, p.se_ctrain, p.n_seeds,
                        normalize_return(p.mean_return, best))
            for p in points
        ]
    return points
