"""Baseline exploration: Ornstein-Uhlenbeck action noise and adaptive parameter-space noise."""
from dataclasses import dataclass, field

import numpy as np

from core.nn import Mlp, mlp_forward


@dataclass
class OuProcess:
    action_dim: int
    sigma: float = 0.2
    theta: float = 0.15
    dt: float = 1.0
    state: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.state is None:
            self.reset()

    def reset(self):
        self.state = np.zeros(self.action_dim)


def ou_step(proc: OuProcess, rng):
    """x <- x + theta (0 - x) dt + sigma sqrt(dt) N(0, I)."""
    drift = proc.theta * (0.0 - proc.state) * proc.dt
    diffusion = proc.sigma * np.sqrt(proc.dt) * rng.standard_normal(proc.action_dim)
    proc.state = proc.state + drift + diffusion
    return proc.state.copy()


@dataclass
class ParamNoise:
    stddev: float = 0.2
    adaptation_factor: float = 1.01
    target_distance: float = 0.2

    def __post_init__(self):
        if self.stddev <= 0:
            raise ValueError("parameter noise stddev must be positive")


def perturb_params(net: Mlp, stddev, rng):
    """Copy of ``net`` with N(0, stddev^2) added to every weight and bias."""
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    params = net.parameters()
    if stddev == 0:
        return net.with_parameters(params)
    return net.with_parameters([p + stddev * rng.standard_normal(p.shape) for p in params])


def adapt_param_noise(pn: ParamNoise, measured_distance):
    if measured_distance < 0:
        raise ValueError("measured_distance must be non-negative")
    if measured_distance < pn.target_distance:
        pn.stddev *= pn.adaptation_factor
    else:
        pn.stddev /= pn.adaptation_factor
    return pn.stddev


def action_distance(net: Mlp, perturbed_net: Mlp, states):
    """Root-mean-square difference of the two networks' outputs over a batch of states."""
    states = np.atleast_2d(states)
    if states.size == 0:
        raise ValueError("action_distance needs at least one state")
    _, original, _ = mlp_forward(net, states)
    _, perturbed, _ = mlp_forward(perturbed_net, states)
    return float(np.sqrt(np.mean(np.square(original - perturbed))))
