"""Pieces shared by the SAC and PPO training loops."""
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from core.errors import CheckpointError, NonFiniteError
from core.nn import AdamState


@dataclass(frozen=True)
class EpisodeRecord:
    timestep: int
    episode: int
    episode_return: float
    continuity_cost: float


@dataclass
class TrainingResult:
    agent: Any
    log: List[EpisodeRecord] = field(default_factory=list)
    total_steps: int = 0
    replay: Any = None
    # per rollout, per worker: the noise matrices drawn during collection (PPO)
    rollout_noise: list = field(default_factory=list)


# callback(record, agent) runs after every completed training episode
EpisodeCallback = Optional[Callable[[EpisodeRecord, Any], None]]


def scheduled(initial, schedule, progress):
    """Constant, or linear decay from ``initial`` at progress 0 to 0 at progress 1."""
    if schedule == "constant":
        return float(initial)
    if schedule == "linear":
        return float(initial) * max(0.0, 1.0 - float(progress))
    raise ValueError(f"unknown schedule {schedule!r}")


def check_finite(params, what):
    for k, p in enumerate(params):
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(f"{what} parameter {k} became non-finite")


def pack_params(prefix, params) -> Dict[str, Any]:
    return {f"{prefix}.{k}": np.asarray(p) for k, p in enumerate(params)}


def unpack_params(state, prefix, templates):
    params = []
    for k, template in enumerate(templates):
        key = f"{prefix}.{k}"
        if key not in state:
            raise CheckpointError(f"checkpoint is missing {key}")
        value = np.asarray(state[key], dtype=np.float64)
        if value.shape != np.shape(template):
            raise CheckpointError(f"{key} has shape {value.shape}, expected {np.shape(template)}")
        params.append(value)
    return params


def pack_adam(prefix, opt: AdamState) -> Dict[str, Any]:
    state = {f"{prefix}.step": int(opt.step), f"{prefix}.learning_rate": float(opt.learning_rate)}
    state.update(pack_params(f"{prefix}.m", opt.m))
    state.update(pack_params(f"{prefix}.v", opt.v))
    return state


def unpack_adam(state, prefix, opt: AdamState) -> AdamState:
    try:
        step = int(state[f"{prefix}.step"])
        learning_rate = float(state[f"{prefix}.learning_rate"])
    except KeyError as e:
        raise CheckpointError(f"checkpoint is missing {e.args[0]}") from None
    return AdamState(
        learning_rate=learning_rate,
        m=unpack_params(state, f"{prefix}.m", opt.m),
        v=unpack_params(state, f"{prefix}.v", opt.v),
        step=step,
        beta1=opt.beta1,
        beta2=opt.beta2,
        eps=opt.eps,
    )
