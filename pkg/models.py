"""Experiment configuration schema.

Every key of the YAML document is declared here once, with its type, description and
default. Defaults that depend on the algorithm or the noise type follow the published
SAC and PPO hyperparameter tables; ``None`` in a dataclass below means "resolved from
those tables by parse_config".
"""
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional, Tuple, Union, get_args, get_origin

import yaml

from core.errors import ConfigError

ENV_IDS = ("pendulum", "double_integrator")
ALGORITHMS = ("sac", "ppo")
NOISE_TYPES = ("none", "gaussian", "ou", "param", "gsde")
PPO_NOISE_TYPES = ("gaussian", "gsde")


def _describe(text, **extra):
    return dict(description=text, **extra)


@dataclass(frozen=True)
class EnvConfig:
    id: str = field(default="", metadata=_describe("Environment id", choices=ENV_IDS, required=True))
    time_feature: bool = field(default=True, metadata=_describe("Append the remaining-time feature"))
    history: bool = field(default=False, metadata=_describe("Append previous observation and last action"))
    max_steps: Optional[int] = field(default=None, metadata=_describe("Episode horizon, environment default if unset", minimum=1))


@dataclass(frozen=True)
class AlgoConfig:
    name: str = field(default="", metadata=_describe("Algorithm", choices=ALGORITHMS, required=True))
    learning_rate: Optional[float] = field(default=None, metadata=_describe("Adam learning rate", exclusive_minimum=0.0))
    lr_schedule: str = field(default="constant", metadata=_describe("Learning-rate schedule", choices=("constant", "linear")))
    gamma: Optional[float] = field(default=None, metadata=_describe("Discount factor", minimum=0.0, exclusive_maximum=1.0))
    net_arch: Tuple[int, ...] = field(default=(64, 64), metadata=_describe("Hidden layer widths of every network"))
    activation: str = field(default="relu", metadata=_describe("Hidden activation", choices=("relu", "tanh")))
    batch_size: Optional[int] = field(default=None, metadata=_describe("Minibatch size", minimum=1))
    # SAC
    buffer_size: int = field(default=300_000, metadata=_describe("Replay buffer capacity", minimum=1))
    tau: float = field(default=0.02, metadata=_describe("Target smoothing coefficient", minimum=0.0, maximum=1.0))
    learning_starts: int = field(default=10_000, metadata=_describe("Warm-up steps before the first update", minimum=0))
    gradient_steps: int = field(default=-1, metadata=_describe("Gradient steps per episode, -1 for the episode length", minimum=-1))
    ent_coef_init: float = field(default=1.0, metadata=_describe("Initial entropy temperature", exclusive_minimum=0.0))
    target_entropy: Optional[float] = field(default=None, metadata=_describe("Target entropy, -dim(A) if unset"))
    clip_mean: float = field(default=2.0, metadata=_describe("Clip the SAC mean to [-clip_mean, clip_mean]", exclusive_minimum=0.0))
    # PPO
    n_workers: Optional[int] = field(default=None, metadata=_describe("Parallel rollout workers", minimum=1))
    n_steps: Optional[int] = field(default=None, metadata=_describe("Steps per worker per rollout", minimum=1))
    n_epochs: Optional[int] = field(default=None, metadata=_describe("Epochs per rollout", minimum=1))
    gae_lambda: Optional[float] = field(default=None, metadata=_describe("GAE lambda", minimum=0.0, maximum=1.0))
    clip_range: Optional[float] = field(default=None, metadata=_describe("PPO clip range", exclusive_minimum=0.0))
    clip_range_schedule: str = field(default="constant", metadata=_describe("Clip-range schedule", choices=("constant", "linear")))
    vf_coef: float = field(default=0.5, metadata=_describe("Value loss coefficient", minimum=0.0))
    ent_coef: float = field(default=0.0, metadata=_describe("Entropy bonus coefficient", minimum=0.0))
    max_grad_norm: float = field(default=0.5, metadata=_describe("Global gradient norm clip", exclusive_minimum=0.0))
    normalize: bool = field(default=True, metadata=_describe("Running observation and reward normalisation (PPO)"))


@dataclass(frozen=True)
class NoiseConfig:
    type: str = field(default="gsde", metadata=_describe("Exploration noise", choices=NOISE_TYPES))
    gsde_interval: Optional[int] = field(default=None, metadata=_describe("gsde interval: steps between noise-matrix draws", minimum=1))
    log_std_init: Optional[float] = field(default=None, metadata=_describe("Initial log sigma"))
    use_expln: bool = field(default=False, metadata=_describe("Use the expln variance transform instead of exp"))
    features: str = field(default="latent", metadata=_describe("Noise-function input", choices=("latent", "state")))
    sigma: float = field(default=0.2, metadata=_describe("OU scale / initial parameter-noise stddev", minimum=0.0))
    ou_theta: float = field(default=0.15, metadata=_describe("OU mean-reversion rate", minimum=0.0))
    ou_dt: float = field(default=1.0, metadata=_describe("OU step size", exclusive_minimum=0.0))
    param_target_distance: float = field(default=0.2, metadata=_describe("Target action distance for parameter noise", exclusive_minimum=0.0))
    param_adapt_factor: float = field(default=1.01, metadata=_describe("Parameter-noise adaptation factor", exclusive_minimum=1.0))


@dataclass(frozen=True)
class EvalConfig:
    interval: int = field(default=10_000, metadata=_describe("Steps between evaluations", minimum=1))
    episodes: int = field(default=20, metadata=_describe("Deterministic evaluation episodes", minimum=1))


@dataclass(frozen=True)
class RunConfig:
    total_steps: int = field(default=50_000, metadata=_describe("Environment-step budget per seed", minimum=0))
    seeds: Tuple[int, ...] = field(default=(0,), metadata=_describe("Master seeds, one run each"))
    output_dir: str = field(default="runs", metadata=_describe("Output directory"))
    name: Optional[str] = field(default=None, metadata=_describe("Run name, derived from env/algo/noise if unset"))
    parallel_workers: bool = field(default=False, metadata=_describe("Collect PPO workers on a thread pool"))
    record_wall_clock: bool = field(default=False, metadata=_describe("Fill the wall_clock_seconds column"))


SECTIONS = {"env": EnvConfig, "algo": AlgoConfig, "noise": NoiseConfig, "eval": EvalConfig, "run": RunConfig}


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    algo: AlgoConfig
    noise: NoiseConfig = NoiseConfig()
    eval: EvalConfig = EvalConfig()
    run: RunConfig = RunConfig()
    # the dotted keys the user actually wrote; overrides re-resolve table defaults from these
    source: Optional[Dict[str, Any]] = field(default=None, compare=False, repr=False)

    @property
    def label(self):
        if self.noise.type == "gsde":
            return f"gsde-{self.noise.gsde_interval}"
        return self.noise.type

    @property
    def run_name(self):
        return self.run.name or f"{self.algo.name}_{self.env.id}_{self.label}"

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        out = {}
        for section in SECTIONS:
            values = asdict(getattr(self, section))
            out[section] = {k: list(v) if isinstance(v, tuple) else v for k, v in values.items()}
        return out

    def with_overrides(self, **dotted):
        """Copy with dotted-key overrides, re-validated (e.g. with_overrides(**{"noise.type": "ou"}))."""
        flat = dict(self.source) if self.source is not None else flatten(self.to_dict())
        flat.update(dotted)
        return parse_mapping(flat)


# Table defaults keyed by (algorithm, noise type); "*" matches any noise type.
TABLE_DEFAULTS = {
    ("sac", "*"): {
        "algo.learning_rate": 7.3e-4,
        "algo.gamma": 0.98,
        "algo.batch_size": 256,
        "noise.gsde_interval": 8,
        "noise.log_std_init": -3.0,
    },
    ("ppo", "gsde"): {
        "algo.learning_rate": 3e-5,
        "algo.gamma": 0.99,
        "algo.batch_size": 128,
        "algo.n_workers": 16,
        "algo.n_steps": 512,
        "algo.n_epochs": 20,
        "algo.gae_lambda": 0.9,
        "algo.clip_range": 0.4,
        "noise.gsde_interval": 4,
        "noise.log_std_init": -2.0,
    },
    ("ppo", "gaussian"): {
        "algo.learning_rate": 2e-4,
        "algo.gamma": 0.99,
        "algo.batch_size": 64,
        "algo.n_workers": 1,
        "algo.n_steps": 2048,
        "algo.n_epochs": 10,
        "algo.gae_lambda": 0.95,
        "algo.clip_range": 0.2,
        "noise.gsde_interval": 4,
        "noise.log_std_init": 0.0,
    },
}


def flatten(document, prefix=""):
    """Nested sections -> dotted keys. Already-dotted keys pass through."""
    flat = {}
    for key, value in document.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, dict) and "." not in str(key) and not prefix:
            flat.update(flatten(value, prefix=f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def _unwrap_optional(annotation):
    """Returns (inner annotation, whether None is allowed)."""
    if get_origin(annotation) is Union:
        args = [a for a in get_args(annotation) if a is not type(None)]
        optional = len(args) < len(get_args(annotation))
        return (args[0] if len(args) == 1 else Union[tuple(args)]), optional
    return annotation, False


def _coerce(key, value, annotation):
    annotation, optional = _unwrap_optional(annotation)
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "may not be null")
    if get_origin(annotation) is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(key, f"expected a list of integers, got {type(value).__name__}")
        item = get_args(annotation)[0]
        return tuple(_coerce(key, v, item) for v in value)
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, f"expected true/false, got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        if isinstance(value, float) and value.is_integer():
            return int(value)
        if not isinstance(value, int):
            raise ConfigError(key, f"expected an integer, got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, bool):
            raise ConfigError(key, f"expected a number, got {value!r}")
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(key, f"expected a number, got {value!r}") from None
        if not isinstance(value, (int, float)):
            raise ConfigError(key, f"expected a number, got {value!r}")
        return float(value)
    if annotation is not str:
        raise ConfigError(key, f"unsupported schema type {annotation!r}")
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def _check(key, value, meta):
    if value is None:
        return
    if "choices" in meta and value not in meta["choices"]:
        raise ConfigError(key, f"{value!r} is not one of {list(meta['choices'])}")
    if "minimum" in meta and value < meta["minimum"]:
        raise ConfigError(key, f"must be >= {meta['minimum']}, got {value}")
    if "maximum" in meta and value > meta["maximum"]:
        raise ConfigError(key, f"must be <= {meta['maximum']}, got {value}")
    if "exclusive_minimum" in meta and value <= meta["exclusive_minimum"]:
        raise ConfigError(key, f"must be > {meta['exclusive_minimum']}, got {value}")
    if "exclusive_maximum" in meta and value >= meta["exclusive_maximum"]:
        raise ConfigError(key, f"must be < {meta['exclusive_maximum']}, got {value}")


def parse_mapping(flat: Dict[str, Any]) -> ExperimentConfig:
    """Validate dotted key/values and fill table defaults."""
    known = {f"{section}.{f.name}": (section, f) for section, cls in SECTIONS.items() for f in fields(cls)}
    unknown = sorted(set(flat) - set(known))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")

    values = {section: {} for section in SECTIONS}
    for key, (section, f) in known.items():
        if key not in flat:
            if f.metadata.get("required"):
                raise ConfigError(key, "is required")
            continue
        value = _coerce(key, flat[key], f.type)
        _check(key, value, f.metadata)
        values[section][f.name] = value

    algo = values["algo"]["name"]
    noise = values["noise"].get("type", NoiseConfig.type)
    if algo == "ppo" and noise not in PPO_NOISE_TYPES:
        raise ConfigError("noise.type", f"ppo supports {list(PPO_NOISE_TYPES)}, got {noise!r}")
    defaults = TABLE_DEFAULTS.get((algo, noise)) or TABLE_DEFAULTS[(algo, "*")]
    for key, default in defaults.items():
        section, name = key.split(".")
        if values[section].get(name) is None:
            values[section][name] = default

    if noise == "param" and values["noise"].get("sigma", NoiseConfig.sigma) <= 0.0:
        raise ConfigError("noise.sigma", "parameter noise needs a positive initial stddev")
    if not values["run"].get("seeds", RunConfig.seeds):
        raise ConfigError("run.seeds", "needs at least one seed")
    if any(width < 1 for width in values["algo"].get("net_arch", AlgoConfig.net_arch)):
        raise ConfigError("algo.net_arch", "layer widths must be positive")

    sections = {section: cls(**values[section]) for section, cls in SECTIONS.items()}
    return ExperimentConfig(**sections, source=dict(flat))


def parse_config(text: str) -> ExperimentConfig:
    """Parse a YAML document (nested sections or dotted keys) into a validated config."""
    try:
        document = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        raise ConfigError("<document>", f"not valid YAML: {e}") from None
    if not isinstance(document, dict):
        raise ConfigError("<document>", "expected a mapping at the top level")
    return parse_mapping(flatten(document))


def load_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def serialize_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=True, default_flow_style=False)
