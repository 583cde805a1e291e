"""Actor and value networks for SAC and PPO with hand-derived reverse passes.

Both policies read their exploration features either from the policy's latent layer
("latent") or straight from the observation ("state"). The features are treated as
constants when differentiating the noise scale.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.distributions import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    STD_FLOOR,
    GsdeDistribution,
    gaussian_log_prob,
    gaussian_log_prob_grads,
    gsde_std,
    squash,
    squash_log_det,
    squash_log_det_grad,
    sigma_hat_backward,
    variance_transform,
    variance_transform_grad,
)
from core.nn import ForwardTape, Mlp, mlp_backward, mlp_forward

FEATURE_SOURCES = ("latent", "state")


def _features(source, observations, latent):
    return latent if source == "latent" else np.atleast_2d(observations)


@dataclass
class ActorForward:
    observations: np.ndarray
    features: np.ndarray
    mean: np.ndarray
    mean_raw: np.ndarray
    tape: ForwardTape
    log_std_raw: Optional[np.ndarray] = None
    head_tape: Optional[ForwardTape] = None


@dataclass
class ActorSample:
    forward: ActorForward
    pre_squash: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray
    std: np.ndarray
    std_raw: np.ndarray
    eps: np.ndarray


class SacActor:
    """Tanh-squashed Gaussian actor.

    With gSDE the noise is z @ (sigma * eps) with one eps matrix shared across the batch;
    otherwise a linear head on the features predicts a per-state log std.
    """

    def __init__(self, net: Mlp, distribution: Optional[GsdeDistribution] = None, log_std_head: Optional[Mlp] = None,
                 features="latent", clip_mean=2.0):
        if (distribution is None) == (log_std_head is None):
            raise ValueError("an actor needs exactly one of a gSDE distribution or a log-std head")
        if features not in FEATURE_SOURCES:
            raise ValueError(f"unknown feature source {features!r}")
        self.net = net
        self.distribution = distribution
        self.log_std_head = log_std_head
        self.features = features
        self.clip_mean = float(clip_mean)

    @classmethod
    def build(cls, observation_dim, action_dim, hidden_sizes, rng, use_gsde=True, log_std_init=-3.0,
              sample_interval=8, transform="exp", features="latent", activation="relu", clip_mean=2.0):
        net = Mlp.build(observation_dim, hidden_sizes, action_dim, rng, activation)
        feature_dim = net.latent_dim if features == "latent" else observation_dim
        if use_gsde:
            distribution = GsdeDistribution.from_constant(
                feature_dim, action_dim, log_std_init, sample_interval=sample_interval, transform=transform
            )
            return cls(net, distribution=distribution, features=features, clip_mean=clip_mean)
        head = Mlp.build(feature_dim, [], action_dim, rng)
        return cls(net, log_std_head=head, features=features, clip_mean=clip_mean)

    @property
    def use_gsde(self):
        return self.distribution is not None

    def parameters(self):
        extra = [self.distribution.log_sigma] if self.use_gsde else self.log_std_head.parameters()
        return self.net.parameters() + extra

    def set_parameters(self, params):
        k = len(self.net.parameters())
        self.net = self.net.with_parameters(params[:k])
        if self.use_gsde:
            self.distribution.log_sigma = np.array(params[k], dtype=np.float64)
        else:
            self.log_std_head = self.log_std_head.with_parameters(params[k:])

    def forward(self, observations) -> ActorForward:
        latent, mean_raw, tape = mlp_forward(self.net, observations)
        z = _features(self.features, observations, latent)
        out = ActorForward(np.atleast_2d(observations), z, np.clip(mean_raw, -self.clip_mean, self.clip_mean), mean_raw, tape)
        if not self.use_gsde:
            _, out.log_std_raw, out.head_tape = mlp_forward(self.log_std_head, z)
        return out

    def std(self, fwd: ActorForward):
        """(floored std, raw std) for a forward pass."""
        if self.use_gsde:
            raw = self.distribution.std(fwd.features)
            return np.maximum(raw, STD_FLOOR), raw
        std = np.exp(np.clip(fwd.log_std_raw, LOG_STD_MIN, LOG_STD_MAX))
        return std, std

    def deterministic(self, observations):
        return squash(self.forward(observations).mean)

    def explore(self, observations, rng):
        """One exploratory collection action in [-1, 1]; gSDE redraws theta_eps when due."""
        fwd = self.forward(observations)
        if self.use_gsde:
            u = self.distribution.sample(fwd.mean, fwd.features, rng)
        else:
            std, _ = self.std(fwd)
            u = fwd.mean + std * rng.standard_normal(fwd.mean.shape)
        return squash(u)

    def sample(self, observations, rng) -> ActorSample:
        """Reparameterised sample for the losses; gSDE uses the current eps matrix, not rng."""
        fwd = self.forward(observations)
        std, raw = self.std(fwd)
        if self.use_gsde:
            eps = self.distribution.weights_eps
            u = fwd.mean + fwd.features @ (self.distribution.sigma() * eps)
        else:
            eps = rng.standard_normal(fwd.mean.shape)
            u = fwd.mean + std * eps
        log_prob = gaussian_log_prob(u, fwd.mean, std) - squash_log_det(u)
        return ActorSample(fwd, u, squash(u), log_prob, std, raw, eps)

    def backward(self, sample: ActorSample, d_log_prob, d_action):
        """Parameter gradients of sum_b d_log_prob[b] * log_prob[b] + d_action[b] . action[b]."""
        fwd = sample.forward
        u, std = sample.pre_squash, sample.std
        d_log_prob = np.asarray(d_log_prob, dtype=np.float64)[:, None]
        t = np.tanh(u)
        dlogp_du, dlogp_dmean, dlogp_dstd = gaussian_log_prob_grads(u, fwd.mean, std)
        d_u = d_log_prob * (dlogp_du - squash_log_det_grad(u)) + np.asarray(d_action) * (1.0 - np.square(t))
        d_mean = d_log_prob * dlogp_dmean + d_u
        d_std = d_log_prob * dlogp_dstd

        latent_upstream = None
        if self.use_gsde:
            dist = self.distribution
            sigma = dist.sigma()
            d_sigma = (fwd.features.T @ d_u) * sample.eps + sigma_hat_backward(fwd.features, sigma, sample.std_raw, d_std)
            extra = [d_sigma * variance_transform_grad(dist.log_sigma, dist.transform)]
        else:
            d_std = d_std + d_u * sample.eps
            inside = (fwd.log_std_raw > LOG_STD_MIN) & (fwd.log_std_raw < LOG_STD_MAX)
            d_log_std = d_std * std * inside
            extra, d_features = mlp_backward(self.log_std_head, fwd.head_tape, d_log_std)
            if self.features == "latent":
                latent_upstream = d_features

        d_mean_raw = d_mean * (np.abs(fwd.mean_raw) < self.clip_mean)
        grads, _ = mlp_backward(self.net, fwd.tape, d_mean_raw, latent_upstream=latent_upstream)
        return grads + list(extra)

    def copy(self):
        dist = None
        if self.use_gsde:
            dist = GsdeDistribution(self.distribution.log_sigma.copy(), self.distribution.sample_interval,
                                    self.distribution.transform)
        head = None if self.use_gsde else self.log_std_head.copy()
        return SacActor(self.net.copy(), dist, head, self.features, self.clip_mean)


@dataclass
class PolicyEvaluation:
    features: np.ndarray
    mean: np.ndarray
    tape: ForwardTape
    values: np.ndarray
    value_tape: ForwardTape
    actions: np.ndarray
    std: np.ndarray
    std_raw: np.ndarray
    log_prob: np.ndarray
    entropy: np.ndarray


class PpoPolicy:
    """Unsquashed Gaussian policy with a separate value network.

    gSDE keeps a (features, actions) log-sigma matrix; the unstructured Gaussian keeps one
    state-independent log std per action dimension.
    """

    def __init__(self, net: Mlp, value_net: Mlp, log_std, use_gsde=True, sample_interval=4, transform="exp",
                 features="latent"):
        if features not in FEATURE_SOURCES:
            raise ValueError(f"unknown feature source {features!r}")
        self.net = net
        self.value_net = value_net
        self.log_std = np.asarray(log_std, dtype=np.float64)
        self.use_gsde = use_gsde
        self.sample_interval = int(sample_interval)
        self.transform = transform
        self.features = features

    @classmethod
    def build(cls, observation_dim, action_dim, hidden_sizes, rng, use_gsde=True, log_std_init=-2.0,
              sample_interval=4, transform="exp", features="latent", activation="tanh"):
        net = Mlp.build(observation_dim, hidden_sizes, action_dim, rng, activation)
        value_net = Mlp.build(observation_dim, hidden_sizes, 1, rng, activation)
        feature_dim = net.latent_dim if features == "latent" else observation_dim
        shape = (feature_dim, action_dim) if use_gsde else (action_dim,)
        return cls(net, value_net, np.full(shape, float(log_std_init)), use_gsde, sample_interval, transform, features)

    def parameters(self):
        return self.net.parameters() + self.value_net.parameters() + [self.log_std]

    def set_parameters(self, params):
        k = len(self.net.parameters())
        v = len(self.value_net.parameters())
        self.net = self.net.with_parameters(params[:k])
        self.value_net = self.value_net.with_parameters(params[k:k + v])
        self.log_std = np.array(params[k + v], dtype=np.float64)

    def copy(self):
        return PpoPolicy(self.net.copy(), self.value_net.copy(), self.log_std.copy(), self.use_gsde,
                         self.sample_interval, self.transform, self.features)

    def make_distribution(self):
        """Fresh per-worker noise state over the current log sigma (gSDE only)."""
        if not self.use_gsde:
            return None
        return GsdeDistribution(self.log_std, self.sample_interval, self.transform)

    def _std(self, features, batch):
        if self.use_gsde:
            raw = gsde_std(self.log_std, features, self.transform)
            return np.maximum(raw, STD_FLOOR), raw
        std = np.broadcast_to(np.exp(self.log_std), (batch, self.log_std.shape[0]))
        return std, std

    def values(self, observations):
        _, v, _ = mlp_forward(self.value_net, observations)
        return v[:, 0]

    def deterministic(self, observations):
        _, mean, _ = mlp_forward(self.net, observations)
        return np.clip(mean, -1.0, 1.0)

    def act(self, observations, distribution: Optional[GsdeDistribution], rng):
        """Exploratory (unsquashed) actions with their log-probabilities and value estimates."""
        latent, mean, _ = mlp_forward(self.net, observations)
        z = _features(self.features, observations, latent)
        std, _ = self._std(z, mean.shape[0])
        if self.use_gsde:
            actions = distribution.sample(mean, z, rng)
        else:
            actions = mean + std * rng.standard_normal(mean.shape)
        return actions, gaussian_log_prob(actions, mean, std), self.values(observations)

    def evaluate(self, observations, actions) -> PolicyEvaluation:
        latent, mean, tape = mlp_forward(self.net, observations)
        z = _features(self.features, observations, latent)
        _, values, value_tape = mlp_forward(self.value_net, observations)
        actions = np.atleast_2d(actions)
        std, raw = self._std(z, mean.shape[0])
        log_prob = gaussian_log_prob(actions, mean, std)
        entropy = (0.5 + 0.5 * np.log(2.0 * np.pi) + np.log(std)).sum(axis=-1)
        return PolicyEvaluation(z, mean, tape, values[:, 0], value_tape, actions, std, raw, log_prob, entropy)

    def backward(self, ev: PolicyEvaluation, d_log_prob, d_entropy, d_values):
        """Gradients of sum_b (d_log_prob logp + d_entropy H + d_values V), aligned with parameters()."""
        d_log_prob = np.asarray(d_log_prob, dtype=np.float64)[:, None]
        _, dlogp_dmean, dlogp_dstd = gaussian_log_prob_grads(ev.actions, ev.mean, ev.std)
        d_mean = d_log_prob * dlogp_dmean
        d_std = d_log_prob * dlogp_dstd + np.asarray(d_entropy, dtype=np.float64)[:, None] / ev.std
        if self.use_gsde:
            sigma = variance_transform(self.log_std, self.transform)
            d_log_std = sigma_hat_backward(ev.features, sigma, ev.std_raw, d_std) * variance_transform_grad(
                self.log_std, self.transform
            )
        else:
            d_log_std = (d_std * ev.std).sum(axis=0)
        policy_grads, _ = mlp_backward(self.net, ev.tape, d_mean)
        value_grads, _ = mlp_backward(self.value_net, ev.value_tape, np.asarray(d_values, dtype=np.float64)[:, None])
        return policy_grads + value_grads + [d_log_std]
