"""Policy distributions: diagonal Gaussian, tanh squashing and generalized state-dependent exploration.

All functions accept either a single vector or a batch (leading axis) and reduce over the
last (action) axis where a scalar per sample is expected.
"""
import logging
from dataclasses import dataclass

import numpy as np

from core.errors import ShapeError

logger = logging.getLogger(__name__)

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
STD_FLOOR = 1e-6
LOG_2 = float(np.log(2.0))
LOG_2PI = float(np.log(2.0 * np.pi))
# largest float64 strictly below 1, keeps squashed actions inside the open interval
_TANH_LIMIT = float(np.nextafter(1.0, 0.0))

TRANSFORMS = ("exp", "expln")


def expln(x):
    """exp(x) for x <= 0, log(x + 1) + 1 otherwise."""
    x = np.asarray(x, dtype=np.float64)
    below = np.exp(np.minimum(x, 0.0))
    above = np.log1p(np.maximum(x, 0.0)) + 1.0
    out = np.where(x <= 0.0, below, above)
    return float(out) if out.ndim == 0 else out


def expln_grad(x):
    x = np.asarray(x, dtype=np.float64)
    return np.where(x <= 0.0, np.exp(np.minimum(x, 0.0)), 1.0 / (np.maximum(x, 0.0) + 1.0))


def variance_transform(log_sigma, transform="exp"):
    if transform == "exp":
        return np.exp(log_sigma)
    if transform == "expln":
        return expln(log_sigma)
    raise ValueError(f"unknown variance transform {transform!r}")


def variance_transform_grad(log_sigma, transform="exp"):
    if transform == "exp":
        return np.exp(log_sigma)
    if transform == "expln":
        return expln_grad(log_sigma)
    raise ValueError(f"unknown variance transform {transform!r}")


def gsde_std(log_sigma, features, transform="exp"):
    """sigma_hat_j = sqrt(sum_i (sigma_ij * z_i)^2) for a feature vector or a batch of them."""
    log_sigma = np.asarray(log_sigma, dtype=np.float64)
    z = np.asarray(features, dtype=np.float64)
    if z.shape[-1] != log_sigma.shape[0]:
        raise ShapeError(f"feature length {z.shape[-1]} != log_sigma rows {log_sigma.shape[0]}")
    sigma = variance_transform(log_sigma, transform)
    return np.sqrt(np.square(z) @ np.square(sigma))


def gsde_action(mean, theta_eps, features):
    """mu + theta_eps^T z."""
    mean = np.asarray(mean, dtype=np.float64)
    z = np.asarray(features, dtype=np.float64)
    if z.shape[-1] != theta_eps.shape[0] or mean.shape[-1] != theta_eps.shape[1]:
        raise ShapeError(
            f"theta_eps {theta_eps.shape} incompatible with features {z.shape} and mean {mean.shape}"
        )
    return mean + z @ theta_eps


def _floor_std(std):
    floored = np.maximum(std, STD_FLOOR)
    if np.any(std < STD_FLOOR):
        logger.debug("sigma_hat hit the numerical floor on %d entries", int(np.sum(std < STD_FLOOR)))
    return floored


def gaussian_log_prob(action, mean, std):
    action = np.asarray(action, dtype=np.float64)
    mean = np.asarray(mean, dtype=np.float64)
    if action.shape != mean.shape:
        raise ShapeError(f"action shape {action.shape} != mean shape {mean.shape}")
    std = _floor_std(np.asarray(std, dtype=np.float64))
    terms = -np.square(action - mean) / (2.0 * np.square(std)) - np.log(std) - 0.5 * LOG_2PI
    return terms.sum(axis=-1)


def gaussian_log_prob_grads(action, mean, std):
    """Per-element partials of the Gaussian log-density: (d/d action, d/d mean, d/d std)."""
    std = _floor_std(np.asarray(std, dtype=np.float64))
    diff = np.asarray(action, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    var = np.square(std)
    d_mean = diff / var
    d_std = (np.square(diff) - var) / (var * std)
    return -d_mean, d_mean, d_std


def gsde_log_prob(action, mean, sigma_hat):
    """Log-density of N(mean, sigma_hat^2) with sigma_hat floored at 1e-6."""
    return gaussian_log_prob(action, mean, sigma_hat)


def grad_log_prob_sigma(action, mean, features, log_sigma, transform="exp"):
    """Closed-form d log pi / d sigma_ij, with the features held constant.

    ((a_j - mu_j)^2 - sigma_hat_j^2) / sigma_hat_j^3 * z_i^2 sigma_ij / sigma_hat_j
    Batched inputs give one matrix per sample, shape (batch, latent, action).
    """
    sigma = variance_transform(np.asarray(log_sigma, dtype=np.float64), transform)
    z = np.asarray(features, dtype=np.float64)
    diff = np.asarray(action, dtype=np.float64) - np.asarray(mean, dtype=np.float64)
    raw = gsde_std(log_sigma, z, transform)
    sigma_hat = np.maximum(raw, STD_FLOOR)
    outer = ((np.square(diff) - np.square(sigma_hat)) / sigma_hat ** 3) / sigma_hat
    # the floor is a constant, so no gradient reaches sigma through a floored entry
    outer = np.where(raw < STD_FLOOR, 0.0, outer)
    return np.square(z)[..., :, None] * sigma * outer[..., None, :]


def sigma_hat_backward(features, sigma, sigma_hat_raw, upstream):
    """Pull dLoss/dsigma_hat (batch, action) back to dLoss/dsigma (latent, action)."""
    z = np.atleast_2d(np.asarray(features, dtype=np.float64))
    upstream = np.atleast_2d(upstream)
    raw = np.atleast_2d(sigma_hat_raw)
    scaled = np.where(raw < STD_FLOOR, 0.0, upstream / np.maximum(raw, STD_FLOOR))
    return (np.square(z).T @ scaled) * sigma


@dataclass
class SquashedSample:
    pre_squash: np.ndarray
    action: np.ndarray
    log_prob: np.ndarray


def squash_log_det(u):
    """sum_j log(1 - tanh(u_j)^2), as 2 (log 2 - u - softplus(-2u)) so it stays finite for large |u|."""
    u = np.asarray(u, dtype=np.float64)
    return (2.0 * (LOG_2 - u - np.logaddexp(0.0, -2.0 * u))).sum(axis=-1)


def squash_log_det_grad(u):
    """Elementwise d/du_j of squash_log_det."""
    return -2.0 * np.tanh(np.asarray(u, dtype=np.float64))


def squash(u):
    return np.clip(np.tanh(u), -_TANH_LIMIT, _TANH_LIMIT)


def squash_correct(u, gaussian_logp):
    u = np.asarray(u, dtype=np.float64)
    return SquashedSample(pre_squash=u, action=squash(u), log_prob=gaussian_logp - squash_log_det(u))


def gaussian_entropy(std):
    std = _floor_std(np.asarray(std, dtype=np.float64))
    return (0.5 + 0.5 * LOG_2PI + np.log(std)).sum(axis=-1)


def entropy_estimate(sigma_hat, squashed_log_probs=None):
    """Analytic Gaussian entropy, or -mean(log_prob) of samples when actions are squashed."""
    if squashed_log_probs is not None:
        return float(-np.mean(squashed_log_probs))
    return gaussian_entropy(sigma_hat)


class DiagGaussian:
    def __init__(self, mean, log_std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.log_std = np.clip(np.asarray(log_std, dtype=np.float64), LOG_STD_MIN, LOG_STD_MAX)
        if self.mean.shape[-1] != self.log_std.shape[-1]:
            raise ShapeError(f"mean {self.mean.shape} and log_std {self.log_std.shape} disagree")

    @property
    def std(self):
        return np.exp(self.log_std)

    def sample(self, rng):
        return self.mean + self.std * rng.standard_normal(self.mean.shape)

    def log_prob(self, action):
        return gaussian_log_prob(action, self.mean, np.broadcast_to(self.std, self.mean.shape))

    def entropy(self):
        return gaussian_entropy(np.broadcast_to(self.std, self.mean.shape))


class GsdeDistribution:
    """Noise matrix theta_eps ~ N(0, sigma^2), redrawn every ``sample_interval`` steps.

    ``log_sigma`` may be shared read-only between instances (one instance per worker);
    ``theta_eps`` and the step counter are owned by the instance.
    """

    def __init__(self, log_sigma, sample_interval=1, transform="exp"):
        if sample_interval < 1:
            raise ValueError("sample_interval must be >= 1")
        if transform not in TRANSFORMS:
            raise ValueError(f"unknown variance transform {transform!r}")
        self.log_sigma = np.asarray(log_sigma, dtype=np.float64)
        self.sample_interval = int(sample_interval)
        self.transform = transform
        self.weights_eps = np.zeros_like(self.log_sigma)
        self.theta_eps = np.zeros_like(self.log_sigma)
        # forces a draw on the first sample() call
        self.steps_since_resample = self.sample_interval

    @classmethod
    def from_constant(cls, latent_dim, action_dim, log_std_init, **kwargs):
        return cls(np.full((latent_dim, action_dim), float(log_std_init)), **kwargs)

    @property
    def latent_dim(self):
        return self.log_sigma.shape[0]

    @property
    def action_dim(self):
        return self.log_sigma.shape[1]

    def sigma(self):
        return variance_transform(self.log_sigma, self.transform)

    def resample_noise(self, rng):
        """theta_eps = sigma * eps, eps ~ N(0, I); eps is kept for reparameterised gradients."""
        self.weights_eps = rng.standard_normal(self.log_sigma.shape)
        self.theta_eps = self.sigma() * self.weights_eps
        self.steps_since_resample = 0
        return self.theta_eps

    def std(self, features):
        return gsde_std(self.log_sigma, features, self.transform)

    def action(self, mean, features):
        return gsde_action(mean, self.theta_eps, features)

    def sample(self, mean, features, rng):
        """Exploratory action for one environment step, redrawing theta_eps when due."""
        if self.steps_since_resample >= self.sample_interval:
            self.resample_noise(rng)
        self.steps_since_resample += 1
        return self.action(mean, features)

    def log_prob(self, action, mean, features):
        return gsde_log_prob(action, mean, self.std(features))

    def log_prob_grads(self, action, mean, features, weights=None):
        """Chain-rule gradients of sum_b w_b log pi(a_b | s_b).

        Returns (log_prob per sample, d/d mean per sample, d/d log_sigma).
        """
        z = np.atleast_2d(features)
        action = np.atleast_2d(action)
        mean = np.atleast_2d(mean)
        weights = np.ones(z.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
        raw = self.std(z)
        logp = gsde_log_prob(action, mean, raw)
        _, d_mean, d_std = gaussian_log_prob_grads(action, mean, raw)
        d_sigma = sigma_hat_backward(z, self.sigma(), raw, d_std * weights[:, None])
        d_log_sigma = d_sigma * variance_transform_grad(self.log_sigma, self.transform)
        return logp, d_mean * weights[:, None], d_log_sigma

    def entropy(self, features):
        return gaussian_entropy(self.std(features))
