"""
Closed-form gradients of the batch loss and the fast-gradient adversarial noise
"""

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from model import (
    ModelParams,
    NoiseKind,
    NoiseSite,
    NoiseSpec,
    NoiseTensor,
    activation_grad,
    forward,
    site_shape,
)
from utils.numerics import ConfigurationError, RngStream, scale_to_norm, sigmoid

logger = logging.getLogger("gradients")


@dataclass
class ParamGrads:
    gW1: np.ndarray
    gW2: np.ndarray
    gb1: np.ndarray
    gb2: np.ndarray
    users: np.ndarray   # distinct batch users, ascending
    gP_cols: np.ndarray  # K x len(users); columns of every other user are zero

    def dense_P(self, user_count: int) -> np.ndarray:
        full = np.zeros((self.gP_cols.shape[0], user_count))
        full[:, self.users] = self.gP_cols
        return full


@dataclass
class _Deltas:
    out: np.ndarray     # dLoss/dlogits, B x I
    hidden: np.ndarray  # dLoss/dh, B x K
    pre: np.ndarray     # dLoss/dz1, B x K
    h: np.ndarray
    inputs: np.ndarray


def _deltas(params: ModelParams, users: np.ndarray, targets: np.ndarray, inputs: np.ndarray,
            noise: Optional[NoiseTensor], weight: float) -> _Deltas:
    trace = forward(params, users, inputs, noise)
    out = weight * (sigmoid(trace.logits) - targets)
    W2 = params.W2
    if noise is not None and noise.site is NoiseSite.DECODER_WEIGHTS:
        W2 = W2 + noise.values
    hidden = out @ W2
    pre = hidden * activation_grad(trace.z1, params.encoder_act)
    return _Deltas(out, hidden, pre, trace.h, inputs)


def _as_batch(users, targets, inputs):
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    inputs = targets if inputs is None else np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    return users, targets, inputs


def backprop(params: ModelParams, users, targets: np.ndarray,
             noise_terms: Sequence[Tuple[NoiseTensor, float]] = (), gamma: float = 0.0,
             inputs: Optional[np.ndarray] = None) -> ParamGrads:
    """Exact gradient of model.batch_loss with every noise tensor held constant."""
    users, targets, inputs = _as_batch(users, targets, inputs)
    if targets.shape != (len(users), params.item_count):
        raise ConfigurationError(f"targets shape {targets.shape} does not match batch of {len(users)} users")

    K = params.hidden_dim
    batch_users, slot = np.unique(users, return_inverse=True)
    gW1 = np.zeros_like(params.W1)
    gW2 = np.zeros_like(params.W2)
    gb1 = np.zeros_like(params.b1)
    gb2 = np.zeros_like(params.b2)
    gP = np.zeros((K, len(batch_users)))

    if len(users):
        passes = [(None, 1.0)] + [(n, lam) for n, lam in noise_terms if lam]
        for noise, weight in passes:
            d = _deltas(params, users, targets, inputs, noise, weight)
            gW2 += d.out.T @ d.h
            gb2 += d.out.sum(axis=0)
            gW1 += d.pre.T @ d.inputs
            gb1 += d.pre.sum(axis=0)
            np.add.at(gP.T, slot, d.pre)

    if gamma:
        gW1 += 2 * gamma * params.W1
        gW2 += 2 * gamma * params.W2
        gb1 += 2 * gamma * params.b1
        gb2 += 2 * gamma * params.b2
        gP += 2 * gamma * params.P[:, batch_users]

    return ParamGrads(gW1, gW2, gb1, gb2, batch_users, gP)


def noise_grad(params: ModelParams, users, targets: np.ndarray, site,
               inputs: Optional[np.ndarray] = None) -> np.ndarray:
    """Gradient of the unregularized batch cross-entropy w.r.t. the noise at `site`, at zero noise."""
    site = NoiseSite(site)
    users, targets, inputs = _as_batch(users, targets, inputs)
    if len(users) == 0:
        return np.zeros(site_shape(params, site))
    d = _deltas(params, users, targets, inputs, None, 1.0)
    if site is NoiseSite.ENCODER_WEIGHTS:
        return d.pre.T @ d.inputs
    if site is NoiseSite.DECODER_WEIGHTS:
        return d.out.T @ d.h
    if site is NoiseSite.USER_EMBEDDING:
        return d.pre.sum(axis=0)
    return d.hidden.sum(axis=0)


def make_adversarial_noise(params: ModelParams, users, targets: np.ndarray, site, epsilon: float,
                           inputs: Optional[np.ndarray] = None) -> NoiseTensor:
    """Fast-gradient noise: the loss gradient at the site, rescaled to norm epsilon."""
    spec = NoiseSpec(site, NoiseKind.ADVERSARIAL, epsilon)
    if epsilon == 0:
        return NoiseTensor(spec, np.zeros(site_shape(params, site)))
    return NoiseTensor(spec, scale_to_norm(noise_grad(params, users, targets, site, inputs), epsilon))


def make_gaussian_noise(params: ModelParams, site, epsilon: float, rng: RngStream) -> NoiseTensor:
    """Random direction with Frobenius norm epsilon, comparable to adversarial noise of equal size."""
    spec = NoiseSpec(site, NoiseKind.GAUSSIAN, epsilon)
    return NoiseTensor(spec, scale_to_norm(rng.normal(site_shape(params, site)), epsilon))
