"""
Collaborative auto-encoder: parameters, noisy forward pass, scoring and loss
"""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np

from utils.numerics import ConfigurationError, RngStream, bce_with_logits, frobenius_norm, sigmoid

logger = logging.getLogger("model")

ACTIVATIONS = ("sigmoid", "identity")


class NoiseSite(str, Enum):
    ENCODER_WEIGHTS = "encoder_weights"
    DECODER_WEIGHTS = "decoder_weights"
    USER_EMBEDDING = "user_embedding"
    HIDDEN_LAYER = "hidden_layer"


class NoiseKind(str, Enum):
    GAUSSIAN = "gaussian"
    ADVERSARIAL = "adversarial"
    ZERO = "zero"


@dataclass
class ModelParams:
    W1: np.ndarray  # K x I
    W2: np.ndarray  # I x K
    b1: np.ndarray  # K
    b2: np.ndarray  # I
    P: np.ndarray   # K x U, column u is p_u
    encoder_act: str = "sigmoid"
    decoder_act: str = "identity"

    def __post_init__(self):
        for act in (self.encoder_act, self.decoder_act):
            if act not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation '{act}', expected one of {ACTIVATIONS}")
        K, I = self.W1.shape
        U = self.P.shape[1]
        if self.W2.shape != (I, K) or self.b1.shape != (K,) or self.b2.shape != (I,) or self.P.shape != (K, U):
            raise ConfigurationError(
                f"inconsistent parameter shapes: W1 {self.W1.shape}, W2 {self.W2.shape}, "
                f"b1 {self.b1.shape}, b2 {self.b2.shape}, P {self.P.shape}"
            )

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def item_count(self) -> int:
        return self.W1.shape[1]

    @property
    def user_count(self) -> int:
        return self.P.shape[1]

    def tensors(self) -> dict:
        return {"W1": self.W1, "W2": self.W2, "b1": self.b1, "b2": self.b2, "P": self.P}

    def copy(self) -> "ModelParams":
        return ModelParams(self.W1.copy(), self.W2.copy(), self.b1.copy(), self.b2.copy(), self.P.copy(),
                           self.encoder_act, self.decoder_act)

    def squared_norm(self, users: Optional[np.ndarray] = None) -> float:
        """Sum of squared entries; P restricted to `users` when given."""
        P = self.P if users is None else self.P[:, users]
        return float(sum(np.sum(np.square(t)) for t in (self.W1, self.W2, self.b1, self.b2, P)))


@dataclass
class NoiseSpec:
    site: NoiseSite
    kind: NoiseKind
    epsilon: float

    def __post_init__(self):
        self.site = NoiseSite(self.site)
        self.kind = NoiseKind(self.kind)
        if self.epsilon < 0:
            raise ConfigurationError(f"noise epsilon must be >= 0, got {self.epsilon}")


@dataclass
class NoiseTensor:
    spec: NoiseSpec
    values: np.ndarray

    def __post_init__(self):
        if frobenius_norm(self.values) > self.spec.epsilon * (1 + 1e-9):
            raise ConfigurationError(
                f"noise norm {frobenius_norm(self.values)} exceeds epsilon {self.spec.epsilon}"
            )

    @property
    def site(self) -> NoiseSite:
        return self.spec.site


@dataclass
class ForwardTrace:
    z1: np.ndarray      # pre-activation hidden, B x K
    h: np.ndarray       # hidden output (after hidden-layer noise), B x K
    logits: np.ndarray  # decoder output before its activation, B x I


def site_shape(params: ModelParams, site) -> Tuple[int, ...]:
    site = NoiseSite(site)
    K, I = params.hidden_dim, params.item_count
    if site is NoiseSite.ENCODER_WEIGHTS:
        return (K, I)
    if site is NoiseSite.DECODER_WEIGHTS:
        return (I, K)
    return (K,)


def zero_noise(params: ModelParams, site) -> NoiseTensor:
    return NoiseTensor(NoiseSpec(site, NoiseKind.ZERO, 0.0), np.zeros(site_shape(params, site)))


def activate(z: np.ndarray, kind: str) -> np.ndarray:
    return sigmoid(z) if kind == "sigmoid" else z


def activation_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "sigmoid":
        s = sigmoid(z)
        return s * (1.0 - s)
    return np.ones_like(z)


def profile_matrix(profiles: Sequence[np.ndarray], users: Sequence[int], item_count: int) -> np.ndarray:
    """Dense 0/1 rows for `users` from per-user positive index lists."""
    users = np.asarray(users, dtype=np.int64)
    Y = np.zeros((len(users), item_count))
    for row, u in enumerate(users):
        Y[row, profiles[u]] = 1.0
    return Y


def corrupt_inputs(Y: np.ndarray, drop_prob: float, rng: RngStream) -> np.ndarray:
    """Mask-out corruption: drop each entry with drop_prob, rescale survivors."""
    if drop_prob <= 0:
        return Y
    if drop_prob >= 1:
        raise ConfigurationError(f"drop_prob must be < 1, got {drop_prob}")
    keep = rng.uniform(Y.shape) >= drop_prob
    return Y * keep / (1.0 - drop_prob)


def forward(params: ModelParams, users, Y: np.ndarray, noise: Optional[NoiseTensor] = None,
            input_corruption: Optional[Tuple[float, RngStream]] = None) -> ForwardTrace:
    """Batched forward pass with at most one noise site active.

    `users` indexes the columns of P; `Y` holds one input row per user. A
    scalar user with a 1-D vector returns a 1-D trace.
    """
    single = np.ndim(users) == 0
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    if Y.shape != (len(users), params.item_count):
        raise ConfigurationError(f"input shape {Y.shape} does not match {len(users)} users x {params.item_count} items")

    W1, W2 = params.W1, params.W2
    n1 = n2 = None
    if noise is not None:
        expected = site_shape(params, noise.site)
        if noise.values.shape != expected:
            raise ConfigurationError(f"{noise.site.value} noise shape {noise.values.shape}, expected {expected}")
        if noise.site is NoiseSite.ENCODER_WEIGHTS:
            W1 = W1 + noise.values
        elif noise.site is NoiseSite.DECODER_WEIGHTS:
            W2 = W2 + noise.values
        elif noise.site is NoiseSite.USER_EMBEDDING:
            n1 = noise.values
        else:
            n2 = noise.values

    if input_corruption is not None:
        drop_prob, rng = input_corruption
        Y = corrupt_inputs(Y, drop_prob, rng)

    z1 = Y @ W1.T + params.P[:, users].T + params.b1
    if n1 is not None:
        z1 = z1 + n1
    h = activate(z1, params.encoder_act)
    if n2 is not None:
        h = h + n2
    logits = h @ W2.T + params.b2

    if single:
        return ForwardTrace(z1[0], h[0], logits[0])
    return ForwardTrace(z1, h, logits)


def score_user(params: ModelParams, user, y) -> np.ndarray:
    """Prediction scores; the decoder activation is monotone so rankings match the logits."""
    logits = forward(params, user, y).logits
    return activate(logits, params.decoder_act)


def score_users(params: ModelParams, users, Y: np.ndarray, noise: Optional[NoiseTensor] = None) -> np.ndarray:
    return activate(forward(params, users, Y, noise).logits, params.decoder_act)


def rank_top_n(scores: np.ndarray, candidates, n: int) -> List[int]:
    """Top-n candidates by descending score, ties by ascending item index."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if candidates.size == 0:
        raise ConfigurationError("rank_top_n needs at least one candidate")
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    cand_scores = np.asarray(scores)[candidates]
    order = np.lexsort((candidates, -cand_scores))
    return [int(i) for i in candidates[order[:n]]]


def cross_entropy(params: ModelParams, users, targets: np.ndarray, inputs: Optional[np.ndarray] = None,
                  noise: Optional[NoiseTensor] = None) -> float:
    """Cross-entropy over all items of every user in the batch."""
    inputs = targets if inputs is None else inputs
    logits = forward(params, users, inputs, noise).logits
    return float(np.sum(bce_with_logits(targets, logits)))


def batch_loss(params: ModelParams, users, targets: np.ndarray,
               noise_terms: Sequence[Tuple[NoiseTensor, float]] = (), gamma: float = 0.0,
               inputs: Optional[np.ndarray] = None) -> float:
    """Clean cross-entropy + lambda-weighted noisy cross-entropies + gamma * squared norms.

    The P part of the regularizer covers the batch users' columns only.
    """
    if gamma < 0:
        raise ConfigurationError(f"gamma must be >= 0, got {gamma}")
    users = np.atleast_1d(np.asarray(users, dtype=np.int64))
    targets = np.atleast_2d(targets)
    total = 0.0
    if len(users):
        total = cross_entropy(params, users, targets, inputs)
        for noise, lam in noise_terms:
            if lam < 0:
                raise ConfigurationError(f"noise weight must be >= 0, got {lam}")
            if lam:
                total += lam * cross_entropy(params, users, targets, inputs, noise)
    if gamma:
        total += gamma * params.squared_norm(np.unique(users))
    return total
