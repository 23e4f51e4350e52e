"""
Dense float64 kernel shared by the model, gradient and training code
"""

import numpy as np
from scipy.special import expit

DEGENERATE_NORM = 1e-12
ADAGRAD_DAMPING = 1e-8


class ConfigurationError(ValueError):
    """Raised for shape mismatches and invalid settings. Always fatal."""
    pass


class RngStream:
    """Seeded random stream. Same seed, same draws, on every platform."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def child(self, key: int) -> "RngStream":
        # Derived streams depend only on (seed, key), never on how much the parent consumed
        derived = np.random.SeedSequence([self.seed, int(key)]).generate_state(1, dtype=np.uint64)[0]
        return RngStream(int(derived))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, pool: np.ndarray, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(pool, size=size, replace=replace)

    def integers(self, high: int) -> int:
        return int(self._gen.integers(high))


def as_matrix(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    m = as_matrix(m)
    v = as_matrix(v)
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ConfigurationError(f"matvec dimension mismatch: {m.shape} x {v.shape}")
    return m @ v


def outer(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.outer(as_matrix(u), as_matrix(v))


def frobenius_norm(m: np.ndarray) -> float:
    return float(np.sqrt(np.sum(np.square(as_matrix(m)))))


def scale_to_norm(m: np.ndarray, target: float) -> np.ndarray:
    """Rescale m to Frobenius norm `target`; a (near) zero input stays zero."""
    if target < 0:
        raise ConfigurationError(f"target norm must be >= 0, got {target}")
    m = as_matrix(m)
    norm = frobenius_norm(m)
    if norm < DEGENERATE_NORM:
        return np.zeros_like(m)
    return m * (target / norm)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return expit(z)


def bce_with_logits(label, logit) -> np.ndarray:
    """Cross-entropy of sigma(logit) against a 0/1 label, log-sum-exp form."""
    label = as_matrix(label)
    logit = as_matrix(logit)
    # log(1 + e^z) - y*z, rewritten so neither branch overflows
    return np.maximum(logit, 0.0) - label * logit + np.log1p(np.exp(-np.abs(logit)))


def gaussian_fill(rows: int, cols: int, std: float, rng: RngStream) -> np.ndarray:
    if std < 0:
        raise ConfigurationError(f"std must be >= 0, got {std}")
    shape = (rows,) if cols is None else (rows, cols)
    draws = rng.normal(shape)
    return draws * std


def adagrad_step(param: np.ndarray, grad: np.ndarray, accumulator: np.ndarray,
                 base_rate: float, damping: float = ADAGRAD_DAMPING):
    if not (param.shape == grad.shape == accumulator.shape):
        raise ConfigurationError(
            f"adagrad shape mismatch: param {param.shape}, grad {grad.shape}, accumulator {accumulator.shape}"
        )
    if base_rate <= 0:
        raise ConfigurationError(f"adagrad base rate must be > 0, got {base_rate}")
    accumulator = accumulator + grad * grad
    param = param - base_rate * grad / (np.sqrt(accumulator) + damping)
    return param, accumulator


def all_finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)
