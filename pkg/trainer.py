"""
Two-stage training: fixed-rate SGD pre-training, then minimax adversarial training with Adagrad
"""

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from data.interactions import BinaryDataset
from data.splits import SplitSpec, make_validation_split
from evaluation import DEFAULT_NS, EvalReport, evaluate
from gradients import ParamGrads, backprop, make_adversarial_noise
from model import ModelParams, NoiseSite, batch_loss, corrupt_inputs, profile_matrix
from utils.numerics import ConfigurationError, RngStream, adagrad_step, gaussian_fill
from utils.trace_logger import TraceRow, TrainingTraceLogger

CHECKPOINT_MAGIC = b"ACAE"
CHECKPOINT_VERSION = 1
ACTIVATION_TAGS = {"identity": 0, "sigmoid": 1}
_HEADER = struct.Struct("<4sIQQQBB")


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""
    pass


class CheckpointError(ValueError):
    """Raised when a checkpoint file is corrupt, truncated or of another version."""
    pass


@dataclass
class PretrainConfig:
    learning_rate: float = 0.01
    batch_size: int = 128
    max_epochs: int = 500
    gamma: float = 1e-4
    init_std: float = 0.01
    eval_every: int = 1
    early_stop_patience: int = 10
    seed: int = 2018
    input_corruption: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ConfigurationError(f"invalid pre-training config: {self}")

    @classmethod
    def from_config(cls, config: dict) -> "PretrainConfig":
        pre = config.get("pretrain", {})
        return cls(
            learning_rate=float(pre.get("learning_rate", 0.01)),
            batch_size=int(pre.get("batch_size", 128)),
            max_epochs=int(pre.get("max_epochs", 500)),
            gamma=float(config.get("gamma", 1e-4)),
            init_std=float(pre.get("init_std", 0.01)),
            eval_every=int(pre.get("eval_every", 1)),
            early_stop_patience=int(pre.get("early_stop_patience", 10)),
            seed=int(pre.get("seed", 2018)),
            input_corruption=float(config.get("model", {}).get("input_corruption", 0.0)),
        )


@dataclass
class AdvConfig:
    epsilon: float = 1.0
    lambdas: Dict[str, float] = field(default_factory=lambda: {"decoder_weights": 1.0})
    adagrad_base_rate: float = 0.01
    batch_size: int = 128
    max_epochs: int = 1000
    eval_every: int = 1
    early_stop_patience: int = 10
    seed: int = 2020
    input_corruption: float = 0.0

    def __post_init__(self):
        if self.epsilon < 0 or any(lam < 0 for lam in self.lambdas.values()):
            raise ConfigurationError(f"epsilon and lambdas must be >= 0: {self}")
        if self.adagrad_base_rate <= 0 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ConfigurationError(f"invalid adversarial config: {self}")
        self.lambdas = {NoiseSite(site).value: float(lam) for site, lam in self.lambdas.items()}

    def active_sites(self) -> List[Tuple[NoiseSite, float]]:
        """Sites that contribute a noise term; none when epsilon is zero."""
        if self.epsilon == 0:
            return []
        return [(NoiseSite(site), lam) for site, lam in sorted(self.lambdas.items()) if lam > 0]

    @classmethod
    def from_config(cls, config: dict) -> "AdvConfig":
        adv = config.get("adversarial", {})
        return cls(
            epsilon=float(adv.get("epsilon", 1.0)),
            lambdas=dict(adv.get("lambdas") or {}),
            adagrad_base_rate=float(adv.get("adagrad_base_rate", 0.01)),
            batch_size=int(adv.get("batch_size", 128)),
            max_epochs=int(adv.get("max_epochs", 1000)),
            eval_every=int(adv.get("eval_every", 1)),
            early_stop_patience=int(adv.get("early_stop_patience", 10)),
            seed=int(adv.get("seed", 2020)),
            input_corruption=float(config.get("model", {}).get("input_corruption", 0.0)),
        )


@dataclass
class TrainerState:
    params: ModelParams
    rng: RngStream
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)
    epoch: int = 0
    best_params: Optional[ModelParams] = None
    best_hr: float = -1.0

    def __post_init__(self):
        if not self.accumulators:
            self.accumulators = {name: np.zeros_like(t) for name, t in self.params.tensors().items()}


def init_params(U: int, I: int, K: int, encoder_act: str = "sigmoid", decoder_act: str = "identity",
                init_std: float = 0.01, rng: Optional[RngStream] = None) -> ModelParams:
    if min(U, I, K) < 1:
        raise ConfigurationError(f"model dimensions must be >= 1, got U={U} I={I} K={K}")
    rng = rng or RngStream(0)
    return ModelParams(
        W1=gaussian_fill(K, I, init_std, rng),
        W2=gaussian_fill(I, K, init_std, rng),
        b1=gaussian_fill(K, None, init_std, rng),
        b2=gaussian_fill(I, None, init_std, rng),
        P=gaussian_fill(K, U, init_std, rng),
        encoder_act=encoder_act,
        decoder_act=decoder_act,
    )


def sgd_update(params: ModelParams, grads: ParamGrads, learning_rate: float):
    params.W1 -= learning_rate * grads.gW1
    params.W2 -= learning_rate * grads.gW2
    params.b1 -= learning_rate * grads.gb1
    params.b2 -= learning_rate * grads.gb2
    params.P[:, grads.users] -= learning_rate * grads.gP_cols


def adagrad_update(state: TrainerState, grads: ParamGrads, base_rate: float):
    params, acc = state.params, state.accumulators
    for name, grad in (("W1", grads.gW1), ("W2", grads.gW2), ("b1", grads.gb1), ("b2", grads.gb2)):
        new_param, acc[name] = adagrad_step(getattr(params, name), grad, acc[name], base_rate)
        setattr(params, name, new_param)
    cols = grads.users
    new_cols, acc_cols = adagrad_step(params.P[:, cols], grads.gP_cols, acc["P"][:, cols], base_rate)
    params.P[:, cols] = new_cols
    acc["P"][:, cols] = acc_cols


class Trainer:
    """Runs both training stages against a validation split carved out of the training data"""

    def __init__(self, dataset: BinaryDataset, split: SplitSpec, validation_seed: int = 2019,
                 n_neg: int = 200, trace: Optional[TrainingTraceLogger] = None,
                 ns: Sequence[int] = DEFAULT_NS, batch_users: int = 512):
        self.logger = logging.getLogger("trainer")
        self.dataset = dataset
        self.split = split
        self.validation = make_validation_split(dataset, split, validation_seed, n_neg)
        self.fit_profiles = self.validation.train_positives
        self.trace = trace or TrainingTraceLogger()
        self.ns = tuple(sorted(set(ns) | {5, 10}))
        self.batch_users = batch_users

    def batch_targets(self, users: np.ndarray) -> np.ndarray:
        return profile_matrix(self.fit_profiles, users, self.dataset.item_count)

    def _batch_inputs(self, targets: np.ndarray, drop_prob: float, rng: RngStream) -> Optional[np.ndarray]:
        if drop_prob <= 0:
            return None
        return corrupt_inputs(targets, drop_prob, rng)

    def epoch_batches(self, rng: RngStream, batch_size: int) -> List[np.ndarray]:
        """One random permutation of all users, cut into batches of batch_size."""
        order = rng.permutation(self.dataset.user_count)
        return [np.sort(order[i:i + batch_size]) for i in range(0, len(order), batch_size)]

    def validate(self, params: ModelParams) -> EvalReport:
        return evaluate(params, self.dataset, self.validation, self.ns,
                        profiles=self.fit_profiles, batch_users=self.batch_users)

    def sgd_step(self, state: TrainerState, users: np.ndarray, cfg: PretrainConfig) -> float:
        targets = self.batch_targets(users)
        inputs = self._batch_inputs(targets, cfg.input_corruption, state.rng)
        loss = batch_loss(state.params, users, targets, (), cfg.gamma, inputs)
        grads = backprop(state.params, users, targets, (), cfg.gamma, inputs)
        sgd_update(state.params, grads, cfg.learning_rate)
        return loss

    def adversarial_step(self, state: TrainerState, users: np.ndarray, cfg: AdvConfig, gamma: float) -> float:
        targets = self.batch_targets(users)
        inputs = self._batch_inputs(targets, cfg.input_corruption, state.rng)
        # Maximization: fresh fast-gradient noise per site, then held fixed
        noise_terms = [
            (make_adversarial_noise(state.params, users, targets, site, cfg.epsilon, inputs), lam)
            for site, lam in cfg.active_sites()
        ]
        # Minimization: one Adagrad step on the full regularized loss
        loss = batch_loss(state.params, users, targets, noise_terms, gamma, inputs)
        grads = backprop(state.params, users, targets, noise_terms, gamma, inputs)
        adagrad_update(state, grads, cfg.adagrad_base_rate)
        return loss

    def _run_stage(self, stage: str, state: TrainerState, max_epochs: int, eval_every: int, patience: int,
                   batch_size: int, step: Callable[[np.ndarray], float], rate: float) -> Tuple[ModelParams, List[TraceRow]]:
        rows: List[TraceRow] = []
        state.best_params = state.params.copy()
        state.best_hr = -1.0
        stale = 0
        for epoch in range(1, max_epochs + 1):
            state.epoch = epoch
            total = 0.0
            for users in self.epoch_batches(state.rng, batch_size):
                loss = step(users)
                if not math.isfinite(loss):
                    row = TraceRow(epoch, stage, float("nan"), 0.0, 0.0, 0.0, 0.0)
                    self.trace.log_evaluation(row)
                    rows.append(row)
                    raise DivergenceError(
                        f"{stage} diverged at epoch {epoch} (learning rate {rate}): loss is {loss}"
                    )
                total += loss
                self.logger.debug(f"[{stage}] epoch {epoch} batch of {len(users)}: loss={loss:.4f}")

            if epoch % eval_every and epoch != max_epochs:
                continue
            report = self.validate(state.params)
            row = TraceRow(epoch, stage, total / self.dataset.user_count, report.hr(5), report.ndcg(5),
                           report.hr(10), report.ndcg(10))
            self.trace.log_evaluation(row)
            rows.append(row)

            if report.hr(5) > state.best_hr:
                state.best_hr = report.hr(5)
                state.best_params = state.params.copy()
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    self.logger.info(
                        f"⏹️ [{stage}] early stop at epoch {epoch}: no HR@5 gain in {patience} evaluations "
                        f"(best {state.best_hr:.4f})"
                    )
                    break
        return state.best_params, rows

    def pretrain(self, cfg: PretrainConfig, hidden_dim: int = 64, encoder_act: str = "sigmoid",
                 decoder_act: str = "identity", params: Optional[ModelParams] = None) -> Tuple[ModelParams, List[TraceRow]]:
        rng = RngStream(cfg.seed)
        if params is None:
            params = init_params(self.dataset.user_count, self.dataset.item_count, hidden_dim,
                                 encoder_act, decoder_act, cfg.init_std, rng.child(0))
        state = TrainerState(params.copy(), rng.child(1))
        self.logger.info(
            f"🧠 Pre-training: K={params.hidden_dim}, eta={cfg.learning_rate}, B={cfg.batch_size}, "
            f"gamma={cfg.gamma}, up to {cfg.max_epochs} epochs"
        )
        return self._run_stage("pretrain", state, cfg.max_epochs, cfg.eval_every, cfg.early_stop_patience,
                               cfg.batch_size, lambda users: self.sgd_step(state, users, cfg), cfg.learning_rate)

    def adversarial_train(self, params: ModelParams, cfg: AdvConfig, gamma: float,
                          pretrained: bool = True) -> Tuple[ModelParams, List[TraceRow]]:
        if not pretrained:
            self.logger.warning("⚠️  Adversarial training from non-pre-trained parameters")
        state = TrainerState(params.copy(), RngStream(cfg.seed))
        sites = ", ".join(f"{s.value}={lam:g}" for s, lam in cfg.active_sites()) or "none"
        self.logger.info(
            f"⚔️ Adversarial training: epsilon={cfg.epsilon}, lambdas: {sites}, "
            f"Adagrad rate={cfg.adagrad_base_rate}, up to {cfg.max_epochs} epochs"
        )
        return self._run_stage("adversarial", state, cfg.max_epochs, cfg.eval_every, cfg.early_stop_patience,
                               cfg.batch_size, lambda users: self.adversarial_step(state, users, cfg, gamma),
                               cfg.adagrad_base_rate)


def pretrain(dataset: BinaryDataset, split: SplitSpec, cfg: PretrainConfig, hidden_dim: int = 64,
             encoder_act: str = "sigmoid", decoder_act: str = "identity", validation_seed: int = 2019,
             trace: Optional[TrainingTraceLogger] = None) -> Tuple[ModelParams, List[TraceRow]]:
    trainer = Trainer(dataset, split, validation_seed, trace=trace)
    return trainer.pretrain(cfg, hidden_dim, encoder_act, decoder_act)


def adversarial_train(params: ModelParams, dataset: BinaryDataset, split: SplitSpec, cfg: AdvConfig,
                      gamma: float, validation_seed: int = 2019,
                      trace: Optional[TrainingTraceLogger] = None) -> Tuple[ModelParams, List[TraceRow]]:
    trainer = Trainer(dataset, split, validation_seed, trace=trace)
    return trainer.adversarial_train(params, cfg, gamma)


def save_checkpoint(params: ModelParams, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = _HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.user_count, params.item_count,
                          params.hidden_dim, ACTIVATION_TAGS[params.encoder_act], ACTIVATION_TAGS[params.decoder_act])
    with open(path, "wb") as f:
        f.write(header)
        for tensor in (params.W1, params.W2, params.b1, params.b2, params.P):
            f.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())
    logging.getLogger("trainer").info(f"Saved checkpoint {path}")
    return path


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e

    if len(blob) < _HEADER.size:
        raise CheckpointError(f"truncated checkpoint {path}: expected at least {_HEADER.size} header bytes, got {len(blob)}")
    magic, version, U, I, K, enc_tag, dec_tag = _HEADER.unpack_from(blob)
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version} unsupported, expected version {CHECKPOINT_VERSION}")
    tags = {v: k for k, v in ACTIVATION_TAGS.items()}
    if enc_tag not in tags or dec_tag not in tags:
        raise CheckpointError(f"{path}: unknown activation tags {enc_tag}/{dec_tag}")

    shapes = [(K, I), (I, K), (K,), (I,), (K, U)]
    expected = _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(blob) != expected:
        raise CheckpointError(f"truncated checkpoint {path}: expected {expected} bytes, got {len(blob)}")

    tensors, offset = [], _HEADER.size
    for shape in shapes:
        count = int(np.prod(shape))
        tensors.append(np.frombuffer(blob, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(shape))
        offset += 8 * count
    return ModelParams(*tensors, encoder_act=tags[enc_tag], decoder_act=tags[dec_tag])


def check_compatible(params: ModelParams, dataset: BinaryDataset):
    if params.user_count != dataset.user_count or params.item_count != dataset.item_count:
        raise ConfigurationError(
            f"checkpoint is shaped for {params.user_count} users x {params.item_count} items, "
            f"dataset has {dataset.user_count} x {dataset.item_count}"
        )
