"""Under-complete autoencoder profile: build, train, calibrate, score."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError, NonFiniteError, TrainingError
from .features import ScalerParams
from .nn_core import (
    Activation,
    AdamState,
    CompositionNet,
    adam_step,
    concat_nets,
    forward_composition,
    gradients,
)

CALIBRATION_PERCENTILE = 95.0


@dataclass(frozen=True)
class AutoencoderSpec:
    input_dim: int = 83
    hidden: tuple[int, ...] = (64, 32, 16, 8, 16, 32, 64)
    latent_dim: int = 8

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.latent_dim >= self.input_dim:
            raise ConfigError(
                f"latent_dim {self.latent_dim} must be smaller than input_dim {self.input_dim}"
            )
        if self.hidden.count(self.latent_dim) != 1:
            raise ConfigError("latent width must appear exactly once among the hidden widths")
        if min(self.hidden) != self.latent_dim or min(self.hidden) < 1:
            raise ConfigError("the latent layer must be the narrowest hidden layer")

    @property
    def encoder_dims(self) -> tuple[int, ...]:
        k = self.hidden.index(self.latent_dim)
        return (self.input_dim,) + self.hidden[: k + 1]

    @property
    def decoder_dims(self) -> tuple[int, ...]:
        k = self.hidden.index(self.latent_dim)
        return self.hidden[k:] + (self.input_dim,)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.20
    l1_lambda: float = 0.001
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.validation_fraction < 1:
            raise ConfigError("validation_fraction must lie in (0, 1)")
        if self.patience < 1 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("patience, batch_size and max_epochs must be >= 1")
        if self.learning_rate < 0 or self.l1_lambda < 0:
            raise ConfigError("learning_rate and l1_lambda must be non-negative")


# Table-3 style defaults per role
ROLE_TRAIN_DEFAULTS = {
    "CM": {"learning_rate": 0.001, "batch_size": 64},
    "EP": {"learning_rate": 0.01, "batch_size": 256},
}


@dataclass
class AutoencoderModel:
    encoder: CompositionNet
    decoder: CompositionNet
    spec: AutoencoderSpec
    scaler: ScalerParams | None = None
    threshold: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def latent_dim(self) -> int:
        return self.encoder.dims[-1]

    def encode(self, X) -> np.ndarray:
        return forward_composition(self.encoder, X)

    def reconstruct(self, X) -> np.ndarray:
        return forward_composition(self.decoder, forward_composition(self.encoder, X))

    def residuals(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.shape[-1] != self.spec.input_dim:
            raise DimensionError(f"expected {self.spec.input_dim} columns, got {X.shape[-1]}")
        return X - self.reconstruct(X)

    def scores(self, X) -> np.ndarray:
        """L1 norm of the residual of each row."""
        return np.abs(self.residuals(np.atleast_2d(X))).sum(axis=1)

    def decisions(self, scores) -> np.ndarray:
        if self.threshold is None:
            raise TrainingError("model has no calibrated threshold")
        return np.asarray(scores) >= self.threshold

    @property
    def network(self) -> CompositionNet:
        return concat_nets(self.encoder, self.decoder)

    def with_network_params(self, params: Sequence[np.ndarray]) -> "AutoencoderModel":
        n_enc = 2 * len(self.encoder.layers)
        return AutoencoderModel(
            self.encoder.with_params(params[:n_enc]),
            self.decoder.with_params(params[n_enc:]),
            self.spec,
            self.scaler,
            self.threshold,
            dict(self.metadata),
        )


def _activations(dims: Sequence[int], first: bool, last: bool) -> list[Activation]:
    acts = [Activation.ELU] * (len(dims) - 1)
    if first:
        acts[0] = Activation.TANH
    if last:
        acts[-1] = Activation.TANH
    return acts


def _glorot(rng: np.random.Generator, dims: Sequence[int]):
    weights, biases = [], []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        a = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-a, a, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return weights, biases


def build(spec: AutoencoderSpec = AutoencoderSpec(), seed: int = 0) -> AutoencoderModel:
    """Untrained model: tanh on the first encoder and last decoder layer, ELU elsewhere."""
    rng = np.random.default_rng(seed)
    enc_w, enc_b = _glorot(rng, spec.encoder_dims)
    dec_w, dec_b = _glorot(rng, spec.decoder_dims)
    encoder = CompositionNet.from_arrays(enc_w, enc_b, _activations(spec.encoder_dims, True, False))
    decoder = CompositionNet.from_arrays(dec_w, dec_b, _activations(spec.decoder_dims, False, True))
    return AutoencoderModel(encoder, decoder, spec, metadata={"seed": int(seed)})


def reconstruction_error(model: AutoencoderModel, X) -> float:
    """Sum over rows of the squared Euclidean distance between row and reconstruction."""
    X = np.asarray(X, dtype=np.float64)
    if X.size == 0:
        return 0.0
    return float(np.sum(model.residuals(np.atleast_2d(X)) ** 2))


def nearest_rank_percentile(values, q: float = CALIBRATION_PERCENTILE) -> float:
    """Order statistic at 1-based rank ceil(q/100 * n)."""
    v = np.sort(np.asarray(values, dtype=np.float64))
    if v.size == 0:
        raise ValueError("percentile of an empty set")
    rank = max(1, math.ceil(q / 100.0 * v.size - 1e-12))
    return float(v[rank - 1])


def calibrate_threshold(model: AutoencoderModel, X_val) -> float:
    X_val = np.atleast_2d(np.asarray(X_val, dtype=np.float64))
    if X_val.shape[0] == 0 or X_val.size == 0:
        raise ValueError("cannot calibrate on an empty validation set")
    tau = nearest_rank_percentile(model.scores(X_val))
    model.threshold = tau
    return tau


@dataclass
class TrainReport:
    train_mse: list[float]
    val_mse: list[float]
    best_epoch: int  # 1-based
    stopped_epoch: int
    best_val_mse: float
    threshold: float
    train_index: np.ndarray
    val_index: np.ndarray

    def to_dict(self) -> dict:
        return {
            "train_mse": self.train_mse,
            "val_mse": self.val_mse,
            "best_epoch": self.best_epoch,
            "stopped_epoch": self.stopped_epoch,
            "best_val_mse": self.best_val_mse,
            "threshold": self.threshold,
            "n_train": int(self.train_index.size),
            "n_val": int(self.val_index.size),
        }


def split_validation(n: int, fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Shuffle row indices under ``seed``; the last ``round(fraction*n)`` become validation."""
    perm = np.random.default_rng(seed).permutation(n)
    n_val = min(max(1, int(round(fraction * n))), n - 1)
    return perm[: n - n_val], perm[n - n_val :]


def _mse(net: CompositionNet, X: np.ndarray) -> float:
    return float(np.mean((forward_composition(net, X) - X) ** 2))


def train(model: AutoencoderModel, X_train, cfg: TrainConfig = TrainConfig()) -> TrainReport:
    """Mini-batch Adam on MSE + L1, early stopping on validation MSE, best-epoch restore, then calibration.

    ``model`` is updated in place (parameters and threshold).
    """
    X = np.asarray(X_train, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 10:
        raise ValueError("training needs a matrix with at least 10 rows")
    if X.shape[1] != model.spec.input_dim:
        raise DimensionError(f"expected {model.spec.input_dim} columns, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteError("training data contains non-finite values")

    tr_idx, val_idx = split_validation(X.shape[0], cfg.validation_fraction, cfg.seed)
    X_tr, X_val = X[tr_idx], X[val_idx]
    rng = np.random.default_rng([cfg.seed, 1])

    net = model.network
    params = [p.copy() for p in net.params]
    state = AdamState.for_params(params, lr=cfg.learning_rate)
    best_params = [p.copy() for p in params]
    best_val, best_epoch, wait = math.inf, 0, 0
    train_curve, val_curve = [], []
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(X_tr.shape[0])
        for b, lo in enumerate(range(0, order.size, cfg.batch_size)):
            batch = X_tr[order[lo : lo + cfg.batch_size]]
            try:
                g = gradients(net.with_params(params), batch, l1_lambda=cfg.l1_lambda)
            except NonFiniteError as exc:
                raise TrainingError("non-finite gradient", epoch=epoch, batch=b) from exc
            if not math.isfinite(g.loss):
                raise TrainingError("non-finite loss", epoch=epoch, batch=b)
            params, state = adam_step(params, g.grads, state)
        current = net.with_params(params)
        train_curve.append(_mse(current, X_tr))
        val_curve.append(_mse(current, X_val))
        if not math.isfinite(val_curve[-1]):
            raise TrainingError("non-finite validation loss", epoch=epoch)
        if val_curve[-1] < best_val:
            best_val, best_epoch, wait = val_curve[-1], epoch, 0
            best_params = [p.copy() for p in params]
        else:
            wait += 1
            if wait >= cfg.patience:
                break

    trained = model.with_network_params(best_params)
    model.encoder, model.decoder = trained.encoder, trained.decoder
    tau = calibrate_threshold(model, X_val)
    return TrainReport(train_curve, val_curve, best_epoch, epoch, best_val, tau, tr_idx, val_idx)


@dataclass(frozen=True)
class ScoreReport:
    scaled_input: np.ndarray
    reconstruction: np.ndarray
    residual: np.ndarray
    score: float
    anomaly: bool

    @property
    def decision(self) -> str:
        return "anomaly" if self.anomaly else "normal"


def score(model: AutoencoderModel, x) -> ScoreReport:
    """Score one already-scaled input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.spec.input_dim,):
        raise DimensionError(f"expected a vector of length {model.spec.input_dim}, got shape {x.shape}")
    if model.threshold is None:
        raise TrainingError("model has no calibrated threshold")
    x_hat = model.reconstruct(x)
    r = x - x_hat
    s = float(np.abs(r).sum())
    return ScoreReport(x, x_hat, r, s, s >= model.threshold)


def positive_rate(model: AutoencoderModel, X) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[0] == 0 or X.size == 0:
        raise ValueError("positive rate of an empty set")
    return float(np.mean(model.decisions(model.scores(X))))
