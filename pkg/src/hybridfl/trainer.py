"""Datasets, small fully connected models and local gradient-descent training.

Models are described by an :class:`Arch` and carried as one flat parameter
vector, which is what the aggregation code averages. Layers are stored
weight-matrix-then-bias, layer after layer.
"""

from __future__ import annotations

import enum
import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np


class LossKind(str, enum.Enum):
    MSE = "mse"
    NLL = "nll"


class TrainingDiverged(ArithmeticError):
    def __init__(self, epoch):
        super().__init__(f"non-finite loss or gradient at epoch {epoch}")
        self.epoch = epoch


class DatasetParseError(ValueError):
    def __init__(self, path, line, reason):
        super().__init__(f"{path}:{line}: {reason}")
        self.path = path
        self.line = line


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    task: str  # "regression" or "classification"
    n_classes: int = 0

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.features) != len(self.targets):
            raise ValueError(
                f"{len(self.features)} feature rows but {len(self.targets)} targets"
            )
        if self.task not in ("regression", "classification"):
            raise ValueError(f"unknown task kind {self.task!r}")

    def __len__(self):
        return len(self.targets)

    @property
    def d(self):
        return self.features.shape[1]

    def subset(self, idx):
        return Dataset(self.features[idx], self.targets[idx], self.task, self.n_classes)

    @property
    def default_loss(self):
        return LossKind.MSE if self.task == "regression" else LossKind.NLL


@dataclass(frozen=True)
class Arch:
    """Fully connected net: ``sizes[0]`` inputs, ``sizes[-1]`` outputs."""

    sizes: tuple
    activation: str = "tanh"
    bias: bool = True

    def __post_init__(self):
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ValueError(f"bad layer sizes {self.sizes}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @functools.cached_property
    def shapes(self):
        out = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            out.append((fan_in, fan_out))
            if self.bias:
                out.append((fan_out,))
        return tuple(out)

    @functools.cached_property
    def _offsets(self):
        sizes = [math.prod(s) for s in self.shapes]
        return tuple(zip(np.cumsum([0] + sizes[:-1]).tolist(), sizes))

    @functools.cached_property
    def n_params(self):
        return sum(math.prod(s) for s in self.shapes)

    def unflatten(self, theta):
        return [theta[i:i + k].reshape(shape) for (i, k), shape in zip(self._offsets, self.shapes)]


_ACTIVATIONS = {
    "tanh": (np.tanh, lambda a: 1.0 - a * a),
    "identity": (lambda z: z, lambda a: np.ones_like(a)),
}


@dataclass(frozen=True)
class ModelParams:
    arch: Arch
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)  # private copy
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        if theta.shape != (self.arch.n_params,):
            raise ValueError(
                f"theta has shape {theta.shape}, arch needs ({self.arch.n_params},)"
            )

    def with_theta(self, theta):
        return ModelParams(self.arch, theta)

    def __eq__(self, other):
        return (isinstance(other, ModelParams) and self.arch == other.arch
                and np.array_equal(self.theta, other.theta))

    __hash__ = None


def init_params(arch: Arch, rng) -> ModelParams:
    """Uniform in ``[-0.5, 0.5] / sqrt(fan_in)`` for weights and biases."""
    chunks = []
    for fan_in, fan_out in zip(arch.sizes[:-1], arch.sizes[1:]):
        scale = 1.0 / np.sqrt(fan_in)
        chunks.append(rng.uniform(-0.5, 0.5, fan_in * fan_out) * scale)
        if arch.bias:
            chunks.append(rng.uniform(-0.5, 0.5, fan_out) * scale)
    return ModelParams(arch, np.concatenate(chunks))


def _check_loss(arch, data, loss):
    loss = LossKind(loss)
    if loss is LossKind.MSE and data.task != "regression":
        raise ValueError("MSE loss needs regression targets")
    if loss is LossKind.NLL:
        if data.task != "classification":
            raise ValueError("NLL loss needs class-id targets")
        if arch.sizes[-1] < data.n_classes:
            raise ValueError("output layer narrower than the number of classes")
    if arch.sizes[0] != data.d:
        raise ValueError(f"model expects {arch.sizes[0]} inputs, data has {data.d}")
    return loss


def _forward(arch, theta, X):
    parts = arch.unflatten(theta)
    act, _ = _ACTIVATIONS[arch.activation]
    step = 2 if arch.bias else 1
    n_layers = len(arch.sizes) - 1
    activations = [X]
    a = X
    for layer in range(n_layers):
        W = parts[layer * step]
        z = a @ W
        if arch.bias:
            z = z + parts[layer * step + 1]
        a = z if layer == n_layers - 1 else act(z)
        activations.append(a)
    return activations


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _output_loss(out, y, loss):
    """Mean loss and its gradient with respect to the output layer."""
    n = len(y)
    if loss is LossKind.MSE:
        resid = out[:, 0] - y
        value = float(np.mean(resid ** 2))
        grad = np.zeros_like(out)
        grad[:, 0] = 2.0 * resid / n
        return value, grad
    logp = _log_softmax(out)
    rows = np.arange(n)
    yi = y.astype(int)
    value = float(-np.mean(logp[rows, yi]))
    grad = np.exp(logp)
    grad[rows, yi] -= 1.0
    return value, grad / n


def loss_and_grad(params: ModelParams, data: Dataset, loss=None):
    """Mean loss over ``data`` and its gradient as a flat vector."""
    arch = params.arch
    loss = _check_loss(arch, data, loss or data.default_loss)
    acts = _forward(arch, params.theta, data.features)
    value, delta = _output_loss(acts[-1], data.targets, loss)
    parts = arch.unflatten(params.theta)
    _, dact = _ACTIVATIONS[arch.activation]
    step = 2 if arch.bias else 1
    grads = [None] * len(parts)
    for layer in range(len(arch.sizes) - 2, -1, -1):
        grads[layer * step] = acts[layer].T @ delta
        if arch.bias:
            grads[layer * step + 1] = delta.sum(axis=0)
        if layer > 0:
            delta = (delta @ parts[layer * step].T) * dact(acts[layer])
    return value, np.concatenate([g.ravel() for g in grads])


def local_train(params: ModelParams, data: Dataset, tau, eta, loss=None) -> ModelParams:
    """``tau`` full-batch gradient-descent steps on the mean loss of ``data``."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty partition")
    if tau < 1:
        raise ValueError("tau must be at least 1")
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    theta = params.theta.copy()
    for epoch in range(1, tau + 1):
        with np.errstate(over="ignore", invalid="ignore"):  # reported below instead
            value, g = loss_and_grad(ModelParams(params.arch, theta), data, loss)
        if not (np.isfinite(value) and np.all(np.isfinite(g))):
            raise TrainingDiverged(epoch)
        theta -= eta * g
    if not np.all(np.isfinite(theta)):
        raise TrainingDiverged(tau)
    return ModelParams(params.arch, theta)


class Evaluation(NamedTuple):
    loss: float
    metric: float  # accuracy for classification, R^2 for regression


def predict(params: ModelParams, X):
    return _forward(params.arch, params.theta, np.asarray(X, dtype=float))[-1]


def evaluate(params: ModelParams, data: Dataset, loss=None) -> Evaluation:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    loss = _check_loss(params.arch, data, loss or data.default_loss)
    out = predict(params, data.features)
    value, _ = _output_loss(out, data.targets, loss)
    if data.task == "classification":
        metric = float(np.mean(out.argmax(axis=1) == data.targets))
    else:
        metric = r2_score(data.targets, out[:, 0])
    return Evaluation(value, metric)


def r2_score(y, pred):
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        return 1.0 if ss_res == 0.0 else 0.0
    return 1.0 - ss_res / ss_tot


def standardize(X):
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return (X - mu) / sd


def load_aerofoil(path) -> Dataset:
    """Read the UCI airfoil self-noise table (5 features, sound level target).

    Features are standardized to zero mean and unit variance; the target is
    kept in decibels.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"aerofoil data not found: {path}")
    rows = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            cols = line.split()
            if len(cols) != 6:
                raise DatasetParseError(path, lineno, f"expected 6 columns, got {len(cols)}")
            try:
                rows.append([float(c) for c in cols])
            except ValueError as exc:
                raise DatasetParseError(path, lineno, str(exc)) from None
    if not rows:
        raise DatasetParseError(path, 0, "no data rows (0 rows read)")
    table = np.array(rows)
    return Dataset(standardize(table[:, :5]), table[:, 5].copy(), "regression")


def synthesize_regression(n_samples, d, noise_std, seed) -> Dataset:
    """Standard-normal features, a fixed random linear target plus Gaussian noise."""
    if n_samples < 1 or d < 1:
        raise ValueError("n_samples and d must be at least 1")
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n_samples, d))
    coef = rng.standard_normal(d)
    y = X @ coef + noise_std * rng.standard_normal(n_samples)
    return Dataset(X, y, "regression")


def synthesize_classification(n_samples, d, n_classes, seed, spread=1.0) -> Dataset:
    """Gaussian class clusters around random unit-scale centres."""
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((n_classes, d))
    y = rng.integers(0, n_classes, n_samples)
    X = centres[y] + spread * rng.standard_normal((n_samples, d))
    return Dataset(X, y, "classification", n_classes)


def load_digits_dataset() -> Dataset:
    """8x8 handwritten digits bundled with scikit-learn, pixels standardized."""
    from sklearn.datasets import load_digits

    bunch = load_digits()
    return Dataset(standardize(bunch.data.astype(float)), bunch.target.astype(int),
                   "classification", 10)
