"""scikit-learn style estimators that train an MLP by simulated federated learning.

``fit`` partitions ``(X, y)`` over a simulated client fleet, runs the chosen
protocol for ``rounds`` rounds and keeps the best global model seen (judged
on the pooled training data, as the cloud would).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .protocol import ProtocolState, run_round
from .runner import build_world
from .topology import SimConfig
from .trainer import Arch, Dataset, evaluate, init_params, predict
from .utils import check_scalar, substream


class _FederatedMLP(BaseEstimator):
    def __init__(self, protocol="hybridfl", hidden_layer_sizes=(16,), n_clients=15, n_edges=3,
                 C=0.3, tau=5, learning_rate=0.05, rounds=100, dropout_mean=0.3,
                 kappa2=10, random_state=0):
        self.protocol = protocol
        self.hidden_layer_sizes = hidden_layer_sizes
        self.n_clients = n_clients
        self.n_edges = n_edges
        self.C = C
        self.tau = tau
        self.learning_rate = learning_rate
        self.rounds = rounds
        self.dropout_mean = dropout_mean
        self.kappa2 = kappa2
        self.random_state = random_state

    def _config(self):
        check_scalar(self.rounds, "rounds", min_val=1, integer=True)
        check_scalar(self.learning_rate, "learning_rate", min_val=0, include_min=False)
        return SimConfig(
            n=self.n_clients, m=self.n_edges, C=self.C, tau=self.tau, eta=self.learning_rate,
            t_max=self.rounds, hidden=tuple(self.hidden_layer_sizes), dr_mean=self.dropout_mean,
            protocol=self.protocol, kappa2=self.kappa2, seed=int(self.random_state or 0))

    def _fit_dataset(self, data: Dataset, n_out):
        cfg = self._config()
        world = build_world(cfg, data)
        arch = Arch((data.d, *cfg.hidden, n_out))
        state = ProtocolState.initial(world, init_params(arch, substream(cfg.seed, "init")))
        best, best_loss = state.global_model, evaluate(state.global_model, data).loss
        curve = []
        for t in range(1, cfg.t_max + 1):
            out = run_round(cfg.protocol, world, state, t)
            loss = evaluate(out.global_model, data).loss
            curve.append(loss)
            if loss < best_loss:
                best, best_loss = out.global_model, loss
        self.model_ = best
        self.loss_curve_ = curve
        self.best_loss_ = best_loss
        self.n_features_in_ = data.d
        return self

    def _raw(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return predict(self.model_, X)


class FederatedMLPRegressor(RegressorMixin, _FederatedMLP):
    def fit(self, X, y):
        X, y = check_X_y(X, y, y_numeric=True)
        return self._fit_dataset(Dataset(X, y.astype(float), "regression"), 1)

    def predict(self, X):
        return self._raw(X)[:, 0]


class FederatedMLPClassifier(ClassifierMixin, _FederatedMLP):
    def fit(self, X, y):
        X, y = check_X_y(X, y)
        enc = LabelEncoder().fit(y)
        self.classes_ = enc.classes_
        k = len(self.classes_)
        return self._fit_dataset(Dataset(X, enc.transform(y), "classification", k), k)

    def predict_proba(self, X):
        z = self._raw(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self._raw(X), axis=1)]
