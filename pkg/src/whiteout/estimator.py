"""scikit-learn style estimators wrapping noise-injected training."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .network import forward, init_weights
from .noise import NoiseSpec, Variant
from .numerics import RngStream
from .train import TrainConfig, train


class _WhiteoutMLPBase(BaseEstimator):
    def __init__(self, hidden_layer_sizes=(10,), variant="whiteout_additive", sigma2=0.5,
                 gamma=1.0, lam=0.5, tau=0.0, c=0.5, noised_layers=(1,), learning_rate=0.2,
                 momentum=0.5, epochs=5000, init_std=1.0, minibatch=None, random_state=0):
        self.hidden_layer_sizes = hidden_layer_sizes
        self.variant = variant
        self.sigma2 = sigma2
        self.gamma = gamma
        self.lam = lam
        self.tau = tau
        self.c = c
        self.noised_layers = noised_layers
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.epochs = epochs
        self.init_std = init_std
        self.minibatch = minibatch
        self.random_state = random_state

    def noise_spec(self) -> NoiseSpec:
        v = Variant(self.variant)
        if v is Variant.NONE:
            return NoiseSpec()
        if v in (Variant.DROPOUT, Variant.SHAKEOUT):
            return NoiseSpec(v, tau=self.tau, c=self.c if v is Variant.SHAKEOUT else 0.0)
        return NoiseSpec(v, sigma2=self.sigma2, gamma=self.gamma, lam=self.lam)

    def _fit(self, X, Y, out_act, loss_kind):
        seed = 0 if self.random_state is None else int(self.random_state)
        sizes = (X.shape[1],) + tuple(self.hidden_layer_sizes) + (Y.shape[1],)
        acts = ("sigmoid",) * len(self.hidden_layer_sizes) + (out_act,)
        mlp = init_weights(RngStream(seed).substream(0), sizes, self.init_std, acts)
        cfg = TrainConfig(self.learning_rate, self.momentum, self.epochs, seed, loss_kind,
                          self.noise_spec(), tuple(self.noised_layers), self.minibatch)
        trace = train(mlp, (X, Y), cfg)
        self.mlp_ = trace.mlp
        self.loss_curve_ = list(trace.losses)
        self.n_features_in_ = X.shape[1]
        return self

    def _output(self, X):
        check_is_fitted(self, "mlp_")
        return forward(self.mlp_, check_array(X))


class WhiteoutMLPClassifier(ClassifierMixin, _WhiteoutMLPBase):
    """Sigmoid hidden layers, softmax output, cross-entropy loss."""

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = unique_labels(y)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        codes = np.searchsorted(self.classes_, y)
        return self._fit(X, np.eye(len(self.classes_))[codes], "softmax", "cross-entropy")

    def predict_proba(self, X):
        return self._output(X)

    def predict(self, X):
        check_is_fitted(self, "mlp_")
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


class WhiteoutMLPRegressor(RegressorMixin, _WhiteoutMLPBase):
    """Sigmoid hidden layers, linear output, squared-error loss."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, y_numeric=True)
        self._single = y.ndim == 1
        return self._fit(X, y.reshape(len(y), -1).astype(np.float64), "identity", "squared-error")

    def predict(self, X):
        out = self._output(X)
        return out[:, 0] if self._single else out
