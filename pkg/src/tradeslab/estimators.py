"""scikit-learn style wrappers around the trainers and the SRM separator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .attacks import AttackConfig
from .ndcore import forward, softmax
from .theory import SrmConfig, srm_linear_train
from .train import TrainConfig, train


class TradesClassifier(ClassifierMixin, BaseEstimator):
    """Small MLP trained with TRADES (or natural / robust-optimization training).

    Any two or more integer-coded classes are supported; internally the
    classes are mapped to ``0..c-1`` and a softmax model is trained unless
    ``mode="trades_binary"``, which needs exactly two classes.
    """

    def __init__(self, mode="trades_multiclass", inv_lambda=1.0, epsilon=0.1, norm="linf", step_eta1=0.01,
                 iters_K=10, init_sigma=0.001, eta2=0.05, batch_m=64, epochs=20, hidden=(32,),
                 activation="relu", surrogate="logistic", random_state=0):
        self.mode = mode
        self.inv_lambda = inv_lambda
        self.epsilon = epsilon
        self.norm = norm
        self.step_eta1 = step_eta1
        self.iters_K = iters_K
        self.init_sigma = init_sigma
        self.eta2 = eta2
        self.batch_m = batch_m
        self.epochs = epochs
        self.hidden = hidden
        self.activation = activation
        self.surrogate = surrogate
        self.random_state = random_state

    def _config(self, n):
        attack = AttackConfig(epsilon=self.epsilon, norm=self.norm, step_eta1=self.step_eta1, iters_K=self.iters_K,
                              init_sigma=self.init_sigma, seed=int(self.random_state or 0))
        return TrainConfig(mode=self.mode, inv_lambda=self.inv_lambda, eta2=self.eta2,
                           batch_m=min(self.batch_m, n), epochs=self.epochs, attack=attack,
                           surrogate=self.surrogate, seed=int(self.random_state or 0),
                           hidden=tuple(self.hidden), activation=self.activation)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("TradesClassifier needs at least two classes")
        if self.mode == "trades_binary":
            if len(self.classes_) != 2:
                raise ValueError("mode='trades_binary' needs exactly two classes")
            targets = np.where(codes == 1, 1, -1)
        else:
            targets = codes
        self.checkpoint_ = train((X, targets), self._config(len(X)))
        self.model_ = self.checkpoint_.model
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        logits = forward(self.model_, X)
        if self.model_.is_binary:
            return logits[:, 0]
        if logits.shape[1] == 2:
            return logits[:, 1] - logits[:, 0]
        return logits

    def predict_proba(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        logits = forward(self.model_, X)
        if self.model_.is_binary:
            p = 1.0 / (1.0 + np.exp(-np.clip(logits[:, 0], -500, 500)))
            return np.column_stack([1.0 - p, p])
        return softmax(logits)

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        logits = forward(self.model_, X)
        if self.model_.is_binary:
            idx = (logits[:, 0] >= 0.0).astype(np.int64)
        else:
            idx = np.argmax(logits, axis=1)
        return self.classes_[idx]


class SRMLinearSeparator(ClassifierMixin, BaseEstimator):
    """Unit-norm linear separator chosen by structural risk minimization over margins."""

    def __init__(self, margins=(0.4, 0.2, 0.1, 0.05), delta=0.05, C=32.0, epsilon=0.0, data_bound=None,
                 random_state=0):
        self.margins = margins
        self.delta = delta
        self.C = C
        self.epsilon = epsilon
        self.data_bound = data_bound
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError("SRMLinearSeparator is a binary classifier")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        cfg = SrmConfig(margins=tuple(self.margins), delta=self.delta, data_bound=self.data_bound, C=self.C,
                        epsilon=self.epsilon, seed=int(self.random_state or 0))
        res = srm_linear_train(X, signs, cfg)
        self.coef_ = res.w
        self.k_star_ = res.k_star
        self.bound_table_ = res.table
        self.heuristic_ = res.heuristic
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        return check_array(X, dtype=np.float64) @ self.coef_

    def predict(self, X):
        return self.classes_[(self.decision_function(X) >= 0.0).astype(np.int64)]
