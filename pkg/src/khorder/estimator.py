"""scikit-learn style regressor over the three model families."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .models import Family, ModelSpec, build, count_params, evaluate
from .training import TrainConfig, train

__all__ = ["HighOrderRegressor"]


class HighOrderRegressor(RegressorMixin, BaseEstimator):
    """Fit ``y ~ u(X)`` with a PINN, HOrderDNN or K-HOrderDNN by full-batch Adam.

    Inputs are expected in ``[lo, hi]^d`` with ``(lo, hi) = interval``; the
    high-order families place their GLL nodes there.

    >>> import numpy as np
    >>> X = np.random.default_rng(0).random((64, 2))
    >>> reg = HighOrderRegressor(family="KHOrderDNN", p=2, hd=1, hw=4, gd=1, gw=8, epochs=5)
    >>> reg.fit(X, X.sum(axis=1)).predict(X).shape
    (64,)
    """

    def __init__(
        self,
        family="KHOrderDNN",
        p=5,
        activation="tanh",
        L=4,
        W=50,
        hd=2,
        hw=25,
        gd=2,
        gw=50,
        interval=(0.0, 1.0),
        epochs=2000,
        lr0=4e-3,
        decay=0.9,
        decay_every=1000,
        random_state=0,
    ):
        self.family = family
        self.p = p
        self.activation = activation
        self.L = L
        self.W = W
        self.hd = hd
        self.hw = hw
        self.gd = gd
        self.gw = gw
        self.interval = interval
        self.epochs = epochs
        self.lr0 = lr0
        self.decay = decay
        self.decay_every = decay_every
        self.random_state = random_state

    def _spec(self, d: int) -> ModelSpec:
        family = Family(self.family)
        sizes = {"L": self.L, "W": self.W} if family is not Family.KHORDER else {"hd": self.hd, "hw": self.hw, "gd": self.gd, "gw": self.gw}
        p = None if family is Family.PINN else self.p
        return ModelSpec(family, d=d, p=p, activation=self.activation, interval=tuple(self.interval), **sizes)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        spec = self._spec(X.shape[1])
        seed = 0 if self.random_state is None else int(self.random_state)
        config = TrainConfig(epochs=int(self.epochs), lr0=self.lr0, decay=self.decay, decay_every=self.decay_every, n_f=len(X), seed=seed)
        params, record = train(spec, None, config, params=build(spec, seed), data=(X, y))
        self.spec_ = spec
        self.params_ = params
        self.loss_curve_ = list(record.loss_f)
        self.n_params_ = count_params(spec)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return evaluate(self.spec_, self.params_, X)
