"""scikit-learn style wrapper around the HA02 network and its training loop."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_packed, check_pilot_estimates
from .model import Ha02Config, init_params, network_forward, pack_input, unpack_grid
from .training import Dataset, TrainConfig, train


class HA02Regressor(BaseEstimator):
    """Attention-based channel estimator.

    ``X`` is the packed LS pilot estimate ``[n, 72, 2]`` and ``y`` the packed
    true channel ``[n, 1008, 2]`` (see :func:`ha02.model.pack_input` and
    :func:`ha02.model.pack_grid`). Defaults reproduce the reference training
    setup.

    Parameters
    ----------
    epochs, learning_rate, lr_drop_period, lr_drop_factor, batch_size, l2, huber_delta
        Optimization settings.
    validation_fraction : float
        Trailing share of the training data held out for checkpoint selection.
    random_state : int
        Seeds initialization and minibatch shuffling.
    dtype : {"float32", "float64"}
    warm_start : bool
        Continue from the current parameters and optimizer state on ``fit``.
    """

    def __init__(self, epochs=100, learning_rate=0.002, lr_drop_period=20, lr_drop_factor=0.5,
                 batch_size=128, l2=1e-7, huber_delta=1.0, validation_fraction=0.05,
                 random_state=0, dtype="float32", warm_start=False):
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.lr_drop_period = lr_drop_period
        self.lr_drop_factor = lr_drop_factor
        self.batch_size = batch_size
        self.l2 = l2
        self.huber_delta = huber_delta
        self.validation_fraction = validation_fraction
        self.random_state = random_state
        self.dtype = dtype
        self.warm_start = warm_start

    def _train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                           lr_drop_period=self.lr_drop_period, lr_drop_factor=self.lr_drop_factor,
                           batch_size=self.batch_size, l2=self.l2, huber_delta=self.huber_delta,
                           validation_fraction=self.validation_fraction, seed=self.random_state)

    def fit(self, X, y):
        config = Ha02Config()
        X = check_packed(X, config.length, "X", np.float32)
        y = check_packed(y, config.output_length, "y", np.float32)
        if len(X) != len(y):
            raise ValueError(f"X and y have different sample counts ({len(X)} vs {len(y)})")
        cfg = self._train_config()
        data = Dataset(X, y, np.full(len(X), np.nan, np.float32), np.full(len(X), np.nan, np.float32))
        tr, va = data.split(cfg.validation_fraction)
        if self.warm_start and hasattr(self, "params_"):
            params, optimizer = self.last_params_, self.optimizer_
        else:
            params, optimizer = init_params(self.random_state, config, np.dtype(self.dtype)), None
        best, history, optimizer = train(params, tr, va if len(va) else None, cfg, optimizer)
        self.params_ = best
        self.last_params_ = params
        self.optimizer_ = optimizer
        self.history_ = history
        self.n_features_in_ = config.length * 2
        return self

    def predict(self, X) -> np.ndarray:
        """Packed channel estimates ``[n, 1008, 2]``."""
        check_is_fitted(self, "params_")
        X = check_packed(X, self.params_.config.length, "X", self.params_.dtype)
        return network_forward(X, self.params_).values

    def predict_grid(self, P) -> np.ndarray:
        """Complex pilot estimates ``[n, 36, 2]`` -> complex channel grids ``[n, 72, 14]``."""
        check_is_fitted(self, "params_")
        P = check_pilot_estimates(P, _frame_like(self.params_.config))
        return unpack_grid(self.predict(pack_input(P)), self.params_.config.n_subcarriers)

    def score(self, X, y) -> float:
        """Negative mean squared error per complex grid cell (higher is better)."""
        y = check_packed(y, self.params_.config.output_length, "y")
        err = self.predict(X).astype(np.float64) - y
        return -float(np.mean(np.sum(err ** 2, axis=-1)))

    @classmethod
    def from_params(cls, params, **kw) -> HA02Regressor:
        """Wrap already-trained parameters (e.g. loaded from a weight file)."""
        est = cls(dtype=str(params.dtype), **kw)
        est.params_ = params
        est.n_features_in_ = params.config.length * 2
        return est


def _frame_like(config: Ha02Config):
    from .ofdm import FrameConfig

    return FrameConfig(n_subcarriers=config.n_subcarriers, n_symbols=config.n_symbols)
