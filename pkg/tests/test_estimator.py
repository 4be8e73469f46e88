import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ha02 import HA02Regressor
from ha02.model import init_params, network_forward
from ha02.training import TrainConfig, generate_dataset


@pytest.fixture(scope="module")
def data():
    ds = generate_dataset(TrainConfig(seed=11), count=40)
    return ds.inputs, ds.labels


class TestHA02Regressor:
    def test_defaults_follow_training_table(self):
        p = HA02Regressor().get_params()
        assert (p["epochs"], p["learning_rate"], p["lr_drop_period"], p["lr_drop_factor"], p["batch_size"], p["l2"]) == \
            (100, 0.002, 20, 0.5, 128, 1e-7)

    def test_clone(self):
        est = HA02Regressor(epochs=3, random_state=5)
        assert clone(est).get_params() == est.get_params()

    def test_fit_predict(self, data):
        X, y = data
        est = HA02Regressor(epochs=2, batch_size=16).fit(X, y)
        assert est.predict(X).shape == (40, 1008, 2)
        assert len(est.history_.epoch) == 2
        assert est.n_features_in_ == 144
        assert np.isfinite(est.score(X, y)) and est.score(X, y) < 0

    def test_fit_is_deterministic(self, data):
        X, y = data
        a = HA02Regressor(epochs=1, batch_size=16).fit(X, y).predict(X[:3])
        b = HA02Regressor(epochs=1, batch_size=16).fit(X, y).predict(X[:3])
        np.testing.assert_array_equal(a, b)

    def test_warm_start_continues(self, data):
        X, y = data
        est = HA02Regressor(epochs=1, batch_size=16, warm_start=True).fit(X, y)
        t = est.optimizer_.t
        est.fit(X, y)
        assert est.optimizer_.t == 2 * t

    def test_predict_grid(self, rng):
        est = HA02Regressor.from_params(init_params(0))
        P = rng.standard_normal((2, 36, 2)) + 1j * rng.standard_normal((2, 36, 2))
        H = est.predict_grid(P)
        assert H.shape == (2, 72, 14) and np.iscomplexobj(H)

    def test_from_params_matches_network(self, data):
        X, _ = data
        p = init_params(3)
        np.testing.assert_array_equal(HA02Regressor.from_params(p).predict(X[:2]), network_forward(X[:2], p).values)

    def test_unfitted(self, data):
        with pytest.raises(NotFittedError):
            HA02Regressor().predict(data[0])

    @pytest.mark.parametrize("bad", [np.zeros((3, 72)), np.zeros((3, 70, 2)), np.zeros((3, 72, 2), complex)])
    def test_input_validation(self, bad):
        with pytest.raises(ValueError):
            HA02Regressor.from_params(init_params(0)).predict(bad)

    def test_length_mismatch(self, data):
        X, y = data
        with pytest.raises(ValueError, match="sample counts"):
            HA02Regressor(epochs=1).fit(X, y[:10])
