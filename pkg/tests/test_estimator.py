import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import tiny_config
from ndfsim.estimator import NeuralClothSimulator
from ndfsim.geometry import eval_reference


def _fitted(name="napkin-corner", **kw):
    est = NeuralClothSimulator(scenario=tiny_config(name), profile=None, iterations=3, **kw)
    return est.fit()


def test_params_and_clone():
    est = NeuralClothSimulator(scenario="skirt", seed=3, lr=1e-3)
    p = est.get_params()
    assert p["scenario"] == "skirt" and p["seed"] == 3 and p["lr"] == 1e-3
    c = clone(est)
    assert c.get_params() == p
    est.set_params(iterations=9)
    assert est.iterations == 9


def test_unfitted():
    with pytest.raises(NotFittedError):
        NeuralClothSimulator().predict([[0.1, 0.2]])


def test_fit_predict_transform():
    est = _fitted()
    assert est.n_features_in_ == 3 and len(est.report_.loss) == 3
    X = np.array([[0.2, 0.3, 0.0], [0.5, 0.5, 1.0]])
    u = est.predict(X)
    assert u.shape == (2, 3) and not u[0].any()
    x = est.transform(X)
    np.testing.assert_allclose(x - u, eval_reference(est.problem_.surface, X[:, :2])[0], atol=1e-15)
    assert np.isfinite(est.score())


def test_input_validation():
    est = _fitted()
    with pytest.raises(ValueError):
        est.predict([[0.2, 0.3]])
    with pytest.raises(ValueError):
        est.predict([[0.2, np.nan, 0.1]])
    plate = _fitted("square-plate")
    assert plate.predict([[50.0, 50.0]]).shape == (1, 3)


def test_overrides_reach_training():
    est = NeuralClothSimulator(scenario=tiny_config("square-plate"), profile=None, iterations=2, lr=5e-3,
                               output_scale=0.5, nonlinear=True, seed=4)
    cfg = est._config()
    assert cfg.training.lr == 5e-3 and cfg.training.output_scale == 0.5 and cfg.training.nonlinear
    assert cfg.training.seed == 4 and cfg.sampling.seed == 4 and cfg.training.iterations == 2


def test_material_conditioned_predict():
    est = _fitted("napkin-material")
    X = np.array([[0.5, 0.2, 1.5]])
    a = est.predict(X)
    est.material = {"h": 0.002}
    b = est.predict(X)
    assert not np.array_equal(a, b)
