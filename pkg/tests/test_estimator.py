import numpy as np
import pytest
from sklearn.base import clone

from noether_razor import NoetherRazorRegressor
from noether_razor.dynamics import SystemSpec, recipe_for, sample_dataset


@pytest.fixture(scope="module")
def sho():
    spec = SystemSpec("sho")
    return spec, sample_dataset(spec, recipe_for(spec, "train"), 0)


def small(**kw):
    opts = dict(hidden=(8,), S=4, S_eval=8, epochs=2, system=SystemSpec("sho"))
    opts.update(kw)
    return NoetherRazorRegressor(**opts)


def test_params_and_clone():
    est = small(mode="oracle")
    params = est.get_params()
    assert params["mode"] == "oracle" and params["hidden"] == (8,)
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(epochs=5)
    assert est.epochs == 5


def test_fit_predict_score(sho):
    _, data = sho
    est = small().fit(data.x_t, data.x_tp, groups=data.traj)
    assert est.n_features_in_ == 2
    pred = est.predict(data.x_t[:5])
    assert pred.shape == (5, 2)
    assert est.score(data.x_t, data.x_tp) == pytest.approx(-est.checkpoint_.metrics["train_mse"],
                                                           rel=0.5)
    assert est.hamiltonian(np.zeros((1, 2)), S=4).shape == (1,)
    report = est.symmetry_report()
    assert report.ground_truth_dim == 1


def test_input_validation(sho):
    _, data = sho
    with pytest.raises(ValueError):
        small().fit(data.x_t, data.x_tp[:-1])
    with pytest.raises(ValueError):
        small().fit(np.ones((4, 3)), np.ones((4, 3)))
    est = small(epochs=0).fit(data.x_t, data.x_tp)
    with pytest.raises(ValueError):
        est.predict(np.ones((2, 4)))


def test_unfitted():
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        small().predict(np.zeros((1, 2)))


def test_oracle_needs_system(sho):
    _, data = sho
    with pytest.raises(ValueError):
        small(mode="oracle", system=None).fit(data.x_t, data.x_tp)
