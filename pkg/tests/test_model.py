import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from ccmvbalance.model import PatternBalancingLogit
from ccmvbalance.simbench import gen_replication, make_setting

from oracles import irls_logistic


def missing_xy(seed=0, n=300):
    rep = gen_replication(make_setting(1, n), seed)
    values = rep.dataset.values
    mask = rep.dataset.mask
    X = np.where(mask[:, 1:], values[:, 1:], np.nan)
    y = values[:, 0]
    return X, y


SMALL = dict(lambdas=(1.0, 0.01, 1e-4), gammas=(0.5, 1.0), folds=4)


def test_fit_sets_sklearn_attributes():
    X, y = missing_xy(1)
    est = PatternBalancingLogit(**SMALL, random_state=3).fit(X, y)
    assert est.coef_.shape == (3,)
    assert isinstance(est.intercept_, float)
    assert est.se_.shape == (4,)
    assert est.ci95_.shape == (4, 2)
    assert est.cov_.shape == (4, 4)
    assert est.n_features_in_ == 3
    assert est.weights_.min() >= 1.0
    assert len(est.result_.per_pattern) == 3


def test_complete_data_matches_irls():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(150, 2)).clip(-3, 3)
    y = (rng.random(150) < 1 / (1 + np.exp(-(X @ [1.0, -1.0] - 0.5)))).astype(float)
    est = PatternBalancingLogit(**SMALL).fit(X, y)
    beta = irls_logistic(np.column_stack([X, np.ones(150)]), y)
    assert np.allclose(np.append(est.coef_, est.intercept_), beta, atol=1e-8)


def test_predictions_and_score():
    X, y = missing_xy(2)
    est = PatternBalancingLogit(**SMALL).fit(X, y)
    complete = ~np.isnan(X).any(axis=1)
    proba = est.predict_proba(X[complete])
    assert proba.shape == (complete.sum(), 2)
    assert np.allclose(proba.sum(axis=1), 1.0)
    labels = est.predict(X[complete])
    assert set(np.unique(labels)) <= {0, 1}
    assert 0.0 <= est.score(X[complete], y[complete]) <= 1.0
    with pytest.raises(ValueError):
        est.predict(X)  # NaNs not allowed at prediction time


def test_get_params_clone_round_trip():
    est = PatternBalancingLogit(degree=2, folds=4, random_state=7)
    params = est.get_params()
    assert params["degree"] == 2 and params["folds"] == 4
    cloned = clone(est)
    assert cloned.get_params() == params
    est.set_params(degree=3)
    assert est.get_params()["degree"] == 3


def test_not_fitted_and_validation_errors():
    est = PatternBalancingLogit()
    with pytest.raises(NotFittedError):
        est.predict(np.zeros((2, 3)))
    X, y = missing_xy(3, n=100)
    with pytest.raises(ValueError, match="binary"):
        PatternBalancingLogit().fit(X, y + 0.5)
    y_nan = y.copy()
    y_nan[0] = np.nan
    with pytest.raises(ValueError, match="fully observed"):
        PatternBalancingLogit().fit(X, y_nan)
    with pytest.raises(ValueError):
        PatternBalancingLogit().fit(X[:50], y)


def test_same_random_state_reproduces():
    X, y = missing_xy(4, n=250)
    t1 = PatternBalancingLogit(**SMALL, random_state=11).fit(X, y).theta_
    t2 = PatternBalancingLogit(**SMALL, random_state=11).fit(X, y).theta_
    assert np.array_equal(t1, t2)
