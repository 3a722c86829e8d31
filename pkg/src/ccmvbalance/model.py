"""Scikit-learn style front end for the balancing-weight estimator."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .basis import BasisSpec
from .data import BINARY, CONTINUOUS, Column, Dataset
from .inference import fit_weighted, logistic_psi
from .tuning import DEFAULT_GAMMAS, DEFAULT_LAMBDAS, CvGrid

__all__ = ["PatternBalancingLogit"]


class PatternBalancingLogit(BaseEstimator):
    """Logistic regression under non-monotone missing covariates.

    Missing entries in X are marked with NaN.  Rows sharing a missingness
    pattern are related to the fully observed rows through penalized
    propensity-odds models (tailored loss by default), the implied weights
    enter the score equations over complete rows, and standard errors come
    from the influence-function sandwich.  The outcome must be binary and
    fully observed.

    Parameters
    ----------
    degree : polynomial degree per continuous covariate in the odds basis.
    lambdas, gammas : cross-validation grid for the combined penalty
        (defaults: 1..1e-10 and (0, 0.1, 0.5, 0.9, 1)).
    folds : cross-validation folds.
    loss : "tailored" or "entropy".
    quad_nodes : quadrature nodes per dimension for the roughness penalty.
    random_state : seed for the cross-validation folds.

    Attributes (after fit)
    ----------------------
    coef_, intercept_ : logistic parameters (theta has the intercept last).
    se_, ci95_, cov_ : sandwich standard errors, 95% intervals, covariance.
    weights_ : estimated inverse-propensity-type weight per complete row.
    result_ : the full FitResult with per-pattern diagnostics.
    """

    def __init__(self, degree: int = 3, lambdas=None, gammas=None, folds: int = 5,
                 loss: str = "tailored", quad_nodes: int = 20, random_state: int = 0):
        self.degree = degree
        self.lambdas = lambdas
        self.gammas = gammas
        self.folds = folds
        self.loss = loss
        self.quad_nodes = quad_nodes
        self.random_state = random_state

    def _validate(self, X, y):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[0] < 1:
            raise ValueError("X must be a 2-d array with at least one row")
        y = np.asarray(y, dtype=float).ravel()
        if y.shape[0] != X.shape[0]:
            raise ValueError("X and y have inconsistent lengths")
        if np.isnan(y).any():
            raise ValueError("y must be fully observed")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("y must be binary with values in {0, 1}")
        return X, y

    def fit(self, X, y):
        X, y = self._validate(X, y)
        n, p = X.shape
        columns = []
        for j in range(p):
            vj = X[~np.isnan(X[:, j]), j]
            kind = BINARY if vj.size and np.isin(vj, (0.0, 1.0)).all() else CONTINUOUS
            columns.append(Column(f"x{j + 1}", kind))
        columns.append(Column("y", BINARY))
        values = np.column_stack([X, y])
        mask = ~np.isnan(values)
        ds = Dataset(columns, values, mask, "y")
        grid = CvGrid(
            lambdas=tuple(self.lambdas) if self.lambdas is not None else DEFAULT_LAMBDAS,
            gammas=tuple(self.gammas) if self.gammas is not None else DEFAULT_GAMMAS,
            folds=self.folds,
            seed=self.random_state,
        )
        result = fit_weighted(
            ds,
            psi=logistic_psi(tuple(range(p)), p),
            basis_spec=BasisSpec(max_degree=self.degree),
            grid=grid,
            loss_kind=self.loss,
            quad_nodes=self.quad_nodes,
        )
        self.result_ = result
        self.theta_ = result.theta_hat
        self.coef_ = result.theta_hat[:p]
        self.intercept_ = float(result.theta_hat[p])
        self.se_ = result.se
        self.ci95_ = result.ci95
        self.cov_ = result.cov
        self.weights_ = result.weights
        self.converged_ = result.converged
        self.n_features_in_ = p
        return self

    def _check_fitted(self):
        if not hasattr(self, "result_"):
            raise NotFittedError("call fit before using this estimator")

    def decision_function(self, X):
        self._check_fitted()
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"X must have {self.n_features_in_} columns")
        if np.isnan(X).any():
            raise ValueError("prediction requires fully observed rows")
        return X @ self.coef_ + self.intercept_

    def predict_proba(self, X):
        from scipy.special import expit

        p1 = expit(self.decision_function(X))
        return np.column_stack([1.0 - p1, p1])

    def predict(self, X):
        return (self.decision_function(X) >= 0.0).astype(int)

    def score(self, X, y):
        y = np.asarray(y, dtype=float).ravel()
        return float((self.predict(X) == y).mean())
