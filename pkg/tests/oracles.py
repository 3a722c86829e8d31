"""Independent reference implementations used only to check the package.

These deliberately share no code with ccmvbalance: IRLS for the logistic
MLE, the textbook sandwich, and central finite differences.
"""

import numpy as np
from scipy.special import expit


def irls_logistic(X, y, tol=1e-12, max_iter=100):
    """Logistic MLE by iteratively reweighted least squares.

    X must already contain any intercept column.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    beta = np.zeros(X.shape[1])
    for _ in range(max_iter):
        mu = expit(X @ beta)
        grad = X.T @ (y - mu)
        H = (X * (mu * (1.0 - mu))[:, None]).T @ X
        step = np.linalg.solve(H, grad)
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    return beta


def classical_logistic_sandwich(X, y, beta):
    """A^-1 B A^-T / n for the unweighted logistic score at beta."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(X)
    mu = expit(X @ beta)
    psi = (y - mu)[:, None] * X
    A = -(X * (mu * (1.0 - mu))[:, None]).T @ X / n
    B = psi.T @ psi / n
    Ainv = np.linalg.inv(A)
    return Ainv @ B @ Ainv.T / n


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def central_diff_jac(f, x, h=1e-6):
    """Central finite-difference Jacobian of a vector function."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x))
    J = np.empty(f0.shape + (x.size,))
    for k in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[k] += h
        xm[k] -= h
        J[..., k] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h)
    return J
