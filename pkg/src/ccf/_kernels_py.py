"""Pure NumPy implementation of the profiled least-squares kernels.

Layout shared with the compiled module: ``X`` holds the rows ``x_{t-k}`` up to
``x_{t_last}`` ((n + k) x p, C order), ``Y`` holds the n aligned targets.
Column ``a`` of the window matrix F(beta) is ``f_{t-a}``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "python"

# relative pivot floor for the (k+1) x (k+1) Cholesky factor of F'F
PIVOT_TOL = 1e-13


def windows(f, k, n):
    return sliding_window_view(f, k + 1)[:n, ::-1]


def _gamma(F, Y):
    B = Y.T @ F
    Phi = F.T @ F
    scale = max(float(np.max(np.diag(Phi))), 1e-300)
    try:
        L = np.linalg.cholesky(Phi)
    except np.linalg.LinAlgError:
        return None, B
    if np.min(np.diag(L)) ** 2 <= PIVOT_TOL * scale:
        return None, B
    Gamma = np.linalg.solve(L.T, np.linalg.solve(L, B.T)).T
    return Gamma, B


def g1_value(X, Y, beta, k, yy):
    n = Y.shape[0]
    F = windows(X @ beta, k, n)
    Gamma, B = _gamma(F, Y)
    if Gamma is None:
        return np.inf
    return max((yy - float(np.sum(Gamma * B))) / n, 0.0)


def g1_value_grad(X, Y, beta, k, yy):
    n = Y.shape[0]
    F = windows(X @ beta, k, n)
    Gamma, B = _gamma(F, Y)
    if Gamma is None:
        return np.inf, np.full(X.shape[1], np.nan), None
    value = max((yy - float(np.sum(Gamma * B))) / n, 0.0)
    W = Y @ Gamma - F @ (Gamma.T @ Gamma)
    wt = np.zeros(X.shape[0])
    for a in range(k + 1):
        wt[k - a:k - a + n] += W[:, a]
    grad = X.T @ wt
    grad *= -2.0 / n
    return value, grad, Gamma


def soft_threshold(v, gamma):
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - gamma, 0.0)


def prox_point(beta, g, eta, lam):
    """Normalized ``S_{lam*eta}(beta - eta*g)``; ``None`` if every entry is zeroed."""
    b = soft_threshold(beta - eta * g, lam * eta)
    nrm = np.sqrt(b @ b)
    if nrm == 0.0:
        return None
    return b / nrm
