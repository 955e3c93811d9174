"""Loss functions for one core component and their profiled forms.

For a loading vector ``beta`` (length p) the component series is
``f_t = x_t' beta`` and the prediction of ``y_{t+h}`` is ``Gamma F_t`` with
``F_t = (f_t, ..., f_{t-k})``. Two criteria are supported: ``g1``, the mean
squared Euclidean norm of the forecast errors, and ``g2``, the determinant of
their mean outer product. Profiling replaces Gamma by its least-squares value.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels
from .errors import ConfigError, EmptySampleError, NumericError, SingularDesignError
from .panel import LagDesign, lag_rows

LOSSES = ("g1", "g2")

# G2 covariance: ridge 1e-10 * trace / q when the condition number passes 1e12
COND_LIMIT = 1e12
RIDGE_FACTOR = 1e-10


@dataclass(frozen=True)
class FitProblem:
    """Aligned data for fitting one component.

    ``X`` holds rows ``x_t`` for ``t = t_first - k, ..., t_last`` and ``Y``
    holds the targets ``y_{t+h}`` (or current residuals) for the forecast
    origins ``t = t_first, ..., t_last``.
    """

    Y: np.ndarray
    X: np.ndarray
    k: int
    loss: str = "g1"
    lam: float = 0.0
    t_first: int = 0
    design: LagDesign | None = None

    def __post_init__(self):
        Y = np.ascontiguousarray(self.Y, dtype=float)
        X = np.ascontiguousarray(self.X, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.lam < 0 or not np.isfinite(self.lam):
            raise ConfigError(f"penalty must be a finite non-negative number, got {self.lam}")
        if self.k < 0:
            raise ConfigError("k must be non-negative")
        if X.shape[0] != Y.shape[0] + self.k:
            raise ValueError(
                f"misaligned problem: {X.shape[0]} lag rows for {Y.shape[0]} targets and k={self.k}"
            )
        if Y.shape[0] < 1:
            raise EmptySampleError("no effective rows")
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "X", X)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def yy(self) -> float:
        return float(np.sum(self.Y * self.Y))

    @property
    def X_now(self) -> np.ndarray:
        """Rows ``x_t`` at the forecast origins (no lags)."""
        return self.X[self.k:]

    def with_lambda(self, lam: float) -> "FitProblem":
        return FitProblem(self.Y, self.X, self.k, self.loss, lam, self.t_first, self.design)

    def with_loss(self, loss: str) -> "FitProblem":
        return FitProblem(self.Y, self.X, self.k, loss, self.lam, self.t_first, self.design)

    def component_series(self, beta: np.ndarray) -> np.ndarray:
        """``f_t`` for ``t = t_first - k, ..., t_last``."""
        return self.X @ np.asarray(beta, dtype=float)

    def windows(self, beta: np.ndarray) -> np.ndarray:
        """The n x (k+1) matrix F(beta) whose row for origin t is ``F_t``."""
        return np.ascontiguousarray(kernels.python.windows(self.component_series(beta), self.k, self.n))

    def window_operator(self, i: int) -> np.ndarray:
        """The (k+1) x p matrix with rows ``x_t, x_{t-1}, ..., x_{t-k}`` for row ``i``."""
        return self.X[i:i + self.k + 1][::-1]


def make_problem(z: np.ndarray, targets: np.ndarray, c: int, k: int, *, h: int = 0,
                 target_first: int = 0, t_lo: int | None = None, t_hi: int | None = None,
                 loss: str = "g1", lam: float = 0.0, min_rows: int = 1) -> FitProblem:
    """Align explanatory series and origin-indexed targets into a FitProblem.

    ``targets[i]`` is the quantity to predict from origin ``target_first + i``
    (``y_{t+h}`` itself or a residual). Usable origins are those with
    ``t >= c + k`` inside ``[t_lo, t_hi]``.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    targets = np.asarray(targets, dtype=float)
    if targets.ndim == 1:
        targets = targets[:, None]
    lo = max(target_first, c + k, t_lo if t_lo is not None else 0)
    hi = target_first + targets.shape[0] - 1
    if t_hi is not None:
        hi = min(hi, t_hi)
    hi = min(hi, z.shape[0] - 1)
    n = hi - lo + 1
    if n < max(min_rows, 1):
        raise EmptySampleError(f"design c={c}, k={k} leaves {max(n, 0)} effective rows (< {max(min_rows, 1)})")
    X = lag_rows(z, c, lo - k, hi + 1)
    Y = targets[lo - target_first:hi - target_first + 1]
    design = LagDesign(c, k, h, z.shape[1])
    return FitProblem(Y, X, k, loss, lam, lo, design)


def target_matrix(y: np.ndarray, h: int) -> np.ndarray:
    """Origin-indexed targets: row t is ``y_{t+h}`` for ``t = 0, ..., T-1-h``."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    return y[h:]


@dataclass(frozen=True)
class ComponentParams:
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        g = np.asarray(self.gamma, dtype=float)
        object.__setattr__(self, "gamma", g.reshape(g.shape[0], -1) if g.ndim else g.reshape(1, 1))

    def predictions(self, prob: FitProblem) -> np.ndarray:
        return prob.windows(self.beta) @ self.gamma.T


def residuals(params: ComponentParams, prob: FitProblem) -> np.ndarray:
    gamma = np.atleast_2d(params.gamma)
    if gamma.shape != (prob.q, prob.k + 1) or params.beta.shape != (prob.p,):
        raise ValueError(f"parameter shapes {params.beta.shape}, {gamma.shape} do not match "
                         f"problem p={prob.p}, q={prob.q}, k={prob.k}")
    return prob.Y - prob.windows(params.beta) @ gamma.T


def loss_g1(params: ComponentParams, prob: FitProblem) -> float:
    E = residuals(params, prob)
    return float(np.sum(E * E)) / prob.n


def _covariance(E: np.ndarray) -> np.ndarray:
    return (E.T @ E) / E.shape[0]


def loss_g2(params: ComponentParams, prob: FitProblem) -> float:
    S = _covariance(residuals(params, prob))
    value = float(np.linalg.det(S))
    if not np.isfinite(value):
        raise NumericError("non-finite residual covariance determinant")
    return max(value, 0.0)


def loss(params: ComponentParams, prob: FitProblem) -> float:
    return loss_g1(params, prob) if prob.loss == "g1" else loss_g2(params, prob)


def spd_inverse(S: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric PSD matrix with the ridge fallback."""
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w[-1] <= 0 or w[0] <= w[-1] / COND_LIMIT:
        S = S + RIDGE_FACTOR * np.trace(S) / S.shape[0] * np.eye(S.shape[0])
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        raise NumericError("residual covariance is singular; use the g1 loss") from None
    Linv = np.linalg.inv(L)
    return Linv.T @ Linv


def gamma_ls(beta: np.ndarray, prob: FitProblem) -> np.ndarray:
    """Least-squares coefficient matrix ``Y'F (F'F)^{-1}`` (q x (k+1))."""
    F = prob.windows(beta)
    Phi = F.T @ F
    scale = float(np.max(np.diag(Phi))) if Phi.size else 0.0
    if scale <= 0 or np.linalg.cond(Phi) > 1.0 / kernels.python.PIVOT_TOL:
        raise SingularDesignError(f"F(beta) is rank deficient (k+1={prob.k + 1})")
    return np.linalg.solve(Phi, F.T @ prob.Y).T


def profiled_loss(beta: np.ndarray, prob: FitProblem) -> float:
    """``G*(beta) = G(beta, gamma_ls(beta))``; ``inf`` if F(beta) is singular."""
    beta = np.ascontiguousarray(beta, dtype=float)
    if prob.loss == "g1":
        return float(kernels.active.g1_value(prob.X, prob.Y, beta, prob.k, prob.yy))
    try:
        gamma = gamma_ls(beta, prob)
    except SingularDesignError:
        return np.inf
    return loss_g2(ComponentParams(beta, gamma), prob)


def penalty_ratio(beta: np.ndarray) -> float:
    nrm = float(np.linalg.norm(beta))
    if nrm == 0.0:
        raise ValueError("the penalty ||b||_1/||b||_2 is undefined at b = 0")
    return float(np.sum(np.abs(beta))) / nrm


def regularized_loss(beta: np.ndarray, prob: FitProblem) -> float:
    """``RG*(beta) = G*(beta) + lam ||beta||_1 / ||beta||_2``."""
    pen = penalty_ratio(beta)
    return profiled_loss(beta, prob) + prob.lam * pen


def value_and_grad(beta: np.ndarray, prob: FitProblem) -> tuple[float, np.ndarray, np.ndarray | None]:
    """Profiled loss, its gradient and the profiled Gamma in one pass.

    The gradient is the partial derivative in beta at ``Gamma = gamma_ls(beta)``,
    which is the full derivative because Gamma is the exact inner minimizer.
    """
    beta = np.ascontiguousarray(beta, dtype=float)
    if prob.loss == "g1":
        return kernels.active.g1_value_grad(prob.X, prob.Y, beta, prob.k, prob.yy)
    try:
        gamma = gamma_ls(beta, prob)
    except SingularDesignError:
        return np.inf, np.full(prob.p, np.nan), None
    F = prob.windows(beta)
    E = prob.Y - F @ gamma.T
    S = _covariance(E)
    det = float(np.linalg.det(S))
    if not np.isfinite(det):
        raise NumericError("non-finite residual covariance determinant")
    W = E @ spd_inverse(S) @ gamma
    return max(det, 0.0), -(2.0 * det / prob.n) * _scatter_lags(prob, W), gamma


def _scatter_lags(prob: FitProblem, W: np.ndarray) -> np.ndarray:
    """``sum_t X_t' w_t`` where row t of W multiplies the window operator of t."""
    k, n = prob.k, prob.n
    wt = np.zeros(prob.X.shape[0])
    for a in range(k + 1):
        wt[k - a:k - a + n] += W[:, a]
    return prob.X.T @ wt


def grad_profiled(beta: np.ndarray, prob: FitProblem) -> np.ndarray:
    value, grad, _ = value_and_grad(beta, prob)
    if not np.isfinite(value):
        raise SingularDesignError("gradient undefined: F(beta) is rank deficient")
    return grad


def grad_regularized_smooth(beta: np.ndarray, prob: FitProblem) -> np.ndarray:
    """Continuous part ``g(beta) = grad G*(beta) - lam ||beta||_1 beta`` (unit beta)."""
    beta = np.asarray(beta, dtype=float)
    return grad_profiled(beta, prob) - prob.lam * float(np.sum(np.abs(beta))) * beta


def soft_threshold(v: np.ndarray | float, gamma: float) -> np.ndarray | float:
    if gamma < 0:
        raise ValueError("threshold must be non-negative")
    if np.isscalar(v):
        return float(kernels.python.soft_threshold(np.array([v], dtype=float), gamma)[0])
    return kernels.active.soft_threshold(np.asarray(v, dtype=float), float(gamma))
