"""Estimation of a single core component.

``proximal_fit`` minimizes the regularized profiled loss on the unit sphere by
soft-thresholded gradient steps with a line search on the step size. The
fixed-point routines solve the non-regularized problem by alternating the
stationarity equation for beta with the least-squares update of Gamma.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from . import kernels
from .errors import ConfigError, NumericError, SingularDesignError
from .objective import (
    ComponentParams,
    FitProblem,
    gamma_ls,
    profiled_loss,
    spd_inverse,
    value_and_grad,
)

logger = logging.getLogger(__name__)

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rule, line search and restart settings.

    ``epsilon`` is the relative objective change that ends the proximal
    iteration (for the fixed-point routines: the change in beta). With
    ``certify`` on, "converged" additionally requires the critical-point
    certificate at ``cert_tol``.
    """

    epsilon: float = 1e-7
    max_iter: int = 500
    line_search: str = "golden_section"
    eta_start: float = 1e-4
    eta_min: float = 1e-12
    max_evals: int = 30
    ls_tol: float = 0.05
    warm_start_step: bool = True
    restarts: int = 1
    perturb_sigma: float = 0.1
    seed: int = 0
    certify: bool = True
    cert_tol: float = 1e-5

    def __post_init__(self):
        if self.epsilon <= 0 or self.max_iter < 1:
            raise ConfigError("epsilon must be positive and max_iter >= 1")
        if self.line_search not in ("golden_section", "backtracking"):
            raise ConfigError(f"unknown line search {self.line_search!r}")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")

    def replace(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


@dataclass
class FitTrace:
    objective_path: list[float] = field(default_factory=list)
    iterations: int = 0
    termination: str = "max_iter"
    steps: list[float] = field(default_factory=list)

    @property
    def final(self) -> float:
        return self.objective_path[-1]


def unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    nrm = float(np.linalg.norm(v))
    if nrm == 0.0 or not np.isfinite(nrm):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / nrm


def sign_fix(beta: np.ndarray) -> float:
    """+1 or -1 so that the largest-magnitude entry of ``sign * beta`` is positive."""
    i = int(np.argmax(np.abs(beta)))
    return -1.0 if beta[i] < 0 else 1.0


# ---------------------------------------------------------------- initializers

def _ridged(S: np.ndarray) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w = np.linalg.eigvalsh(S)
    if w[-1] <= 0 or w[0] <= w[-1] / 1e12:
        S = S + 1e-10 * max(np.trace(S), 1e-300) / S.shape[0] * np.eye(S.shape[0])
    return S


def moments(prob: FitProblem) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Uncentered second moments of ``x_t`` and ``y_{t+h}`` over the effective rows."""
    Xn, Y, n = prob.X_now, prob.Y, prob.n
    return Xn.T @ Xn / n, Xn.T @ Y / n, Y.T @ Y / n


def _leading_generalized(A: np.ndarray, B: np.ndarray) -> tuple[float, np.ndarray]:
    w, V = scipy.linalg.eigh(A, B)
    top = w[-1]
    tied = [j for j in range(len(w)) if top - w[j] < 1e-10]
    cands = []
    for j in tied:
        v = unit(V[:, j])
        cands.append(v * sign_fix(v))
    v = max(cands, key=lambda u: tuple(np.round(np.abs(u), 12)))
    return float(top), v


def _initializer(prob: FitProblem, canonical: bool) -> np.ndarray:
    Sxx, Sxy, Syy = moments(prob)
    try:
        if canonical:
            A = Sxy @ np.linalg.solve(_ridged(Syy), Sxy.T)
        else:
            A = Sxy @ Sxy.T
        _, v = _leading_generalized(0.5 * (A + A.T), _ridged(Sxx))
        if not np.all(np.isfinite(v)):
            raise np.linalg.LinAlgError("non-finite eigenvector")
        return v
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as exc:
        warnings.warn(f"eigen initializer failed ({exc}); using the uniform vector",
                      RuntimeWarning, stacklevel=3)
        return np.full(prob.p, 1.0 / math.sqrt(prob.p))


def init_redundancy(prob: FitProblem) -> np.ndarray:
    """Leading eigenvector of ``Sxx^{-1} Sxy Syx`` (first redundancy direction)."""
    return _initializer(prob, canonical=False)


def init_canonical(prob: FitProblem) -> np.ndarray:
    """Leading eigenvector of ``Sxx^{-1} Sxy Syy^{-1} Syx`` (first canonical direction)."""
    return _initializer(prob, canonical=True)


def default_init(prob: FitProblem) -> np.ndarray:
    return init_canonical(prob) if prob.loss == "g2" else init_redundancy(prob)


# ----------------------------------------------------------------- certificate

@dataclass(frozen=True)
class Certificate:
    """Per-coordinate classification: 1 (zero, |g_i| <= lam), 2 (nonzero,
    g*_i = 0) or 0 (violating)."""

    classes: np.ndarray
    max_violation: float
    tolerance: float
    objective: float

    @property
    def certified(self) -> bool:
        return bool(np.all(self.classes > 0))

    @property
    def n_zero_set(self) -> int:
        return int(np.sum(self.classes == 1))

    @property
    def n_support_set(self) -> int:
        return int(np.sum(self.classes == 2))


def _certificate(beta, grad_g, rg, lam, tol) -> Certificate:
    g = grad_g - lam * float(np.sum(np.abs(beta))) * beta
    zero = beta == 0.0
    viol = np.where(zero, np.maximum(np.abs(g) - lam, 0.0), np.abs(g + lam * np.sign(beta)))
    thresh = tol * (1.0 + abs(rg))
    classes = np.where(viol <= thresh, np.where(zero, 1, 2), 0)
    return Certificate(classes, float(np.max(viol)) if viol.size else 0.0, thresh, rg)


def critical_point_certificate(beta: np.ndarray, prob: FitProblem, tol: float = 1e-6) -> Certificate:
    beta = np.asarray(beta, dtype=float)
    value, grad, _ = value_and_grad(beta, prob)
    if not np.isfinite(value):
        raise SingularDesignError("certificate undefined: F(beta) is rank deficient")
    rg = value + prob.lam * float(np.sum(np.abs(beta))) / float(np.linalg.norm(beta))
    return _certificate(beta, grad, rg, prob.lam, tol)


# ------------------------------------------------------------ proximal descent

class _Path:
    """Objective along the proximal path ``eta -> normalize(S(beta - eta g))``."""

    def __init__(self, prob: FitProblem, beta: np.ndarray, g: np.ndarray):
        self.prob, self.beta, self.g = prob, beta, g
        self.evals = 0
        self.best = (np.inf, 0.0, None)

    def __call__(self, eta: float) -> float:
        self.evals += 1
        nb = kernels.active.prox_point(self.beta, self.g, eta, self.prob.lam)
        if nb is None:
            return np.inf
        v = profiled_loss(nb, self.prob) + self.prob.lam * float(np.sum(np.abs(nb)))
        if v < self.best[0]:
            self.best = (v, eta, nb)
        return v


def _golden(phi: _Path, a: float, x: float, b: float, fx: float, cfg: SolverConfig):
    while b - a > cfg.ls_tol * x and phi.evals < cfg.max_evals:
        if b - x > x - a:
            u = x + (1 - GOLDEN) * (b - x)
            fu = phi(u)
            if fu < fx:
                a, x, fx = x, u, fu
            else:
                b = u
        else:
            u = x - (1 - GOLDEN) * (x - a)
            fu = phi(u)
            if fu < fx:
                b, x, fx = x, u, fu
            else:
                a = u


def _line_search(phi: _Path, obj0: float, eta0: float, cfg: SolverConfig):
    """Returns (new_obj, eta, new_beta) with new_obj < obj0, or None."""
    eta = eta0
    v = phi(eta)
    if v < obj0:
        if cfg.line_search == "backtracking":
            return phi.best
        lo, cur, fcur = 0.0, eta, v
        while phi.evals < cfg.max_evals:
            nxt = 2.0 * cur
            fn = phi(nxt)
            if fn >= fcur:
                _golden(phi, lo, cur, nxt, fcur, cfg)
                break
            lo, cur, fcur = cur, nxt, fn
        return phi.best
    hi = eta
    while True:
        eta *= 0.5
        if eta < cfg.eta_min:
            return None
        v = phi(eta)
        if v < obj0:
            if cfg.line_search == "golden_section":
                _golden(phi, 0.0, eta, hi, v, cfg)
            return phi.best
        hi = eta


def _proximal_single(prob: FitProblem, init: np.ndarray, cfg: SolverConfig):
    lam = prob.lam
    beta = unit(init)
    value, grad, _ = value_and_grad(beta, prob)
    if not np.isfinite(value):
        raise SingularDesignError("initial loading vector gives a rank-deficient F(beta)")
    obj = value + lam * float(np.sum(np.abs(beta)))
    trace = FitTrace([obj])
    eta = cfg.eta_start
    pending = False
    for it in range(cfg.max_iter):
        if pending:
            cert = _certificate(beta, grad, obj, lam, cfg.cert_tol)
            if cert.certified:
                trace.termination = "converged"
                break
        g = grad - lam * float(np.sum(np.abs(beta))) * beta
        phi = _Path(prob, beta, g)
        start = eta if cfg.warm_start_step else cfg.eta_start
        step = _line_search(phi, obj, start, cfg)
        if step is None:
            if not np.isfinite(phi.best[0]) and phi.evals:
                logger.debug("soft threshold removed every coordinate at all probed steps")
            trace.termination = "critical_point"
            break
        new_obj, eta, beta = step
        rel = abs(new_obj - obj) / max(abs(obj), 1e-300)
        obj = new_obj
        trace.objective_path.append(obj)
        trace.steps.append(eta)
        trace.iterations = it + 1
        value, grad, _ = value_and_grad(beta, prob)
        pending = rel <= cfg.epsilon
        if pending and not cfg.certify:
            trace.termination = "converged"
            break
    else:
        if pending and _certificate(beta, grad, obj, lam, cfg.cert_tol).certified:
            trace.termination = "converged"
    return beta, trace


def _perturbed_inits(init: np.ndarray, cfg: SolverConfig) -> list[np.ndarray]:
    inits = [unit(init)]
    if cfg.restarts > 1:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 7919]))
        for _ in range(cfg.restarts - 1):
            inits.append(unit(inits[0] + cfg.perturb_sigma * rng.standard_normal(init.shape[0])))
    return inits


def _finish(beta: np.ndarray, prob: FitProblem) -> ComponentParams:
    s = sign_fix(beta)
    beta = beta * s
    return ComponentParams(beta, gamma_ls(beta, prob))


def proximal_fit(prob: FitProblem, init: np.ndarray | None = None,
                 cfg: SolverConfig | None = None) -> tuple[ComponentParams, FitTrace]:
    """Minimize ``RG*`` over unit vectors by proximal gradient descent.

    Each iteration takes ``beta <- normalize(S_{lam eta}(beta - eta g(beta)))``
    with ``eta`` chosen by a line search on the objective along that path;
    only strictly decreasing steps are accepted.
    """
    cfg = cfg or SolverConfig()
    if init is None:
        init = default_init(prob)
    best = None
    for start in _perturbed_inits(np.asarray(init, dtype=float), cfg):
        beta, trace = _proximal_single(prob, start, cfg)
        if best is None or trace.final < best[1].final:
            best = (beta, trace)
    return _finish(best[0], prob), best[1]


# ------------------------------------------------------------- fixed points

def _weighted_normal_equations(prob: FitProblem, weight: np.ndarray, rhs_w: np.ndarray):
    """``M = sum_t X_t' weight X_t`` and ``b = sum_t X_t' rhs_w[t]``.

    ``weight`` is (k+1) x (k+1) PSD; ``rhs_w`` is n x (k+1).
    """
    k, n = prob.k, prob.n
    lags = [prob.X[k - a:k - a + n] for a in range(k + 1)]
    w, V = np.linalg.eigh(0.5 * (weight + weight.T))
    M = np.zeros((prob.p, prob.p))
    for r in range(k + 1):
        if w[r] <= 0:
            continue
        U = sum(math.sqrt(w[r]) * V[a, r] * lags[a] for a in range(k + 1))
        M += U.T @ U
    b = sum(lags[a].T @ rhs_w[:, a] for a in range(k + 1))
    return M, b


def _solve_ridged(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    Ms = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(Ms)
    if w[-1] <= 0 or w[0] <= w[-1] / 1e12:
        Ms = Ms + 1e-10 * max(np.trace(Ms), 1e-300) / Ms.shape[0] * np.eye(Ms.shape[0])
    try:
        x = scipy.linalg.solve(Ms, b, assume_a="pos")
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        raise NumericError("fixed-point system is singular even after the ridge fallback") from None
    if not np.all(np.isfinite(x)) or not np.any(x):
        raise NumericError("fixed-point update produced a degenerate loading vector")
    return x


def fixed_point_step(beta: np.ndarray, prob: FitProblem) -> np.ndarray:
    """Right-hand side of the beta stationarity equation at ``Gamma = gamma_ls(beta)``
    (unnormalized); for ``g2`` the residual covariance weights the equation."""
    gamma = gamma_ls(beta, prob)
    if prob.loss == "g2" and prob.q > 1:
        E = prob.Y - prob.windows(beta) @ gamma.T
        Sinv = spd_inverse(E.T @ E / prob.n)
        M, b = _weighted_normal_equations(prob, gamma.T @ Sinv @ gamma, prob.Y @ Sinv @ gamma)
    else:
        M, b = _weighted_normal_equations(prob, gamma.T @ gamma, prob.Y @ gamma)
    return _solve_ridged(M, b)


def _fixed_point(prob: FitProblem, init, cfg: SolverConfig):
    if prob.lam > 0:
        raise ConfigError("the fixed-point algorithm solves the non-regularized problem (lam = 0)")
    if init is None:
        init = default_init(prob)
    beta = unit(init)
    beta = beta * sign_fix(beta)
    trace = FitTrace([profiled_loss(beta, prob)])
    for it in range(cfg.max_iter):
        new = unit(fixed_point_step(beta, prob))
        if new @ beta < 0:
            new = -new
        trace.objective_path.append(profiled_loss(new, prob))
        trace.iterations = it + 1
        moved = float(np.linalg.norm(new - beta))
        beta = new
        if moved <= cfg.epsilon:
            trace.termination = "converged"
            break
    return _finish(beta, prob), trace


def fixed_point_fit_g1(prob: FitProblem, init: np.ndarray | None = None,
                       cfg: SolverConfig | None = None) -> tuple[ComponentParams, FitTrace]:
    return _fixed_point(prob.with_loss("g1"), init, cfg or SolverConfig())


def fixed_point_fit_g2(prob: FitProblem, init: np.ndarray | None = None,
                       cfg: SolverConfig | None = None) -> tuple[ComponentParams, FitTrace]:
    if prob.q == 1:
        return fixed_point_fit_g1(prob, init, cfg)
    return _fixed_point(prob.with_loss("g2"), init, cfg or SolverConfig())


def fit_component(prob: FitProblem, cfg: SolverConfig | None = None,
                  init: np.ndarray | None = None) -> tuple[ComponentParams, FitTrace]:
    """Default estimation route: eigen initializer then proximal descent."""
    return proximal_fit(prob, init, cfg)
