"""Supervised dynamic PCA (sdPCA) benchmark, fitted separately per target.

For target series j and lag order q, every predictor i gets its own
regression of ``y_{t+h,j}`` on ``(x_{t,i}, ..., x_{t-q+1,i})`` with an
intercept; the fitted value minus the intercept is the scaled predictor.
Principal components of the scaled predictors then feed a final regression.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import EmptySampleError, NumericError

Q_MAX = 3
S_MAX = 10


def _as2d(a) -> np.ndarray:
    a = np.asarray(getattr(a, "values", a), dtype=float)
    return a[:, None] if a.ndim == 1 else a


def _lag_stack(z: np.ndarray, q: int, lo: int, hi: int) -> np.ndarray:
    """Array (n, m, q) with ``[t, i, l] = z_{t-l, i}`` for origins ``lo..hi``."""
    if lo < q - 1:
        raise EmptySampleError(f"lag order {q} needs origins >= {q - 1}")
    return np.stack([z[lo - l:hi - l + 1] for l in range(q)], axis=2)


def _solve_normal(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched ``A x = b`` for SPD blocks with a 1e-8 ridge on ill-conditioned ones."""
    d = A.shape[-1]
    w = np.linalg.eigvalsh(A)
    bad = (w[..., 0] <= 1e-12 * np.maximum(w[..., -1], 1e-300))
    if np.any(bad):
        A = A.copy()
        A[bad] += 1e-8 * np.eye(d)
    try:
        return np.linalg.solve(A, b)
    except np.linalg.LinAlgError:
        raise NumericError("scaling regression is singular") from None


def scaling_coefficients(Y: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Per-predictor OLS with intercept, batched over predictors and targets.

    ``Y`` is (n, r) targets, ``L`` the (n, m, q) lag stack. Returns (r, m, q+1)
    with the intercept in the last slot.
    """
    n, m, q = L.shape
    D = np.concatenate([L, np.ones((n, m, 1))], axis=2)          # n, m, q+1
    G = np.einsum("tia,tib->iab", D, D)                            # m, q+1, q+1
    B = np.einsum("tia,tj->ija", D, Y)                             # m, r, q+1
    coef = _solve_normal(G[:, None], B[..., None])[..., 0]         # m, r, q+1
    return np.transpose(coef, (1, 0, 2))


def scale_predictors(y, z, j: int, q: int, h: int, lo: int | None = None,
                     hi: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Scaled predictors for target series ``j`` over origins ``lo..hi``.

    Returns (scaled (n, m), coefficients (m, q+1)); coefficients are fitted
    on the same origins.
    """
    y, z = _as2d(y), _as2d(z)
    lo = q - 1 if lo is None else lo
    hi = y.shape[0] - 1 - h if hi is None else hi
    if hi < lo:
        raise EmptySampleError("no origins for the scaling regressions")
    L = _lag_stack(z, q, lo, hi)
    coef = scaling_coefficients(y[lo + h:hi + h + 1, j:j + 1], L)[0]
    return np.einsum("til,il->ti", L, coef[:, :q]), coef


@dataclass(frozen=True)
class SdpcaSeries:
    q: int
    s_pc: int
    coef: np.ndarray        # m x (q+1), intercept last
    center: np.ndarray      # m
    directions: np.ndarray  # m x s_pc, orthonormal
    reg: np.ndarray         # s_pc + 1, intercept first

    def to_dict(self) -> dict:
        return {"q": self.q, "s_pc": self.s_pc, "coef": self.coef.tolist(),
                "center": self.center.tolist(), "directions": self.directions.tolist(),
                "reg": self.reg.tolist()}


@dataclass
class SdpcaModel:
    series: list[SdpcaSeries]
    h: int

    @property
    def depth(self) -> int:
        return max(s.q for s in self.series) - 1

    def to_json(self) -> str:
        return json.dumps({"h": self.h, "series": [s.to_dict() for s in self.series]}, sort_keys=True)


def _fit_q(y: np.ndarray, z: np.ndarray, q: int, h: int, lo: int, hi: int, s_max: int):
    """All targets at lag order q: scaling coefficients, PCA and the nested
    regressions for every number of components up to s_max."""
    L = _lag_stack(z, q, lo, hi)
    Y = y[lo + h:hi + h + 1]
    coef = scaling_coefficients(Y, L)                               # r, m, q+1
    S = np.einsum("til,jil->jti", L, coef[..., :q])                 # r, n, m
    center = S.mean(axis=1)
    Sc = S - center[:, None, :]
    C = np.einsum("jti,jtk->jik", Sc, Sc) / max(Sc.shape[1] - 1, 1)
    w, V = np.linalg.eigh(C)
    V = V[..., ::-1]
    smax = min(s_max, z.shape[1], Sc.shape[1] - 2)
    if smax < 1:
        raise EmptySampleError("too few origins for a principal component regression")
    V = V[..., :smax]
    P = np.einsum("jti,jis->jts", Sc, V)                            # r, n, smax
    regs = []
    for s in range(1, smax + 1):
        D = np.concatenate([np.ones(P.shape[:2] + (1,)), P[..., :s]], axis=2)
        G = np.einsum("jta,jtb->jab", D, D)
        b = np.einsum("jta,jt->ja", D, Y.T)
        regs.append(_solve_normal(G, b[..., None])[..., 0])
    return coef, center, V, regs


def _predict_series(z: np.ndarray, spec: SdpcaSeries, lo: int, hi: int) -> np.ndarray:
    L = _lag_stack(z, spec.q, lo, hi)
    S = np.einsum("til,il->ti", L, spec.coef[:, :spec.q])
    P = (S - spec.center) @ spec.directions
    return spec.reg[0] + P @ spec.reg[1:]


def _build(coef, center, V, regs, q, j, s) -> SdpcaSeries:
    return SdpcaSeries(q, s, coef[j].copy(), center[j].copy(), V[j, :, :s].copy(), regs[s - 1][j].copy())


def sdpca_fit(y, z, h: int, train_hi: int, val: tuple[int, int], q_max: int = Q_MAX,
              s_max: int = S_MAX, refit_hi: int | None = None) -> SdpcaModel:
    """Select (q, s_pc) per series on the validation origins, then (optionally)
    re-estimate with origins up to ``refit_hi``."""
    y, z = _as2d(y), _as2d(z)
    vlo, vhi = val
    if vhi < vlo:
        raise EmptySampleError("empty validation window")
    r = y.shape[1]
    best = [(np.inf, 1, 1)] * r
    Yv = y[vlo + h:vhi + h + 1]
    for q in range(1, q_max + 1):
        coef, center, V, regs = _fit_q(y, z, q, h, q - 1, train_hi, s_max)
        for s in range(1, len(regs) + 1):
            for j in range(r):
                pred = _predict_series(z, _build(coef, center, V, regs, q, j, s), vlo, vhi)
                err = float(np.mean((Yv[:, j] - pred) ** 2))
                if err < best[j][0]:
                    best[j] = (err, q, s)
    hi = train_hi if refit_hi is None else refit_hi
    series = [None] * r
    for q in sorted({b[1] for b in best}):
        coef, center, V, regs = _fit_q(y, z, q, h, q - 1, hi, s_max)
        for j in range(r):
            if best[j][1] == q:
                s = min(best[j][2], len(regs))
                series[j] = _build(coef, center, V, regs, q, j, s)
    return SdpcaModel(series, h)


def sdpca_predict(model: SdpcaModel, z, lo: int, hi: int) -> np.ndarray:
    z = _as2d(z)
    if lo < model.depth:
        raise EmptySampleError(f"origin {lo} lacks {model.depth} rows of history")
    return np.column_stack([_predict_series(z, s, lo, hi) for s in model.series])


def sdpca_forecast(model: SdpcaModel, z, T: int | None = None) -> np.ndarray:
    z = _as2d(z)
    T = z.shape[0] - 1 if T is None else int(T)
    if T >= z.shape[0]:
        raise EmptySampleError(f"origin {T} beyond the panel")
    return sdpca_predict(model, z, T, T)[0]


def sdpca_fmsecv(y, z, h: int, windows, q_max: int = Q_MAX, s_max: int = S_MAX,
                 refit: bool = True) -> float:
    """Second-block FMSE of sdPCA under the same split as the CCF protocol."""
    y = _as2d(y)
    model = sdpca_fit(y, z, h, windows.train_hi, windows.val1, q_max, s_max,
                      refit_hi=windows.refit_hi if refit else None)
    lo, hi = windows.val2
    e = y[lo + h:hi + h + 1] - sdpca_predict(model, z, lo, hi)
    return float(np.mean(np.sum(e * e, axis=1)))
