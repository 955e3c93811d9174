"""Multi-component core component model.

Components are extracted one after another, each fitted to the forecast
errors left by its predecessors. Residual series are stored origin-indexed:
row ``t`` holds the error of the forecast of ``y_{t+h}`` made at ``t``; rows
before the first usable origin are NaN.
"""
from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptySampleError, SchemaError
from .objective import ComponentParams, loss, make_problem, target_matrix
from .panel import StandardizationInfo, lag_rows
from .solver import SolverConfig, fit_component

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class CoreComponent:
    beta: np.ndarray
    gamma: np.ndarray
    c: int
    k: int
    lam: float = 0.0
    h: int = 1
    loss: str = "g1"

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        gamma = np.atleast_2d(np.asarray(self.gamma, dtype=float))
        if gamma.shape[1] != self.k + 1:
            raise ValueError(f"gamma has {gamma.shape[1]} columns, expected k+1 = {self.k + 1}")
        if beta.shape[0] % (self.c + 1):
            raise ValueError("beta length is not a multiple of c+1")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "gamma", gamma)

    @property
    def p(self) -> int:
        return self.beta.shape[0]

    @property
    def m(self) -> int:
        return self.p // (self.c + 1)

    @property
    def q(self) -> int:
        return self.gamma.shape[0]

    @property
    def lags(self) -> int:
        return self.c + self.k

    def predict(self, z: np.ndarray, lo: int, hi: int) -> np.ndarray:
        """``Gamma F_t(beta)`` for origins ``t = lo..hi`` (rows of ``z`` are times)."""
        if lo < self.lags:
            raise EmptySampleError(f"origin {lo} needs {self.lags} earlier rows")
        if hi >= z.shape[0]:
            raise EmptySampleError(f"origin {hi} beyond the panel ({z.shape[0]} rows)")
        n = hi - lo + 1
        if n <= 0:
            return np.zeros((0, self.q))
        f = lag_rows(z, self.c, lo - self.k, hi + 1) @ self.beta
        F = np.lib.stride_tricks.sliding_window_view(f, self.k + 1)[:n, ::-1]
        return F @ self.gamma.T

    def to_dict(self) -> dict:
        return {"beta": self.beta.tolist(), "gamma": self.gamma.tolist(), "c": self.c,
                "k": self.k, "lambda": self.lam, "h": self.h, "loss": self.loss}

    @classmethod
    def from_dict(cls, d: dict) -> "CoreComponent":
        return cls(np.array(d["beta"], dtype=float), np.array(d["gamma"], dtype=float),
                   int(d["c"]), int(d["k"]), float(d["lambda"]), int(d["h"]), d["loss"])


@dataclass(frozen=True)
class ArAugment:
    series: int
    order: int
    coef: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float).reshape(-1)
        if self.order < 0 or coef.shape[0] != self.order or not np.all(np.isfinite(coef)):
            raise ValueError("AR order and coefficients are inconsistent")
        object.__setattr__(self, "coef", coef)


@dataclass
class CcfModel:
    components: list[CoreComponent]
    h: int = 1
    loss: str = "g1"
    y_info: StandardizationInfo | None = None
    z_info: StandardizationInfo | None = None
    ar: list[ArAugment] = field(default_factory=list)
    stage_losses: list[float] = field(default_factory=list)
    y_labels: tuple[str, ...] = ()
    z_labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.components:
            raise ConfigError("a model needs at least one component")
        m = {comp.m for comp in self.components}
        if len(m) > 1 or any(comp.h != self.h for comp in self.components):
            raise ConfigError("components must share h and the explanatory column set")

    @property
    def s(self) -> int:
        return len(self.components)

    @property
    def d(self) -> int:
        return max(comp.lags for comp in self.components)

    @property
    def q(self) -> int:
        return self.components[0].q

    @property
    def m(self) -> int:
        return self.components[0].m

    @property
    def ar_depth(self) -> int:
        return max((a.order for a in self.ar), default=0)

    def schedule(self) -> list[tuple[int, int, float]]:
        return [(c.c, c.k, c.lam) for c in self.components]

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "h": self.h,
            "loss": self.loss,
            "components": [c.to_dict() for c in self.components],
            "ar": [{"series": a.series, "order": a.order, "coef": a.coef.tolist()} for a in self.ar],
            "stage_losses": list(self.stage_losses),
            "y_standardization": self.y_info.to_dict() if self.y_info else None,
            "z_standardization": self.z_info.to_dict() if self.z_info else None,
            "y_labels": list(self.y_labels),
            "z_labels": list(self.z_labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CcfModel":
        try:
            if d.get("format_version") != FORMAT_VERSION:
                raise SchemaError(f"unsupported model format version {d.get('format_version')!r}")
            return cls(
                components=[CoreComponent.from_dict(c) for c in d["components"]],
                h=int(d["h"]),
                loss=d["loss"],
                y_info=StandardizationInfo.from_dict(d["y_standardization"]) if d["y_standardization"] else None,
                z_info=StandardizationInfo.from_dict(d["z_standardization"]) if d["z_standardization"] else None,
                ar=[ArAugment(int(a["series"]), int(a["order"]), np.array(a["coef"], dtype=float))
                    for a in d["ar"]],
                stage_losses=[float(v) for v in d["stage_losses"]],
                y_labels=tuple(d["y_labels"]),
                z_labels=tuple(d["z_labels"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(f"malformed model document: {exc}") from None


def dumps(model: CcfModel) -> str:
    return json.dumps(model.to_dict(), sort_keys=True, indent=1)


def atomic_write(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_model(model: CcfModel, path) -> None:
    atomic_write(path, dumps(model))


def load_model(path) -> CcfModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"model file is not valid JSON: {exc}") from None
    return CcfModel.from_dict(doc)


# ------------------------------------------------------------------ fitting

def _as2d(a) -> np.ndarray:
    a = np.asarray(getattr(a, "values", a), dtype=float)
    return a[:, None] if a.ndim == 1 else a


def initial_residuals(y: np.ndarray, h: int) -> np.ndarray:
    """Origin-indexed targets ``y_{t+h}``, ``t = 0..T-1-h``."""
    return target_matrix(_as2d(y), h).copy()


def first_valid(resid: np.ndarray) -> int:
    ok = np.all(np.isfinite(resid), axis=1)
    if not ok.any():
        raise EmptySampleError("residual series has no usable rows")
    return int(np.argmax(ok))


def extract_component(targets: np.ndarray, z: np.ndarray, c: int, k: int, lam: float, h: int,
                      loss_kind: str = "g1", cfg: SolverConfig | None = None, *,
                      t_hi: int | None = None, min_rows: int = 1,
                      ) -> tuple[CoreComponent, np.ndarray]:
    """Fit one component to origin-indexed ``targets`` using origins up to
    ``t_hi``; return it with the updated residual series over all origins."""
    z = _as2d(z)
    targets = _as2d(targets)
    start = max(first_valid(targets), c + k)
    prob = make_problem(z, targets[start:], c, k, h=h, target_first=start, t_hi=t_hi,
                        loss=loss_kind, lam=lam, min_rows=min_rows)
    params, trace = fit_component(prob, cfg)
    comp = CoreComponent(params.beta, params.gamma, c, k, float(lam), h, loss_kind)
    hi = min(targets.shape[0], z.shape[0]) - 1
    new = np.full_like(targets, np.nan)
    new[start:hi + 1] = targets[start:hi + 1] - comp.predict(z, start, hi)
    logger.debug("component c=%d k=%d lam=%g: %s after %d iterations",
                 c, k, lam, trace.termination, trace.iterations)
    return comp, new


def in_sample_loss(comp: CoreComponent, targets: np.ndarray, z: np.ndarray,
                   t_hi: int | None = None) -> float:
    start = max(first_valid(targets), comp.lags)
    prob = make_problem(z, targets[start:], comp.c, comp.k, h=comp.h, target_first=start,
                        t_hi=t_hi, loss=comp.loss)
    return loss(ComponentParams(comp.beta, comp.gamma), prob)


def fit_model(y, z, schedule, h: int = 1, loss_kind: str = "g1",
              cfg: SolverConfig | None = None, *, t_hi: int | None = None,
              y_info: StandardizationInfo | None = None,
              z_info: StandardizationInfo | None = None,
              y_labels=(), z_labels=()) -> CcfModel:
    """Fit components sequentially for ``schedule = [(c_i, k_i, lam_i), ...]``.

    ``y`` and ``z`` are on the modelling (standardized) scale; training uses
    origins ``t <= t_hi`` (default: every origin with an observed target).
    """
    if not schedule:
        raise ConfigError("schedule must contain at least one (c, k, lambda) entry")
    y, z = _as2d(y), _as2d(z)
    resid = initial_residuals(y, h)
    comps, losses = [], []
    for i, (c, k, lam) in enumerate(schedule):
        try:
            comp, new = extract_component(resid, z, int(c), int(k), float(lam), h, loss_kind, cfg, t_hi=t_hi)
            losses.append(in_sample_loss(comp, resid, z, t_hi))
        except Exception as exc:
            exc.args = (f"stage {i + 1}: {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        comps.append(comp)
        resid = new
    return CcfModel(comps, h, loss_kind, y_info, z_info, [], losses, tuple(y_labels), tuple(z_labels))


# --------------------------------------------------------------- prediction

def predict_components(model: CcfModel, z: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Sum of component forecasts for origins ``lo..hi`` (standardized scale)."""
    z = _as2d(z)
    out = np.zeros((hi - lo + 1, model.q))
    for comp in model.components:
        out += comp.predict(z, lo, hi)
    return out


def _ar_terms(model: CcfModel, y: np.ndarray, lo: int, hi: int) -> np.ndarray:
    out = np.zeros((hi - lo + 1, model.q))
    for a in model.ar:
        for r in range(1, a.order + 1):
            out[:, a.series] += a.coef[r - 1] * y[lo - r:hi - r + 1, a.series]
    return out


def predict(model: CcfModel, y, z, lo: int, hi: int) -> np.ndarray:
    """Standardized forecasts of ``y_{t+h}`` made at origins ``lo..hi``."""
    y, z = _as2d(y), _as2d(z)
    first = max(model.d, model.ar_depth)
    if lo < first:
        raise EmptySampleError(f"forecast origin {lo} needs at least {first} earlier rows")
    out = predict_components(model, z, lo, hi)
    if model.ar:
        out += _ar_terms(model, y, lo, hi)
    return out


def model_residuals(model: CcfModel, y, z, lo: int, hi: int) -> np.ndarray:
    """Forecast errors ``y_{t+h} - yhat_{t+h|t}`` for origins ``lo..hi``."""
    y = _as2d(y)
    return y[lo + model.h:hi + model.h + 1] - predict(model, y, z, lo, hi)


@dataclass(frozen=True)
class Forecast:
    origin: int
    standardized: np.ndarray
    original: np.ndarray


def forecast(model: CcfModel, y, z, T: int | None = None, *, raw: bool = True) -> Forecast:
    """Forecast ``y_{T+h}`` from origin ``T`` (default: the last row).

    With ``raw`` the panels are on the original scale and are standardized
    with the model's stored parameters first.
    """
    y, z = _as2d(y), _as2d(z)
    if z.shape[1] != model.m or y.shape[1] != model.q:
        raise SchemaError(f"panel shapes y:{y.shape[1]}, z:{z.shape[1]} do not match the model "
                          f"(q={model.q}, m={model.m})")
    if raw:
        if model.y_info is not None:
            y = model.y_info.transform(y)
        if model.z_info is not None:
            z = model.z_info.transform(z)
    T = z.shape[0] - 1 if T is None else int(T)
    if T < max(model.d, model.ar_depth) or T >= z.shape[0]:
        raise EmptySampleError(f"origin {T} lacks the {max(model.d, model.ar_depth)} rows of history needed")
    std = predict(model, y, z, T, T)[0]
    orig = model.y_info.inverse(std[None, :])[0] if model.y_info is not None else std.copy()
    return Forecast(T, std, orig)


def fit_ar_augment(model: CcfModel, y, z, orders, *, t_hi: int | None = None) -> CcfModel:
    """Regress each series' training forecast errors on its own lags
    ``y_{t-r}``, ``r = 1..p_j`` (no intercept) and attach the fits."""
    y, z = _as2d(y), _as2d(z)
    orders = [int(o) for o in orders]
    if len(orders) != model.q or min(orders, default=0) < 0:
        raise ConfigError("one non-negative AR order per target series is required")
    base = CcfModel(model.components, model.h, model.loss, model.y_info, model.z_info, [],
                    model.stage_losses, model.y_labels, model.z_labels)
    hi = y.shape[0] - 1 - model.h if t_hi is None else min(t_hi, y.shape[0] - 1 - model.h)
    ar = []
    for j, pj in enumerate(orders):
        if pj == 0:
            continue
        lo = max(model.d, pj)
        n = hi - lo + 1
        if n < pj + 1:
            raise EmptySampleError(f"AR order {pj} for series {j} leaves {max(n, 0)} rows")
        e = model_residuals(base, y, z, lo, hi)[:, j]
        L = np.column_stack([y[lo - r:hi - r + 1, j] for r in range(1, pj + 1)])
        coef, *_ = np.linalg.lstsq(L, e, rcond=None)
        ar.append(ArAugment(j, pj, coef))
    base.ar = ar
    return base


def parameter_count(model: CcfModel) -> int:
    return sum(comp.p + comp.q * (comp.k + 1) for comp in model.components)
