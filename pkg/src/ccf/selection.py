"""Cross-validated choice of lags, penalty and number of components.

The sample is split into a training block, a first validation block used to
choose hyper-parameters, and a second validation block used only to score the
whole procedure (FMSECV). Forecast origins belong to a block when their
target ``y_{t+h}`` does, and the origin itself lies in the same block.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import model as ccfm
from .errors import ConfigError, EmptySampleError, NumericError, SingularDesignError
from .objective import FitProblem, make_problem, value_and_grad
from .panel import split_lengths
from .solver import SolverConfig, _line_search, _Path, default_init, unit

logger = logging.getLogger(__name__)

AR_ORDERS = (0, 1, 2, 3, 4)
SPARSITY_TARGET = 0.9


@dataclass(frozen=True)
class CvConfig:
    alpha: float = 0.70
    c_max: int = 3
    k_max: int = 3
    lambda_max: float | None = None
    J: int = 10
    h: int = 1
    loss: str = "g1"
    max_components: int = 10
    refit: bool = True
    min_rows: int = 10
    # skip (c, k) cells whose p = m(c+1) reaches the number of training rows
    identified_only: bool = True
    final_restarts: int = 3
    seed: int = 0
    ar_select: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.J < 2:
            raise ConfigError("the penalty grid needs J >= 2")
        if self.c_max < 0 or self.k_max < 0 or self.h < 0:
            raise ConfigError("lag caps and the horizon must be non-negative")
        if self.max_components < 1:
            raise ConfigError("max_components must be >= 1")
        if not 0 < self.alpha < 1:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.lambda_max is not None and not self.lambda_max > 0:
            raise ConfigError("lambda_max must be positive")
        if self.loss not in ("g1", "g2"):
            raise ConfigError(f"unknown loss {self.loss!r}")

    def lambda_grid(self, lam_max: float) -> np.ndarray:
        return np.array([j * lam_max / (self.J - 1) for j in range(self.J)])


@dataclass(frozen=True)
class Windows:
    """Origin ranges (inclusive) of the three blocks for horizon h."""

    T1: int
    T2: int
    T3: int
    h: int

    @classmethod
    def from_split(cls, T: int, alpha: float, h: int) -> "Windows":
        s = split_lengths(T, alpha)
        return cls(s.T1, s.T2, s.T3, h)

    @property
    def train_hi(self) -> int:
        return self.T1 - 1 - self.h

    @property
    def val1(self) -> tuple[int, int]:
        return self.T1, self.T1 + self.T2 - 1 - self.h

    @property
    def val2(self) -> tuple[int, int]:
        return self.T1 + self.T2, self.T1 + self.T2 + self.T3 - 1 - self.h

    @property
    def refit_hi(self) -> int:
        return self.T1 + self.T2 - 1 - self.h


@dataclass
class StageReport:
    c: int
    k: int
    lam: float
    lambda_max: float
    fmse: float
    surface: dict[str, float]
    lambda_results: list[tuple[float, float]]
    accepted: bool

    def to_dict(self) -> dict:
        return {"c": self.c, "k": self.k, "lambda": self.lam, "lambda_max": self.lambda_max,
                "fmse": self.fmse, "fmse_surface": dict(self.surface),
                "lambda_grid": [[lam, v] for lam, v in self.lambda_results],
                "accepted": self.accepted}


@dataclass
class CvReport:
    stages: list[StageReport]
    fmse_path: list[float]
    s_hat: int
    windows: Windows
    fmsecv: float | None = None
    ar_orders: list[int] | None = None
    models: list = field(default_factory=list, repr=False)

    @property
    def schedule(self) -> list[tuple[int, int, float]]:
        return [(st.c, st.k, st.lam) for st in self.stages[:self.s_hat]]

    def to_dict(self) -> dict:
        w = self.windows
        return {
            "splits": {"T1": w.T1, "T2": w.T2, "T3": w.T3},
            "h": w.h,
            "stages": [st.to_dict() for st in self.stages],
            "fmse_path": list(self.fmse_path),
            "s_hat": self.s_hat,
            "fmsecv": self.fmsecv,
            "ar_orders": self.ar_orders,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def summary(self) -> str:
        lines = [f"{'stage':>5} {'c':>3} {'k':>3} {'lambda':>12} {'val FMSE':>14}"]
        for i, st in enumerate(self.stages, 1):
            mark = "" if st.accepted else "  (rejected)"
            lines.append(f"{i:>5} {st.c:>3} {st.k:>3} {st.lam:>12.6g} {st.fmse:>14.6g}{mark}")
        tail = "n/a" if self.fmsecv is None else f"{self.fmsecv:.6g}"
        lines.append(f"s_hat = {self.s_hat}  FMSECV = {tail}")
        return "\n".join(lines)


# ------------------------------------------------------------------- helpers

def validation_fmse(errors: np.ndarray) -> float:
    """Mean squared Euclidean norm of the rows of an error matrix."""
    errors = np.atleast_2d(np.asarray(errors, dtype=float))
    if errors.shape[0] == 0:
        raise EmptySampleError("empty validation window")
    if not np.all(np.isfinite(errors)):
        raise EmptySampleError("validation window contains origins without a forecast")
    return float(np.mean(np.sum(errors * errors, axis=1)))


def _map(fn, tasks, threads: int):
    if threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, tasks))
    return [fn(t) for t in tasks]


def auto_lambda_max(prob: FitProblem, solver_cfg: SolverConfig | None = None,
                    target: float = SPARSITY_TARGET) -> float:
    """Smallest penalty for which one thresholding step from the initializer
    zeroes at least ``target`` of the coordinates.

    The step is ``S_{lam eta}(beta - eta grad G*(beta))`` with ``eta`` the step
    the line search picks at lam = 0 (1.0 if it fails). The ``-lam ||b||_1 b``
    part of the smooth gradient is left out: it inflates every coordinate by
    ``1 + eta lam ||b||_1`` and would make the target unreachable for dense
    initializers.
    """
    cfg = solver_cfg or SolverConfig()
    p0 = prob.with_lambda(0.0)
    beta = unit(default_init(p0))
    value, grad, _ = value_and_grad(beta, p0)
    if not np.isfinite(value):
        raise SingularDesignError("initializer gives a rank-deficient F(beta)")
    step = _line_search(_Path(p0, beta, grad), value, cfg.eta_start, cfg)
    if step is None or not step[1] > 0 or value - step[0] <= cfg.epsilon * abs(value):
        # the initializer is already (nearly) stationary: no informative step
        eta = 1.0
    else:
        eta = step[1]
    a = np.sort(np.abs(beta - eta * grad))
    need = min(max(math.ceil(target * prob.p), 1), prob.p)
    lam = a[need - 1] / eta
    if not lam > 0:
        lam = a[-1] / eta if a[-1] > 0 else 1.0
    return float(lam)


@dataclass(frozen=True)
class _Cell:
    resid: np.ndarray
    z: np.ndarray
    c: int
    k: int
    lam: float
    h: int
    loss: str
    train_hi: int
    val: tuple[int, int]
    min_rows: int
    solver: SolverConfig
    identified_only: bool = False


def _fit_cell(cell: _Cell):
    try:
        if cell.identified_only:
            start = max(ccfm.first_valid(cell.resid), cell.c + cell.k)
            n = cell.train_hi - start + 1
            if cell.z.shape[1] * (cell.c + 1) >= n:
                raise EmptySampleError(f"p = {cell.z.shape[1] * (cell.c + 1)} >= n = {n}")
        comp, new = ccfm.extract_component(cell.resid, cell.z, cell.c, cell.k, cell.lam, cell.h,
                                           cell.loss, cell.solver, t_hi=cell.train_hi,
                                           min_rows=cell.min_rows)
        lo, hi = cell.val
        return comp, new, validation_fmse(new[lo:hi + 1])
    except (EmptySampleError, SingularDesignError, NumericError) as exc:
        logger.debug("cell c=%d k=%d lam=%g skipped: %s", cell.c, cell.k, cell.lam, exc)
        return None


def _pick(values: list[tuple[float, tuple]], rtol: float = 1e-12):
    """Index of the smallest value; among values within rtol of it the
    smallest tie key wins."""
    best = min(v for v, _ in values)
    tied = [i for i, (v, _) in enumerate(values) if v <= best + rtol * abs(best)]
    return min(tied, key=lambda i: values[i][1])


def select_lags(resid, z, cfg: CvConfig, win: Windows, solver_cfg: SolverConfig | None = None):
    """Fit every (c, k) cell with lam = 0 on the training block.

    Returns (c_hat, k_hat, surface, fits) where ``surface`` maps "c,k" to the
    validation FMSE and ``fits`` holds (component, residuals, fmse) per cell.
    """
    solver_cfg = solver_cfg or SolverConfig()
    cells = [_Cell(resid, z, c, k, 0.0, cfg.h, cfg.loss, win.train_hi, win.val1, cfg.min_rows,
                   solver_cfg, cfg.identified_only)
             for c in range(cfg.c_max + 1) for k in range(cfg.k_max + 1)]
    out = _map(_fit_cell, cells, cfg.threads)
    fits = {(cl.c, cl.k): r for cl, r in zip(cells, out) if r is not None}
    if not fits:
        raise EmptySampleError("every (c, k) cell was skipped: the sample is too short")
    keys = sorted(fits)
    i = _pick([(fits[key][2], (key[0] + key[1], key[0])) for key in keys])
    c_hat, k_hat = keys[i]
    surface = {f"{c},{k}": fits[(c, k)][2] for c, k in keys}
    return c_hat, k_hat, surface, fits


def select_lambda(resid, z, c_hat: int, k_hat: int, cfg: CvConfig, win: Windows,
                  solver_cfg: SolverConfig | None = None, zero_fit=None):
    """Scan the penalty grid at fixed lags; ties go to the larger penalty.

    Returns (lambda_hat, lambda_max, grid_results, chosen_fit).
    """
    solver_cfg = solver_cfg or SolverConfig()
    lam_max = cfg.lambda_max
    if lam_max is None:
        start = max(ccfm.first_valid(resid), c_hat + k_hat)
        prob = make_problem(z, resid[start:], c_hat, k_hat, h=cfg.h, target_first=start,
                            t_hi=win.train_hi, loss=cfg.loss, min_rows=cfg.min_rows)
        lam_max = auto_lambda_max(prob, solver_cfg)
    grid = [float(lam) for lam in cfg.lambda_grid(lam_max)]
    todo = [lam for lam in grid if not (lam == 0.0 and zero_fit is not None)]
    cells = [_Cell(resid, z, c_hat, k_hat, lam, cfg.h, cfg.loss, win.train_hi, win.val1,
                   cfg.min_rows, solver_cfg) for lam in todo]
    fitted = dict(zip(todo, _map(_fit_cell, cells, cfg.threads)))
    if zero_fit is not None:
        fitted[0.0] = zero_fit
    results = [(lam, fitted[lam][2]) for lam in grid if fitted.get(lam) is not None]
    if not results:
        raise NumericError("no penalty on the grid produced a usable fit")
    i = _pick([(v, (-lam,)) for lam, v in results])
    lam_hat = results[i][0]
    return lam_hat, float(lam_max), results, fitted[lam_hat]


def select_components(y, z, cfg: CvConfig, win: Windows | None = None,
                      solver_cfg: SolverConfig | None = None) -> CvReport:
    """Add components while the first-block validation FMSE keeps falling."""
    y = ccfm._as2d(y)
    z = ccfm._as2d(z)
    win = win or Windows.from_split(y.shape[0], cfg.alpha, cfg.h)
    lo, hi = win.val1
    if hi < lo or win.train_hi < 0:
        raise EmptySampleError(f"split {win.T1}/{win.T2}/{win.T3} leaves no validation origins at h={cfg.h}")
    resid = ccfm.initial_residuals(y, cfg.h)
    stages, path, comps = [], [], []
    s_hat = 0
    for stage in range(cfg.max_components):
        try:
            c_hat, k_hat, surface, fits = select_lags(resid, z, cfg, win, solver_cfg)
            lam_hat, lam_max, lres, chosen = select_lambda(resid, z, c_hat, k_hat, cfg, win, solver_cfg,
                                                           zero_fit=fits[(c_hat, k_hat)])
        except (EmptySampleError, NumericError) as exc:
            if stage == 0:
                raise
            logger.info("stopping after %d components: %s", stage, exc)
            break
        comp, new, fmse = chosen
        improved = stage == 0 or fmse < path[-1]
        stages.append(StageReport(c_hat, k_hat, lam_hat, lam_max, fmse, surface, lres, improved))
        path.append(fmse)
        if not improved:
            break
        comps.append(comp)
        s_hat = stage + 1
        resid = new
    report = CvReport(stages, path, s_hat, win)
    report.models = comps
    return report


def training_model(report: CvReport, cfg: CvConfig) -> ccfm.CcfModel:
    return ccfm.CcfModel(list(report.models), cfg.h, cfg.loss)


def select_ar_orders(model: ccfm.CcfModel, y, z, win: Windows) -> list[int]:
    """Per series, the AR order in ``AR_ORDERS`` with the smallest
    first-block validation error (ties to the smaller order)."""
    lo, hi = win.val1
    errs = []
    for p in AR_ORDERS:
        try:
            aug = ccfm.fit_ar_augment(model, y, z, [p] * model.q, t_hi=win.train_hi)
            e = ccfm.model_residuals(aug, y, z, max(lo, aug.ar_depth), hi)
            errs.append(np.mean(e * e, axis=0))
        except EmptySampleError:
            errs.append(np.full(model.q, np.inf))
    errs = np.array(errs)
    return [int(AR_ORDERS[int(np.argmin(errs[:, j]))]) for j in range(model.q)]


def refit(report: CvReport, y, z, cfg: CvConfig, t_hi: int,
          solver_cfg: SolverConfig | None = None, **model_kw) -> ccfm.CcfModel:
    """Re-estimate every selected component on origins ``<= t_hi`` holding the
    chosen (c, k, lambda) fixed."""
    base = solver_cfg or SolverConfig()
    resid = ccfm.initial_residuals(ccfm._as2d(y), cfg.h)
    comps = []
    z = ccfm._as2d(z)
    for i, (c, k, lam) in enumerate(report.schedule):
        scfg = replace(base, restarts=max(base.restarts, cfg.final_restarts),
                       seed=int(np.random.SeedSequence([cfg.seed, i]).generate_state(1)[0]))
        comp, resid = ccfm.extract_component(resid, z, c, k, lam, cfg.h, cfg.loss, scfg, t_hi=t_hi)
        comps.append(comp)
    model = ccfm.CcfModel(comps, cfg.h, cfg.loss, **model_kw)
    if report.ar_orders and any(report.ar_orders):
        model = ccfm.fit_ar_augment(model, y, z, report.ar_orders, t_hi=t_hi)
    return model


def final_fmsecv(y, z, report: CvReport, cfg: CvConfig,
                 solver_cfg: SolverConfig | None = None) -> float:
    """Score the selected procedure on the second validation block."""
    win = report.windows
    lo, hi = win.val2
    if hi < lo:
        raise EmptySampleError("second validation block has no forecast origins")
    if cfg.refit:
        model = refit(report, y, z, cfg, win.refit_hi, solver_cfg)
    else:
        model = training_model(report, cfg)
        if report.ar_orders and any(report.ar_orders):
            model = ccfm.fit_ar_augment(model, y, z, report.ar_orders, t_hi=win.train_hi)
    return validation_fmse(ccfm.model_residuals(model, y, z, lo, hi))


def run_cv(y, z, cfg: CvConfig, solver_cfg: SolverConfig | None = None,
           win: Windows | None = None) -> CvReport:
    """Full protocol: stagewise selection, optional AR orders, FMSECV."""
    report = select_components(y, z, cfg, win, solver_cfg)
    if cfg.ar_select:
        report.ar_orders = select_ar_orders(training_model(report, cfg), y, z, report.windows)
    report.fmsecv = final_fmsecv(y, z, report, cfg, solver_cfg)
    return report
