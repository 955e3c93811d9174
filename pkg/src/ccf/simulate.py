"""Monte Carlo comparison of CCF and sdPCA on a single-factor design.

The explanatory panel is a stable VAR(1) with an upper-bidiagonal transition
matrix; the targets load on a factor and its first lag. Each replication owns
an RNG stream derived from ``(seed, replication index)``, so records do not
depend on execution order and a longer run extends a shorter one.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import CcfError, ConfigError

logger = logging.getLogger(__name__)

BURN_IN = 200


@dataclass(frozen=True)
class SimConfig:
    m: int = 50
    q: int = 50
    T_total: int = 201
    reps: int = 100
    sigma_e: tuple[float, ...] = (0.3, 3.0)
    seed: int = 2024
    methods: tuple[str, ...] = ("ccf", "sdpca")
    alpha: float = 0.70
    n_train: int = 140
    n_val: int = 30
    redraw_loadings: bool = True
    burn_in: int = BURN_IN
    # per-series normalization of the squared error norm (see README)
    per_series: bool = True
    max_failure_rate: float = 0.02

    def __post_init__(self):
        if self.reps < 1:
            raise ConfigError("reps must be >= 1")
        if not self.sigma_e or any(s <= 0 for s in self.sigma_e):
            raise ConfigError("sigma_e values must be positive")
        if self.n_train + self.n_val >= self.T_total:
            raise ConfigError("train and validation windows leave nothing to forecast")
        object.__setattr__(self, "sigma_e", tuple(float(s) for s in self.sigma_e))
        object.__setattr__(self, "methods", tuple(self.methods))


@dataclass(frozen=True)
class DgpParams:
    A: np.ndarray
    v: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    c1: np.ndarray
    c2: np.ndarray


def draw_params(rng: np.random.Generator, m: int, q: int) -> DgpParams:
    d = rng.uniform(0.0, 0.5, m)
    g = rng.uniform(0.0, 0.5, m - 1)
    v = rng.uniform(0.0, 0.5, m)
    A = np.diag(d) + np.diag(g, 1)
    # triangular: the eigenvalues are the diagonal entries
    assert np.max(np.abs(np.diag(A))) <= 0.5
    b1, b2 = rng.standard_normal(m), rng.standard_normal(m)
    c1, c2 = rng.standard_normal(q), rng.standard_normal(q)
    return DgpParams(A, v, b1, b2, c1, c2)


def simulate_panels(params: DgpParams, rng: np.random.Generator, T: int, sigma_e: float,
                    burn_in: int = BURN_IN) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Raw (z, y, f) with ``T`` kept rows after ``burn_in`` discarded ones."""
    m, q = params.A.shape[0], params.c1.shape[0]
    N = T + burn_in + 1
    eps = rng.standard_normal((N, m)) * np.sqrt(params.v)
    z = np.zeros((N, m))
    At = params.A.T
    for t in range(1, N):
        z[t] = z[t - 1] @ At + eps[t]
    f = z @ params.b1
    f[1:] += z[:-1] @ params.b2
    y = np.outer(f, params.c1)
    y[1:] += np.outer(f[:-1], params.c2)
    y += sigma_e * rng.standard_normal((N, q))
    keep = slice(N - T, N)
    return z[keep], y[keep], f[keep]


def replication_rng(seed: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(rep)]))


_SHARED_PARAMS: dict[int, DgpParams] = {}


def gen_replication(cfg: SimConfig, rep_seed: int, sigma_e: float | None = None,
                    rep: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Raw (z, y) panels of ``T_total`` rows for one replication.

    The stream depends only on ``(rep_seed, rep)``; for a given replication the
    noise draws are shared across noise levels, which only rescale them.
    """
    sigma = cfg.sigma_e[0] if sigma_e is None else float(sigma_e)
    rng = replication_rng(rep_seed, rep)
    if cfg.redraw_loadings:
        params = draw_params(rng, cfg.m, cfg.q)
    else:
        if rep_seed not in _SHARED_PARAMS:
            _SHARED_PARAMS[rep_seed] = draw_params(replication_rng(rep_seed, 2**31 - 1), cfg.m, cfg.q)
        params = _SHARED_PARAMS[rep_seed]
    z, y, _ = simulate_panels(params, rng, cfg.T_total, sigma, cfg.burn_in)
    return z, y


# ---------------------------------------------------------------- experiment

@dataclass(frozen=True)
class _Task:
    cfg: SimConfig
    rep: int
    sigma: float
    cv: object
    solver: object


def _standardize_first(a: np.ndarray, rows: int) -> np.ndarray:
    mu = a[:rows].mean(axis=0)
    sd = a[:rows].std(axis=0, ddof=1)
    return (a - mu) / sd


def run_replication(task: _Task) -> dict:
    """One replication at one noise level; returns a JSON-ready record."""
    from . import baseline, model as ccfm, selection

    cfg = task.cfg
    z, y = gen_replication(cfg, cfg.seed, task.sigma, task.rep)
    n_fit = cfg.T_total - 1
    zs, ys = _standardize_first(z, n_fit), _standardize_first(y, n_fit)
    h = 1
    win = selection.Windows(cfg.n_train, cfg.n_val, cfg.T_total - cfg.n_train - cfg.n_val, h)
    origin = cfg.T_total - 1 - h
    target = ys[origin + h]
    norm = cfg.q if cfg.per_series else 1
    rec = {"rep": task.rep, "sigma": task.sigma}
    for method in cfg.methods:
        try:
            if method == "ccf":
                report = selection.select_components(ys, zs, task.cv, win, task.solver)
                model = selection.refit(report, ys, zs, task.cv, origin - 1, task.solver)
                pred = ccfm.forecast(model, ys, zs, origin, raw=False).standardized
                rec["ccf_s_hat"] = report.s_hat
                rec["ccf_schedule"] = [list(s) for s in report.schedule]
            elif method == "sdpca":
                m = baseline.sdpca_fit(ys, zs, h, win.train_hi, win.val1, refit_hi=origin - 1)
                pred = baseline.sdpca_forecast(m, zs, origin)
            else:
                raise ConfigError(f"unknown method {method!r}")
            rec[method] = float(np.sum((target - pred) ** 2)) / norm
        except (CcfError, np.linalg.LinAlgError, FloatingPointError) as exc:
            if isinstance(exc, ConfigError):
                raise
            logger.warning("replication %d sigma %g: %s failed (%s)", task.rep, task.sigma, method, exc)
            rec[method] = None
    return rec


@dataclass
class SimResult:
    config: SimConfig
    records: list[dict]
    fmse: dict[tuple[str, float], float] = field(default_factory=dict)
    se: dict[tuple[str, float], float] = field(default_factory=dict)
    failures: dict[tuple[str, float], int] = field(default_factory=dict)

    def ratio(self, sigma: float, num: str = "sdpca", den: str = "ccf") -> float:
        return self.fmse[(num, sigma)] / self.fmse[(den, sigma)]

    def to_csv(self) -> str:
        sig = self.config.sigma_e
        lines = ["row," + ",".join(repr(s) for s in sig)]
        for method in self.config.methods:
            lines.append(f"FMSE({method})," + ",".join(repr(self.fmse[(method, s)]) for s in sig))
        for method in self.config.methods:
            lines.append(f"SE({method})," + ",".join(repr(self.se[(method, s)]) for s in sig))
        if {"ccf", "sdpca"} <= set(self.config.methods):
            lines.append("FMSE(sdpca)/FMSE(ccf)," + ",".join(repr(self.ratio(s)) for s in sig))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        cfg = asdict(self.config)
        summary = [{"method": m, "sigma": s, "fmse": self.fmse[(m, s)], "se": self.se[(m, s)],
                    "failures": self.failures[(m, s)]}
                   for m in self.config.methods for s in self.config.sigma_e]
        return json.dumps({"config": cfg, "summary": summary, "records": self.records},
                          sort_keys=True, indent=1)


def aggregate(cfg: SimConfig, records: list[dict]) -> SimResult:
    records = sorted(records, key=lambda r: (r["sigma"], r["rep"]))
    res = SimResult(cfg, records)
    for method in cfg.methods:
        for s in cfg.sigma_e:
            vals = [r[method] for r in records if r["sigma"] == s]
            ok = np.array([v for v in vals if v is not None], dtype=float)
            fails = len(vals) - ok.size
            if fails > cfg.max_failure_rate * len(vals):
                raise CcfError(f"{method} failed in {fails} of {len(vals)} replications at sigma={s}")
            res.failures[(method, s)] = fails
            res.fmse[(method, s)] = float(ok.mean())
            res.se[(method, s)] = float(ok.std(ddof=1) / math.sqrt(ok.size)) if ok.size > 1 else float("nan")
    return res


def run_experiment(cfg: SimConfig, cv_cfg=None, solver_cfg=None, threads: int = 1,
                   progress=None) -> SimResult:
    """Run every (replication, noise level) pair and aggregate the squared
    forecast errors of the last observation."""
    from .selection import CvConfig
    from .solver import SolverConfig

    cv_cfg = cv_cfg or CvConfig(h=1, seed=cfg.seed)
    solver_cfg = solver_cfg or SolverConfig()
    tasks = [_Task(cfg, rep, s, cv_cfg, solver_cfg) for s in cfg.sigma_e for rep in range(cfg.reps)]
    records = []
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            for rec in pool.map(run_replication, tasks):
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        for task in tasks:
            rec = run_replication(task)
            records.append(rec)
            if progress:
                progress(rec)
    return aggregate(cfg, records)
