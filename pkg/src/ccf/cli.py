"""Command-line interface: ``ccf {fit,forecast,cv,simulate,bench}``.

Settings come from an optional JSON config file; command-line flags override
it. All outputs are written at the end of a command, each through a temporary
file, so a failed run leaves no partial artifacts. Exit codes: 0 success,
2 configuration or data error, 3 schema mismatch, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import baseline, kernels
from . import model as ccfm
from . import selection, simulate
from .errors import CcfError, ConfigError, SchemaError
from .panel import TimeSeriesPanel, read_csv, split_lengths, standardize
from .solver import SolverConfig

logger = logging.getLogger("ccf")


@dataclass
class RunConfig:
    data: str | None = None
    y_columns: list[str] | None = None
    z_columns: list[str] | None = None
    horizon: int = 1
    loss: str = "g1"
    alpha: float = 0.70
    c_max: int = 3
    k_max: int = 3
    lambda_max: float | None = None
    grid: int = 10
    max_components: int = 10
    refit: bool = True
    ar_select: bool = False
    seed: int = 0
    threads: int = 1
    out: str = "."
    schedule: list | None = None
    model: str | None = None
    reps: int = 100
    sigma: list[float] = field(default_factory=lambda: [0.3, 3.0])
    redraw_loadings: bool = True

    def validate(self):
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.loss not in ("g1", "g2"):
            raise ConfigError(f"unknown loss {self.loss!r}")

    def cv_config(self) -> selection.CvConfig:
        return selection.CvConfig(alpha=self.alpha, c_max=self.c_max, k_max=self.k_max,
                                  lambda_max=self.lambda_max, J=self.grid, h=self.horizon,
                                  loss=self.loss, max_components=self.max_components,
                                  refit=self.refit, seed=self.seed, ar_select=self.ar_select,
                                  threads=self.threads)

    def solver_config(self) -> SolverConfig:
        return SolverConfig(seed=self.seed)


_FLAG_TO_FIELD = {"cmax": "c_max", "kmax": "k_max", "lambda_max": "lambda_max"}


def load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    return doc


def build_config(args: argparse.Namespace) -> RunConfig:
    values = load_config(getattr(args, "config", None))
    for key, val in vars(args).items():
        if key in ("config", "command", "verbose") or val is None:
            continue
        values[_FLAG_TO_FIELD.get(key, key)] = val
    try:
        cfg = RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def _split_names(s):
    if s is None or isinstance(s, list):
        return s
    return [c.strip() for c in s.split(",") if c.strip()]


def _parse_schedule(s):
    if s is None or isinstance(s, list):
        return s
    out = []
    for part in s.split(";"):
        bits = [b.strip() for b in part.split(",")]
        if len(bits) != 3:
            raise ConfigError(f"schedule entries are 'c,k,lambda', got {part!r}")
        out.append([int(bits[0]), int(bits[1]), float(bits[2])])
    return out


def load_panels(cfg: RunConfig) -> tuple[TimeSeriesPanel, TimeSeriesPanel]:
    if not cfg.data:
        raise ConfigError("--data is required")
    if not os.path.exists(cfg.data):
        raise ConfigError(f"data file not found: {cfg.data}")
    panel = read_csv(cfg.data)
    ycols = _split_names(cfg.y_columns)
    if not ycols:
        raise ConfigError("y_columns must name at least one target column")
    zcols = _split_names(cfg.z_columns) or list(panel.labels)
    return panel.columns(ycols), panel.columns(zcols)


def _standardized(ypan, zpan, rows):
    ys, yinfo = standardize(ypan, rows)
    zs, zinfo = standardize(zpan, rows)
    return ys.values, zs.values, yinfo, zinfo


def _write_all(outputs: dict[Path, str]) -> None:
    for path in outputs:
        path.parent.mkdir(parents=True, exist_ok=True)
    for path, text in outputs.items():
        ccfm.atomic_write(path, text)


# ------------------------------------------------------------------ commands

def cmd_fit(cfg: RunConfig) -> int:
    schedule = _parse_schedule(cfg.schedule)
    if not schedule:
        raise ConfigError("fit needs a schedule: --schedule 'c,k,lambda;...' or the config key")
    ypan, zpan = load_panels(cfg)
    y, z, yinfo, zinfo = _standardized(ypan, zpan, None)
    model = ccfm.fit_model(y, z, schedule, cfg.horizon, cfg.loss, cfg.solver_config(),
                           y_info=yinfo, z_info=zinfo, y_labels=ypan.labels, z_labels=zpan.labels)
    out = Path(cfg.out)
    _write_all({out / "model.json": ccfm.dumps(model)})
    print(f"fitted {model.s} component(s); model written to {out / 'model.json'}")
    return 0


def cmd_forecast(cfg: RunConfig, horizon_given: bool) -> int:
    if not cfg.model:
        raise ConfigError("--model is required")
    if not os.path.exists(cfg.model):
        raise ConfigError(f"model file not found: {cfg.model}")
    model = ccfm.load_model(cfg.model)
    if horizon_given and cfg.horizon != model.h:
        raise SchemaError(f"model was fitted for h={model.h}, not h={cfg.horizon}")
    if not cfg.data:
        raise ConfigError("--data is required")
    panel = read_csv(cfg.data)
    try:
        ypan, zpan = panel.columns(list(model.y_labels)), panel.columns(list(model.z_labels))
    except ConfigError as exc:
        raise SchemaError(f"data does not match the model: {exc}") from None
    fc = ccfm.forecast(model, ypan.values, zpan.values)
    lines = ["series,standardized,original"]
    for name, s, o in zip(model.y_labels, fc.standardized, fc.original):
        lines.append(f"{name},{float(s)!r},{float(o)!r}")
    out = Path(cfg.out)
    text = "\n".join(lines) + "\n"
    _write_all({out / "forecast.csv": text})
    sys.stdout.write(text)
    return 0


def _cv_pipeline(cfg: RunConfig):
    ypan, zpan = load_panels(cfg)
    cv = cfg.cv_config()
    s = split_lengths(ypan.T, cfg.alpha)
    # scale with the data that precede the second validation block
    y, z, yinfo, zinfo = _standardized(ypan, zpan, slice(0, s.T1 + s.T2))
    solver = cfg.solver_config()
    report = selection.run_cv(y, z, cv, solver)
    return ypan, zpan, y, z, yinfo, zinfo, cv, solver, report


def cmd_cv(cfg: RunConfig) -> int:
    ypan, zpan, y, z, yinfo, zinfo, cv, solver, report = _cv_pipeline(cfg)
    model = selection.refit(report, y, z, cv, y.shape[0] - 1 - cfg.horizon, solver,
                            y_info=yinfo, z_info=zinfo, y_labels=ypan.labels, z_labels=zpan.labels)
    w = report.windows
    summary = f"splits {w.T1}/{w.T2}/{w.T3}\n" + report.summary() + "\n"
    out = Path(cfg.out)
    _write_all({out / "report.json": report.to_json(),
                out / "model.json": ccfm.dumps(model),
                out / "summary.txt": summary})
    sys.stdout.write(summary)
    return 0


def cmd_bench(cfg: RunConfig) -> int:
    _, _, y, z, _, _, cv, _, report = _cv_pipeline(cfg)
    sd = baseline.sdpca_fmsecv(y, z, cfg.horizon, report.windows, refit=cfg.refit)
    lines = ["method,fmsecv", f"sdpca,{sd!r}", f"ccf,{report.fmsecv!r}",
             f"ratio,{sd / report.fmsecv!r}"]
    text = "\n".join(lines) + "\n"
    out = Path(cfg.out)
    _write_all({out / "bench.csv": text, out / "report.json": report.to_json()})
    sys.stdout.write(text)
    return 0


def cmd_simulate(cfg: RunConfig) -> int:
    scfg = simulate.SimConfig(reps=cfg.reps, sigma_e=tuple(cfg.sigma), seed=cfg.seed,
                              alpha=cfg.alpha, redraw_loadings=cfg.redraw_loadings)
    cv = replace(cfg.cv_config(), threads=1)
    res = simulate.run_experiment(scfg, cv, cfg.solver_config(), threads=cfg.threads)
    out = Path(cfg.out)
    _write_all({out / "table.csv": res.to_csv(), out / "records.json": res.to_json()})
    sys.stdout.write(res.to_csv())
    return 0


# -------------------------------------------------------------------- parser

def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data")
    common.add_argument("--config")
    common.add_argument("--horizon", type=int)
    common.add_argument("--loss", choices=("g1", "g2"))
    common.add_argument("--cmax", type=int)
    common.add_argument("--kmax", type=int)
    common.add_argument("--lambda-max", type=float, dest="lambda_max")
    common.add_argument("--grid", type=int)
    common.add_argument("--alpha", type=float)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out")
    common.add_argument("--y-cols", dest="y_columns")
    common.add_argument("--z-cols", dest="z_columns")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ccf", description="Core components forecasting")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("fit", parents=[common], help="fit a model with a fixed schedule")
    p.add_argument("--schedule", help="'c,k,lambda;c,k,lambda;...'")
    p = sub.add_parser("forecast", parents=[common], help="forecast from a saved model")
    p.add_argument("--model")
    sub.add_parser("cv", parents=[common], help="cross-validate and fit the selected model")
    p = sub.add_parser("simulate", parents=[common], help="Monte Carlo comparison")
    p.add_argument("--reps", type=int)
    p.add_argument("--sigma", type=lambda s: [float(v) for v in s.split(",")])
    sub.add_parser("bench", parents=[common], help="FMSECV of CCF and sdPCA on a dataset")
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = build_config(args)
        logger.info("kernel backend: %s", kernels.backend_name())
        if args.command == "fit":
            return cmd_fit(cfg)
        if args.command == "forecast":
            return cmd_forecast(cfg, args.horizon is not None)
        if args.command == "cv":
            return cmd_cv(cfg)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        return cmd_bench(cfg)
    except CcfError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except np.linalg.LinAlgError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
