"""The twelve acceptance criteria, one test each (criterion 9 has a quick and a
full profile). Each test reports a PASS/FAIL line in the terminal summary."""
import json
import time

import numpy as np
import pytest
import scipy.linalg

from conftest import angle, ar_panel, noiseless
from ccf import model as ccfm
from ccf.cli import main as cli_main
from ccf.objective import (ComponentParams, grad_profiled, gamma_ls, loss, make_problem,
                           profiled_loss, regularized_loss, target_matrix)
from ccf.selection import CvConfig, select_components
from ccf.simulate import SimConfig, run_experiment
from ccf.solver import (SolverConfig, critical_point_certificate, fixed_point_fit_g1,
                        fixed_point_fit_g2, fixed_point_step, init_redundancy, moments, proximal_fit,
                        unit)
from synthetic import write_price_csv


def _mismatch(a, b):
    a, b = unit(a), unit(b)
    return float(np.linalg.norm(a - np.sign(a @ b) * b))


def _fd(fun, beta, step=1e-6):
    out = np.empty_like(beta)
    for i in range(beta.size):
        e = np.zeros_like(beta)
        e[i] = step
        out[i] = (fun(beta + e) - fun(beta - e)) / (2 * step)
    return out


def _component_dgp(rng, T, m, q, c, k, beta, gamma, noise):
    z = ar_panel(rng, T, m)
    f = np.full(T, np.nan)
    f[c:] = np.array([np.concatenate([z[t - j] for j in range(c + 1)]) @ beta for t in range(c, T)])
    y = noise * rng.standard_normal((T, q))
    for t in range(c + k, T - 1):
        y[t + 1] += gamma @ f[t - np.arange(k + 1)]
    return z, y


def _random_problem(seed, p, q, lam, loss_kind="g1"):
    rng = np.random.default_rng(seed)
    m, c = {5: (5, 0), 20: (10, 1), 60: (20, 2)}[p]
    T = 150
    z = ar_panel(rng, T, m)
    y = z[:, :1] @ rng.standard_normal((1, q)) + rng.standard_normal((T, q))
    return make_problem(z, target_matrix(y, 1), c, 1, h=1, loss=loss_kind, lam=lam)


def _fifty_runs():
    runs = []
    grid = [(p, q, lam) for p in (5, 20, 60) for q in (1, 3, 10) for lam in (0.0, 0.1, 1.0)]
    for i in range(50):
        p, q, lam = grid[i % len(grid)]
        prob = _random_problem(i, p, q, lam)
        params, trace = proximal_fit(prob, cfg=SolverConfig(seed=i))
        runs.append((prob, params, trace))
    return runs


@pytest.fixture(scope="module")
def fifty_runs():
    return _fifty_runs()


def test_criterion_01_descent(criterion, fifty_runs):
    with criterion(1, "descent of the proximal iteration") as cr:
        worst, steps = -np.inf, 0
        for prob, params, trace in fifty_runs:
            path = np.asarray(trace.objective_path)
            worst = max(worst, float(np.max(np.diff(path), initial=-np.inf)))
            steps += path.size - 1
            # every accepted step strictly decreases the objective
            assert np.all(np.diff(path) < 0)
            assert path[-1] == pytest.approx(regularized_loss(params.beta, prob), rel=1e-10)
        cr.detail = f"50 problems, {steps} steps, largest step change {worst:.3g}"


def test_criterion_02_critical_point_limit(criterion, fifty_runs):
    with criterion(2, "converged runs pass the critical-point certificate") as cr:
        converged = [(prob, params) for prob, params, trace in fifty_runs if trace.termination == "converged"]
        failures = sum(not critical_point_certificate(params.beta, prob, tol=1e-5).certified
                       for prob, params in converged)
        cr.detail = f"{len(converged)} converged runs, {failures} failures"
        assert converged and failures == 0


def test_criterion_03_fixed_point_self_consistency(criterion):
    with criterion(3, "fixed-point self-consistency") as cr:
        worst_dir, worst_gamma, n = 0.0, 0.0, 0
        for seed in range(5):
            rng = np.random.default_rng(seed)
            beta = unit(rng.standard_normal(10))
            gamma = rng.uniform(1, 2, (4, 2))
            z, y = _component_dgp(rng, 300, 5, 4, 1, 1, beta, gamma, 0.5)
            for kind, fit in (("g1", fixed_point_fit_g1), ("g2", fixed_point_fit_g2)):
                prob = make_problem(z, target_matrix(y, 1), 1, 1, h=1, loss=kind)
                params, trace = fit(prob, cfg=SolverConfig(epsilon=1e-11, max_iter=20000))
                assert trace.termination == "converged"
                worst_dir = max(worst_dir, _mismatch(fixed_point_step(params.beta, prob), params.beta))
                worst_gamma = max(worst_gamma, float(np.max(np.abs(params.gamma - gamma_ls(params.beta, prob)))))
                n += 1
        cr.detail = f"{n} fits, direction mismatch {worst_dir:.2e}, gamma gap {worst_gamma:.2e}"
        assert worst_dir < 1e-6 and worst_gamma < 1e-8


def test_criterion_04_gradients(criterion):
    with criterion(4, "analytic gradients match central differences") as cr:
        worst = 0.0
        for kind in ("g1", "g2"):
            for seed in range(20):
                rng = np.random.default_rng(100 + seed)
                m, q, c, k = 3, 1 + seed % 3, seed % 2, seed % 3
                z = ar_panel(rng, 80, m)
                y = z[:, :1] @ rng.standard_normal((1, q)) + rng.standard_normal((80, q))
                prob = make_problem(z, target_matrix(y, 1), c, k, h=1, loss=kind)
                beta = unit(rng.standard_normal(prob.p))
                fd = _fd(lambda b: profiled_loss(b, prob), beta)
                rel = float(np.max(np.abs(grad_profiled(beta, prob) - fd)) / np.max(np.abs(fd)))
                worst = max(worst, rel)
        cr.detail = f"40 instances, worst relative error {worst:.2e}"
        assert worst < 1e-5


def test_criterion_05_static_equivalence(criterion):
    with criterion(5, "static canonical and redundancy equivalence") as cr:
        rng = np.random.default_rng(5)
        x = rng.standard_normal((400, 5)) @ rng.standard_normal((5, 5))
        y = 0.5 * x @ rng.standard_normal((5, 3)) + rng.standard_normal((400, 3))
        start = unit(rng.standard_normal(5))
        cfg = SolverConfig(epsilon=1e-13, max_iter=20000)
        p2 = make_problem(x, y, 0, 0, h=0, loss="g2")
        Sxx, Sxy, Syy = moments(p2)
        rho2 = scipy.linalg.eigh(Sxy @ np.linalg.solve(Syy, Sxy.T), Sxx, eigvals_only=True)[-1]
        gaps = []
        for fit in (proximal_fit, fixed_point_fit_g2):
            params, _ = fit(p2, start, cfg)
            f = p2.X @ params.beta
            fitted = p2.Y @ np.linalg.lstsq(p2.Y, f, rcond=None)[0]
            gaps.append(abs((fitted @ fitted) / (f @ f) - rho2))
        p1 = make_problem(x, y, 0, 0, h=0, loss="g1")
        angles = [angle(fit(p1, start, cfg)[0].beta, init_redundancy(p1))
                  for fit in (proximal_fit, fixed_point_fit_g1)]
        cr.detail = f"canonical gap {max(gaps):.2e}, redundancy angle {max(angles):.2e}"
        assert max(gaps) < 1e-6 and max(angles) < 1e-4


def test_criterion_06_homogeneity(criterion):
    with criterion(6, "homogeneity and normalization") as cr:
        worst_loss, worst_fit = 0.0, 0.0
        for seed in range(10):
            for kind in ("g1", "g2"):
                prob = _random_problem(seed, 20, 3, 0.0, kind)
                rng = np.random.default_rng(seed)
                beta, G = rng.standard_normal(prob.p), rng.standard_normal((3, 2))
                base = loss(ComponentParams(beta, G), prob)
                params, _ = proximal_fit(prob)
                assert abs(np.linalg.norm(params.beta) - 1) < 1e-10
                fitted = prob.windows(params.beta) @ params.gamma.T
                for gam in (0.5, 2.0, 10.0):
                    worst_loss = max(worst_loss, abs(loss(ComponentParams(gam * beta, G / gam), prob) - base)
                                     / max(1.0, abs(base)))
                    other = prob.windows(gam * params.beta) @ (params.gamma / gam).T
                    worst_fit = max(worst_fit, float(np.max(np.abs(other - fitted))))
        cr.detail = f"loss gap {worst_loss:.1e}, fitted-value gap {worst_fit:.1e}"
        assert worst_loss <= 1e-12 and worst_fit <= 1e-10


def _two_factor(seed, T=400, m=10, q=30, noise=1.0):
    rng = np.random.default_rng(seed)
    z = ar_panel(rng, T, m)
    B = np.linalg.qr(rng.standard_normal((m, 2)))[0]
    G = np.column_stack([rng.uniform(1.0, 2.0, q), rng.uniform(0.5, 1.5, q) * rng.choice([-1, 1], q)])
    y = noise * rng.standard_normal((T, q))
    y[1:] += (z @ B)[:-1] @ G.T
    return y, z


def test_criterion_07_oracle_recovery(criterion):
    with criterion(7, "oracle recovery and two-factor selection") as cr:
        worst_angle, worst_err = 0.0, 0.0
        for seed, (c, k) in enumerate([(0, 0), (1, 1), (2, 0), (0, 2), (1, 2)]):
            rng = np.random.default_rng(seed)
            z, y, b0, g0 = noiseless(rng, T=151, m=4, q=3, c=c, k=k)
            prob = make_problem(z[:150], target_matrix(y[:150], 1), c, k, h=1)
            params, _ = proximal_fit(prob, unit(b0 + 0.2 * rng.standard_normal(b0.size)),
                                     SolverConfig(max_iter=5000))
            worst_angle = max(worst_angle, angle(params.beta, b0))
            model = ccfm.CcfModel([ccfm.CoreComponent(params.beta, params.gamma, c, k)])
            fc = ccfm.forecast(model, y[:150], z[:150], raw=False)
            worst_err = max(worst_err, float(np.linalg.norm(fc.standardized - y[150])))
        s_hats = [select_components(*_two_factor(seed), CvConfig(max_components=4)).s_hat
                  for seed in range(20)]
        share = float(np.mean(np.array(s_hats) == 2))
        cr.detail = (f"angle {worst_angle:.1e}, forecast error {worst_err:.1e}, "
                     f"two components chosen in {share:.0%} of 20 seeds")
        assert worst_angle < 1e-4 and worst_err < 1e-6 and share >= 0.8


def test_criterion_08_consistency(criterion):
    with criterion(8, "consistency of the loading estimate") as cr:
        rng0 = np.random.default_rng(8)
        beta = unit(rng0.standard_normal(10))
        gamma = rng0.uniform(0.5, 1.5, (4, 2))
        medians = []
        for T in (200, 800, 3200):
            angles = []
            for seed in range(20):
                rng = np.random.default_rng([T, seed])
                z, y = _component_dgp(rng, T, 5, 4, 1, 1, beta, gamma, 1.0)
                prob = make_problem(z, target_matrix(y, 1), 1, 1, h=1)
                params, _ = proximal_fit(prob, cfg=SolverConfig(max_iter=2000))
                angles.append(angle(params.beta, beta))
            medians.append(float(np.median(angles)))
        cr.detail = "median angles " + ", ".join(f"{v:.4f}" for v in medians)
        assert medians[0] > medians[1] > medians[2] and medians[2] < 0.1


def _table_run(reps):
    t0 = time.time()
    res = run_experiment(SimConfig(reps=reps))
    return res, time.time() - t0


def test_criterion_09_monte_carlo_smoke(criterion):
    with criterion(9, "Monte Carlo smoke profile (10 replications)") as cr:
        res, secs = _table_run(10)
        a, b = res.fmse[("ccf", 0.3)], res.fmse[("ccf", 3.0)]
        r1, r2 = res.ratio(0.3), res.ratio(3.0)
        cr.detail = f"CCF {a:.4f} / {b:.4f}, ratios {r1:.3f} / {r2:.3f}, {secs:.0f} s"
        assert abs(a - 0.4457) <= 0.2 and abs(b - 0.5472) <= 0.2
        assert r1 > 1.0 and r2 > 1.0 and secs < 180


def test_criterion_09_monte_carlo_full(criterion):
    with criterion(9.5, "Monte Carlo table at 100 replications") as cr:
        res, secs = _table_run(100)
        a, b = res.fmse[("ccf", 0.3)], res.fmse[("ccf", 3.0)]
        r1, r2 = res.ratio(0.3), res.ratio(3.0)
        cr.detail = (f"CCF {a:.4f}±{res.se[('ccf', 0.3)]:.4f} / {b:.4f}±{res.se[('ccf', 3.0)]:.4f}, "
                     f"sdPCA {res.fmse[('sdpca', 0.3)]:.4f} / {res.fmse[('sdpca', 3.0)]:.4f}, "
                     f"ratios {r1:.3f} / {r2:.3f}, {secs:.0f} s")
        assert abs(a - 0.4457) <= 0.10 and abs(b - 0.5472) <= 0.12
        assert r1 > 1.2 and r2 > 1.1


@pytest.fixture(scope="module")
def price_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("prices")
    data = root / "panel.csv"
    ycols, zcols = write_price_csv(data, seed=0, T=264)
    common = ["--data", str(data), "--y-cols", ",".join(ycols), "--z-cols", ",".join(zcols)]
    outputs, codes = {}, {}
    for cmd, files in (("cv", ("report.json", "model.json", "summary.txt")), ("bench", ("bench.csv", "report.json"))):
        for rep in ("a", "b"):
            out = root / f"{cmd}_{rep}"
            codes[(cmd, rep)] = cli_main([cmd, *common, "--out", str(out)])
            outputs[(cmd, rep)] = {f: (out / f).read_bytes() for f in files if (out / f).exists()}
    # fit and forecast from the cross-validated model
    for rep in ("a", "b"):
        out = root / f"forecast_{rep}"
        codes[("forecast", rep)] = cli_main(["forecast", "--data", str(data), "--model",
                                             str(root / "cv_a" / "model.json"), "--out", str(out)])
        outputs[("forecast", rep)] = {"forecast.csv": (out / "forecast.csv").read_bytes()}
        out = root / f"fit_{rep}"
        codes[("fit", rep)] = cli_main(["fit", *common, "--schedule", "1,0,0.0;0,1,0.01", "--out", str(out)])
        outputs[("fit", rep)] = {"model.json": (out / "model.json").read_bytes()}
        out = root / f"sim_{rep}"
        codes[("simulate", rep)] = cli_main(["simulate", "--reps", "2", "--sigma", "0.3,3", "--cmax", "1",
                                             "--kmax", "1", "--grid", "3", "--out", str(out)])
        outputs[("simulate", rep)] = {f: (out / f).read_bytes() for f in ("table.csv", "records.json")}
    return outputs, codes


def test_criterion_10_price_workflow(criterion, price_runs):
    with criterion(10, "cross-validation workflow on a 264 x 49 panel") as cr:
        outputs, codes = price_runs
        assert codes[("cv", "a")] == 0 and codes[("bench", "a")] == 0
        report = json.loads(outputs[("cv", "a")]["report.json"])
        assert report["splits"] == {"T1": 184, "T2": 40, "T3": 40}
        assert report["s_hat"] >= 1 and len(report["stages"]) >= report["s_hat"]
        for st in report["stages"]:
            assert {"c", "k", "lambda", "fmse", "fmse_surface", "lambda_grid", "accepted"} <= set(st)
        bench = dict(l.split(",") for l in outputs[("bench", "a")]["bench.csv"].decode().splitlines()[1:])
        sd, cc = float(bench["sdpca"]), float(bench["ccf"])
        assert np.isfinite(sd) and np.isfinite(cc) and cc == pytest.approx(report["fmsecv"])
        cr.detail = f"FMSECV sdPCA {sd:.4f}, CCF {cc:.4f}, s_hat {report['s_hat']}"


def test_criterion_11_algorithm_agreement(criterion):
    with criterion(11, "proximal and fixed-point agreement at zero penalty") as cr:
        worst = 0.0
        for seed in range(10):
            rng = np.random.default_rng(1000 + seed)
            beta = unit(rng.standard_normal(10))
            gamma = rng.uniform(1, 2, (3, 2))
            z, y = _component_dgp(rng, 200, 5, 3, 1, 1, beta, gamma, 0.5)
            prob = make_problem(z, target_matrix(y, 1), 1, 1, h=1)
            cfg = SolverConfig(max_iter=5000)
            a = profiled_loss(proximal_fit(prob, cfg=cfg)[0].beta, prob)
            b = profiled_loss(fixed_point_fit_g1(prob, cfg=cfg)[0].beta, prob)
            worst = max(worst, abs(a - b))
        cr.detail = f"10 seeds, largest objective gap {worst:.1e}"
        assert worst < 1e-6


def test_criterion_12_determinism(criterion, price_runs):
    with criterion(12, "byte-identical reruns of every command") as cr:
        outputs, codes = price_runs
        cmds = sorted({cmd for cmd, _ in codes})
        assert all(code == 0 for code in codes.values())
        differing = [cmd for cmd in cmds if outputs[(cmd, "a")] != outputs[(cmd, "b")]]
        cr.detail = f"commands {', '.join(cmds)}; differing: {differing or 'none'}"
        assert not differing and all(outputs[(cmd, "a")] for cmd in cmds)
