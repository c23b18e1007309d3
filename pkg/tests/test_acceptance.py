"""Acceptance criteria; each test prints one PASS/FAIL line.

Timings exclude one-time kernel compilation, which is cached on disk.
"""

import time

import numpy as np
import pytest

from rhc_estim.cli import SWEEP_REFINE, main
from rhc_estim.ocp import Weights, stationary_theta_bar
from rhc_estim.oracle import (direct_ocp, fd_check, field_cost, frozen_from_field, lq_check,
                              snapshot_horizon, sweep_consistency)
from rhc_estim.output import read_trajectory_csv

from conftest import ACCEPTANCE_LINES

def report(number, ok, text):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {text}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def test_01_stationarity(lorenz):
    rng = np.random.default_rng(1)
    samples = []
    for _ in range(1000):
        B = rng.normal(size=(2, 2))
        R = B @ B.T + 0.1 * np.eye(2)
        samples.append((rng.uniform(-25, 25, 3) + (0, 0, 25), rng.normal(0, 1, 3),
                        R, Weights(np.eye(3), R)))
    t0 = time.perf_counter()
    worst = 0.0
    for y, lam, R, w in samples:
        tb = stationary_theta_bar(y, lam, w, lorenz)
        worst = max(worst, np.linalg.norm(2 * R @ tb + lorenz.D(y).T @ lam))
    el = time.perf_counter() - t0
    ok = worst <= 1e-12 and el < 1.0
    assert report(1, ok, f"max |2R tb + D^T lam| = {worst:.2e} (<= 1e-12), {el:.2f} s (< 1 s)")


def test_02_derivative_consistency(lorenz):
    w = Weights.scaled_identity(3, 2)
    fd_check(lorenz, w, 1)  # warm up compiled helpers
    t0 = time.perf_counter()
    rep = fd_check(lorenz, w, 100)
    el = time.perf_counter() - t0
    ok = rep.max_error <= 1e-6 and el < 2.0
    assert report(2, ok, f"fd_check max rel error = {rep.max_error:.2e} (<= 1e-6), {el:.2f} s (< 2 s)")


def test_03_lq_sweep():
    lq_check(h=0.1)  # warm up
    t0 = time.perf_counter()
    rep = lq_check(1.0, 1.0, 1.0, 1e-3)
    el = time.perf_counter() - t0
    ok = rep.passed and el < 1.0
    assert report(3, ok, f"|S(0) - 2 tanh 1| = {rep.max_error:.2e} (<= 1e-6), {el:.2f} s (< 1 s)")


@pytest.mark.slow
def test_04_sweep_consistency(const_run):
    snap = const_run.table.snapshots[10.0]
    s = const_run.scenario
    t0 = time.perf_counter()
    fld, sw, ctx = snapshot_horizon(s, snap, refine=SWEEP_REFINE)
    rep = sweep_consistency(fld, sw, ctx)
    el = time.perf_counter() - t0
    coarse = sweep_consistency(*snapshot_horizon(s, snap)).max_error
    ok = rep.max_error <= 1e-6 and el < 5.0
    assert report(4, ok, f"sweep relation violation = {rep.max_error:.2e} (<= 1e-6) on "
                         f"{fld.grid.node_count} nodes ({coarse:.1e} on the run grid), {el:.2f} s (< 5 s)")


@pytest.mark.slow
def test_05_residual_decay(const_run):
    tab = const_run.table
    m = tab.window(1.0)
    worst = tab.F_norm[m].max()
    nodes = int(np.floor(tab.T_horizon.max() / const_run.scenario.estimator.dtau_target + 0.5))
    ok = (tab.failure is None and worst <= 1e-3 and const_run.elapsed <= 60.0
          and len(tab) == 5001 and nodes <= 100)
    assert report(5, ok, f"max |F| for t >= 1 = {worst:.2e} (<= 1e-3), {len(tab) - 1} steps, "
                         f"<= {nodes} nodes, {const_run.elapsed:.1f} s (<= 60 s)")


@pytest.mark.slow
def test_06_constant_reproduction(const_run):
    tab = const_run.table
    m = tab.window(30.0)
    e = tab.e_norm[m].max()
    d1 = np.abs(tab.theta_est[m, 0] - 10.0).max()
    d2 = np.abs(tab.theta_est[m, 1] - 8.0 / 3.0).max()
    ok = e <= 1e-2 and d1 <= 0.5 and d2 <= 0.15
    assert report(6, ok, f"t >= 30: max |e| = {e:.1e} (<= 1e-2), max |th1 - 10| = {d1:.1e} (<= 0.5), "
                         f"max |th2 - 8/3| = {d2:.1e} (<= 0.15)")


@pytest.mark.slow
def test_07_time_varying_reproduction(tv_run):
    tab = tv_run.table
    w = tab.window(20.0, 50.0)
    err = tab.theta_est[w, 0] - tab.theta_true[w, 0]
    ratio = np.sqrt(np.mean(err ** 2)) / np.sqrt(np.mean(tab.theta_true[w, 0] ** 2))
    m = tab.window(30.0)
    rel2 = np.abs(tab.theta_est[m, 1] - 8.0 / 3.0).max() / (8.0 / 3.0)
    ok = tab.failure is None and ratio <= 0.10 and rel2 <= 0.05
    assert report(7, ok, f"th1 rms error / rms signal = {ratio:.1%} (<= 10%), "
                         f"max |th2 - 8/3| / (8/3) = {rel2:.2%} (<= 5%)")


@pytest.fixture(scope="module")
def noisy_cli_runs(tmp_path_factory):
    outs = []
    for k in range(2):
        out = tmp_path_factory.mktemp(f"noise{k}")
        code = main(["run", "--scenario", "lorenz-const-noise", "--seed", "42", "--out", str(out)])
        outs.append((code, out))
    return outs


def _window_means(header, data):
    t = data[:, header.index("t")]
    w = (t >= 30.0 - 1e-9) & (t <= 50.0 + 1e-9)
    est = data[w][:, [header.index("theta_est_1"), header.index("theta_est_2")]].mean(axis=0)
    true = data[w][:, [header.index("theta_true_1"), header.index("theta_true_2")]].mean(axis=0)
    return est, true


@pytest.mark.slow
def test_08_noise_robustness(noisy_cli_runs, tv_noise_run):
    code, out = noisy_cli_runs[0]
    header, data = read_trajectory_csv(out / "trajectory.csv")
    assert header[-1] == "eta"
    eta = data[:, -1]
    const_est, const_true = _window_means(header, data)
    tab = tv_noise_run.table
    w = tab.window(30.0, 50.0)
    tv_est, tv_true = tab.theta_est[w].mean(axis=0), tab.theta_true[w].mean(axis=0)
    rel = np.concatenate([np.abs(const_est - const_true) / np.abs(const_true),
                          np.abs(tv_est - tv_true) / np.abs(tv_true)])
    ok = code == 0 and tab.failure is None and np.all(rel <= 0.10)
    assert report(8, ok, f"noise std {np.std(eta[1:]):.2f}: mean-estimate errors over [30, 50] "
                         f"const ({rel[0]:.2%}, {rel[1]:.2%}), tv ({rel[2]:.2%}, {rel[3]:.2%}) (<= 10%)")


@pytest.mark.slow
def test_09_oracle_equivalence(const_run):
    fld, _, ctx = snapshot_horizon(const_run.scenario, const_run.table.snapshots[10.0])
    inst = frozen_from_field(fld, ctx)
    t0 = time.perf_counter()
    U, J, info = direct_ocp(inst)
    el = time.perf_counter() - t0
    Jc = field_cost(fld, ctx.weights)
    rel = abs(J - Jc) / Jc
    ok = rel <= 0.01 and el < 30.0
    assert report(9, ok, f"direct cost {J:.6e} vs continuation {Jc:.6e}: rel diff {rel:.1e} (<= 1%), "
                         f"{el:.2f} s (< 30 s)")


@pytest.mark.slow
def test_10_determinism(noisy_cli_runs):
    (c1, a), (c2, b) = noisy_cli_runs
    same = (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    ok = c1 == 0 and c2 == 0 and same
    assert report(10, ok, "two runs of lorenz-const-noise --seed 42 give byte-identical CSVs"
                  if same else "CSV outputs differ between identical runs")
