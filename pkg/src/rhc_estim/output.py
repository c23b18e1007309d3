"""Run artifacts: trajectory CSV, gnuplot script and manifest."""

import csv
import json
import platform
from importlib import metadata
from pathlib import Path

import numpy as np

from .scenario import dumps, scenario_to_dict


def csv_columns(n, p, noise=False):
    cols = (["t"] + [f"x{i + 1}" for i in range(n)] + [f"y{i + 1}" for i in range(n)]
            + ["e_norm"] + [f"theta_est_{i + 1}" for i in range(p)]
            + [f"theta_true_{i + 1}" for i in range(p)] + ["V", "F_norm", "T_horizon"])
    return cols + ["eta"] if noise else cols


def trajectory_matrix(table):
    cols = [table.t[:, None], table.x, table.y, table.e_norm[:, None], table.theta_est,
            table.theta_true, table.V[:, None], table.F_norm[:, None], table.T_horizon[:, None]]
    if table.eta is not None:
        cols.append(table.eta[:, None])
    return np.hstack(cols)


def write_trajectory_csv(table, path):
    """One row per sample with 17 significant digits; ``eta`` only for noisy runs."""
    if len(table) == 0:
        raise ValueError("trajectory table is empty")
    header = csv_columns(table.x.shape[1], table.theta_est.shape[1], table.eta is not None)
    np.savetxt(path, trajectory_matrix(table), fmt="%.17g", delimiter=",",
               header=",".join(header), comments="")


def read_trajectory_csv(path):
    """Header list and data matrix of a trajectory CSV."""
    with open(path, newline="") as fh:
        header = next(csv.reader(fh), None)
    if not header:
        raise ValueError(f"{path}: empty trajectory file")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def emit_plot_script(table_path, out_dir):
    """Write ``plot.gp``: drive vs response per state, estimate vs truth per parameter."""
    table_path = Path(table_path)
    with open(table_path, newline="") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        first = next(rows, None)
    if not header or first is None:
        raise ValueError(f"{table_path}: no samples to plot")
    col = {name: i + 1 for i, name in enumerate(header)}
    n = sum(1 for h in header if h.startswith("x") and h[1:].isdigit())
    p = sum(1 for h in header if h.startswith("theta_est_"))
    noisy = "eta" in col
    panels = n + p + (1 if noisy else 0)

    lines = [
        "# gnuplot script; run with: gnuplot plot.gp",
        "set terminal pngcairo size 900,%d" % (220 * panels),
        "set output 'trajectory.png'",
        "set datafile separator ','",
        "set key top right",
        "set xlabel 't'",
        f"set multiplot layout {panels},1",
        f"data = '{table_path.name}'",
    ]
    for i in range(1, n + 1):
        lines += [f"set ylabel 'state {i}'",
                  f"plot data using {col['t']}:{col[f'x{i}']} every ::1 with lines title 'drive x{i}', \\",
                  f"     data using {col['t']}:{col[f'y{i}']} every ::1 with lines title 'response y{i}'"]
    for i in range(1, p + 1):
        lines += [f"set ylabel 'theta {i}'",
                  f"plot data using {col['t']}:{col[f'theta_true_{i}']} every ::1 with lines title 'true', \\",
                  f"     data using {col['t']}:{col[f'theta_est_{i}']} every ::1 with lines title 'estimate'"]
    if noisy:
        lines += ["set ylabel 'noise'",
                  f"plot data using {col['t']}:{col['eta']} every ::1 with steps title 'eta'"]
    lines += ["unset multiplot", ""]
    out = Path(out_dir) / "plot.gp"
    out.write_text("\n".join(lines))
    return out


def versions():
    out = {"python": platform.python_version()}
    for dist in ("artifact", "numpy", "scipy", "numba"):
        try:
            out[dist] = metadata.version(dist)
        except metadata.PackageNotFoundError:
            out[dist] = None
    return out


def write_manifest(scenario, table, out_dir, files):
    """Record the scenario echo, seed and library versions next to the outputs."""
    out_dir = Path(out_dir)
    (out_dir / "scenario.toml").write_text(dumps(scenario))
    doc = {
        "scenario": scenario_to_dict(scenario),
        "seed": int(scenario.seed),
        "rows": len(table),
        "failure": table.failure,
        "files": sorted(files) + ["scenario.toml"],
        "versions": versions(),
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
