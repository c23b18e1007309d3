"""Noisy drive plus the independent checks.

First a short noisy run, then the horizon problem at t = 10 s of the
constant scenario is frozen and solved again by brute-force optimisation;
the two costs should agree.
"""

import numpy as np

from rhc_estim.estimator import run_scenario
from rhc_estim.model import lorenz_model
from rhc_estim.ocp import Weights
from rhc_estim.oracle import (direct_ocp, fd_check, field_cost, frozen_from_field, lq_check,
                              snapshot_horizon, sweep_consistency)
from rhc_estim.scenario import builtin_scenario

tab = run_scenario(builtin_scenario("lorenz-const-noise").with_overrides(t_end=15.0))
w = tab.window(10.0, 15.0)
print("held noise std:", tab.eta[1:].std())
print("mean estimate over [10, 15] s:", tab.theta_est[w].mean(axis=0))

print(fd_check(lorenz_model(), Weights.scaled_identity(3, 2), 20).to_text())
print(lq_check().to_text())

const = builtin_scenario("lorenz-const")
snap = run_scenario(const.with_overrides(t_end=10.0), snapshots=(10.0,)).snapshots[10.0]
fld, sw, ctx = snapshot_horizon(const, snap)

# the sweep relation holds up to fourth-order truncation error in tau
for refine in (1, 2, 4):
    err = sweep_consistency(*snapshot_horizon(const, snap, refine)).max_error
    print(f"sweep relation, tau step / {refine}: {err:.2e}")

U, J, info = direct_ocp(frozen_from_field(fld, ctx))
print(f"direct cost {J:.6e}, continuation cost {field_cost(fld, ctx.weights):.6e}, "
      f"{info['iterations']} iterations")
print("largest gap between the two estimate paths:", np.abs(U - fld.theta_bar).max())
