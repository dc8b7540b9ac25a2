# %% [markdown]
# Ruin notions with killing
# -------------------------
# A unit-speed decline from u=1 makes every ruin notion explicit: the
# surplus crosses zero at time 1 and the deficit then grows at unit rate.

# %%
import numpy as np

from hybridrisk.augment import (build_cumulative_parisian, build_erlang_horizon,
                                build_omega, build_poissonian)
from hybridrisk.core import LevelDependentGenerator, RiskModelSpec, StateFunction, StatePartition
from hybridrisk.grid import discretize
from hybridrisk.matrixkit import ErlangClock, PhaseType
from hybridrisk.solver import solve

decline = RiskModelSpec(StatePartition((0,)), StateFunction([-1.0]), StateFunction([0.0]),
                        LevelDependentGenerator.constant([[0.0]]), name="decline")

# %%
# ruin before an Exp(1) horizon: the horizon must outlast time 1
g = discretize(build_erlang_horizon(decline, ErlangClock(1, 1.0)), 0.0, 2.0, 2000)
print("before horizon", solve(g, 1.0, 0).total("lower"), "vs", np.exp(-1))

# %%
# Poisson observations at rate 2: the deficit at ruin is Exp(2)
y_show = np.array([0.25, 0.5, 1.0])
for name, aug in [("poisson", build_poissonian(decline, 2.0)),
                  ("parisian Exp(2)", build_cumulative_parisian(decline, PhaseType.exponential(2.0))),
                  ("omega = 2", build_omega(decline, lambda s, x: 2.0 + 0 * x))]:
    y, dens = solve(discretize(aug, -10.0, 2.0, 2000), 1.0, 0).psi_minus_density()
    print(f"{name:16s}", np.round(np.interp(y_show, y, dens[:, 0]), 4))
print("closed form     ", np.round(2 * np.exp(-2 * y_show), 4))

# %%
# Erlang(2, 2) grace: the deficit at ruin follows the grace clock
aug = build_cumulative_parisian(decline, PhaseType.erlang(2, 2.0))
# kills come from the last grace stage, so collapse the stages first
y, dens = solve(discretize(aug, -12.0, 2.0, 4000), 1.0, 0).aggregate().psi_minus_density()
print(np.round(np.interp(y_show, y, dens[:, 0]), 4), np.round(4 * y_show * np.exp(-2 * y_show), 4))
