# %% [markdown]
# Two environments, two-sided termination
# ---------------------------------------
# Premium rates c + 0.1 x, diffusion 0.5, environment-dependent claims.
# Termination: an Erlang(2, 1) horizon (non-ruin), a cumulative Erlang(2, 4)
# grace period below zero and a bankruptcy rate 0.5 |x| (both ruin).

# %%
import numpy as np

from hybridrisk.augment import build_generalized_omega
from hybridrisk.grid import discretize
from hybridrisk.jumps import jump_intensity_density
from hybridrisk.matrixkit import ErlangClock, PhaseType
from hybridrisk.models import linear_premium, markov_modulated
from hybridrisk.simulate import estimate_descriptors
from hybridrisk.solver import solve

model = markov_modulated([[-0.5, 0.5], [0.5, -0.5]],
                         [linear_premium(1.0, 0.1), linear_premium(1.5, 0.1)],
                         [1.0, 0.5], [PhaseType.exponential(2.0), PhaseType.exponential(1.0)],
                         [0.5, 0.5])
aug = build_generalized_omega(model, horizon=ErlangClock(2, 1.0), grace=PhaseType.erlang(2, 4.0),
                              base_omega=lambda s, x: 0.5 * np.abs(x))
print(aug.n_states, "augmented states")

# %%
# jump kernel from env0 at level 2: claims land back in env0 only
y = np.linspace(0.1, 3.0, 5)
print(np.round(jump_intensity_density(model, 2.0, 0, None, y), 4))

# %%
ds = solve(discretize(aug, -8.0, 10.0, 1800), 1.0, 0, extrapolate=True)
mc = estimate_descriptors(aug, 1.0, 0, 20000, 2e-3, -8.0, 10.0, seed=3)
for name in ("kill_minus", "kill_plus", "lower", "upper"):
    p = mc.total(name)
    print(f"{name:10s} solver {ds.total(name):.4f}  MC {p:.4f} +- {np.sqrt(p * (1 - p) / 20000):.4f}")

# %%
# where ruin happens: deficit density aggregated over clock stages
y, dens = ds.aggregate().psi_minus_density()
print(np.round(np.interp([0.1, 0.5, 1.0, 2.0], y, dens.sum(axis=1)), 4))
