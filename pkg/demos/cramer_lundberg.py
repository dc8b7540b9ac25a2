# %% [markdown]
# Classical ruin three ways
# -------------------------
# Compound-Poisson surplus with premium 1, claim rate 1 and Exp(2) claims.
# The claims are embedded as a fluid state drifting at -1, so a claim is a
# sojourn that the time change turns back into a jump.

# %%
import numpy as np

from hybridrisk.augment import build_infinite_horizon
from hybridrisk.grid import discretize
from hybridrisk.matrixkit import PhaseType
from hybridrisk.models import cramer_lundberg, cramer_lundberg_ruin
from hybridrisk.simulate import estimate_descriptors, total_estimate
from hybridrisk.solver import solve

model = cramer_lundberg(1.0, 1.0, PhaseType.exponential(2.0))
aug = build_infinite_horizon(model)
levels = np.array([0.0, 1.0, 2.0, 4.0])
exact = cramer_lundberg_ruin(1.0, 1.0, PhaseType.exponential(2.0), levels)

# %% [markdown]
# Grid solver. Upwind transport has an O(h) bias; `extrapolate=True`
# combines the grid with one twice as coarse to cancel it.

# %%
grid = discretize(aug, 0.0, 60.0, 2000, q=1e-9)
for u, psi in zip(levels, exact):
    plain = solve(grid, u, 0).total("lower")
    rich = solve(grid, u, 0, extrapolate=True).total("lower")
    print(f"u={u:3.1f}  exact {psi:.5f}  upwind {plain:.5f}  extrapolated {rich:.5f}")

# %%
# both backends give the same answer on the same grid
a = solve(grid, 1.0, 0, backend="transient")
b = solve(grid, 1.0, 0, backend="stationary")
print("backend gap", a.max_difference(b))

# %% [markdown]
# Monte Carlo on the untouched model.

# %%
ds = estimate_descriptors(aug, 1.0, 0, 20000, 1e-3, 0.0, 60.0, seed=1)
est = total_estimate(ds, "lower")
print(f"MC {est.value:.4f} +- {est.std_error:.4f} (exact {exact[1]:.4f})")
