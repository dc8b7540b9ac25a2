"""Jump-size intensities of the time-changed process and heavy-tail drift presets.

A sojourn of the environment in the down-jump states is re-parameterised by
the accumulated jump size ``y``: while in state ``k`` at level ``x - y`` the
size grows at speed ``|mu(k, x - y)|``, so the sojourn generator per unit of
size is ``diag(1/|mu|) Lambda_{--}(x - y)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import RiskModelSpec, evaluate_generator
from .errors import JumpSingularityError, UsageError
from .matrixkit import product_integral

SINGULAR = 1e-12


@dataclass(frozen=True)
class JumpKernel:
    """Entry block, size-indexed sojourn generator and exit block of one jump type."""

    direction: str
    from_level: float
    entry_block: np.ndarray
    sojourn_generator: Callable
    exit_block: Callable
    premium_states: tuple
    jump_states: tuple

    def entry_rate(self, i: int) -> float:
        return float(self.entry_block[self.premium_states.index(i)].sum())


def _inverse_speed(model: RiskModelSpec, states, z: float) -> np.ndarray:
    mu = np.asarray(model.drift(np.asarray(states), np.full(len(states), float(z))), dtype=float)
    if not np.all(np.isfinite(mu)) or np.any(np.abs(mu) < SINGULAR):
        raise JumpSingularityError(f"jump-state drift vanishes or is not finite at level {z:g}")
    return np.diag(1.0 / np.abs(mu))


def jump_kernel(model: RiskModelSpec, x: float, direction: str = "down") -> JumpKernel:
    """Assemble the jump kernel for jumps initiated at level ``x``."""
    part = model.partition
    prem = list(part.premium_states)
    if direction == "down":
        jump, sign = list(part.down_jump_states), -1.0
    elif direction == "up":
        jump, sign = list(part.up_jump_states), 1.0
    else:
        raise UsageError("direction must be 'down' or 'up'")
    if not jump:
        raise UsageError(f"model has no {direction}-jump states")
    lam_x = evaluate_generator(model.generator, x, part)

    def sojourn(y):
        z = x + sign * y
        lam = model.generator(z)
        return _inverse_speed(model, jump, z) @ lam[np.ix_(jump, jump)]

    def exit_block(y):
        z = x + sign * y
        lam = model.generator(z)
        return _inverse_speed(model, jump, z) @ lam[np.ix_(jump, prem)]

    return JumpKernel(direction, float(x), lam_x[np.ix_(prem, jump)], sojourn, exit_block,
                      tuple(prem), tuple(jump))


def jump_intensity_density(model: RiskModelSpec, x: float, i: int, j: int | None, y_grid,
                           direction: str = "down", substeps: int = 8) -> np.ndarray:
    """Intensity density of a jump of size ``y`` from ``(i, x)`` landing in ``j``.

    Parameters
    ----------
    model : RiskModelSpec
    x : float
        Level at which the jump starts.
    i, j : int
        Premium states before and after the jump; ``j=None`` returns all
        landing states as columns.
    y_grid : array_like
        Positive, increasing jump sizes.
    substeps : int
        RK4 sub-steps between consecutive grid points.

    Returns
    -------
    numpy.ndarray
        Densities in units of 1/(size * time), shape ``(len(y_grid),)`` or
        ``(len(y_grid), |S^p|)``.
    """
    ys = np.asarray(y_grid, dtype=float)
    if ys.ndim != 1 or ys.size == 0 or ys[0] <= 0 or np.any(np.diff(ys) <= 0):
        raise UsageError("y_grid must be positive and strictly increasing")
    kern = jump_kernel(model, x, direction)
    if i not in kern.premium_states or (j is not None and j not in kern.premium_states):
        raise UsageError("i and j must be premium states")
    row = kern.entry_block[kern.premium_states.index(i)]
    prop = product_integral(kern.sojourn_generator, steps=substeps, y_eval=ys)
    out = np.array([row @ p @ kern.exit_block(y) for y, p in zip(prop.y[1:], prop.P[1:])])
    if j is None:
        return out
    return out[:, kern.premium_states.index(j)]


def jump_size_density(model: RiskModelSpec, x: float, i: int, y_cap: float = 100.0,
                      dy: float = 0.01, direction: str = "down", substeps: int = 4,
                      mass_target: float = 1 - 1e-8):
    """Normalised jump-size density (summed over landing states) on an adaptive range.

    Integration stops once the cumulative exit mass reaches ``mass_target``
    of the entry rate or ``y`` reaches ``y_cap``.

    Returns
    -------
    y, density, mass : ndarray, ndarray, float
    """
    kern = jump_kernel(model, x, direction)
    total = kern.entry_rate(i)
    if total <= 0:
        raise UsageError(f"no jumps start from state {i}")
    row = kern.entry_block[kern.premium_states.index(i)] / total
    ys, dens = [], []
    p = np.eye(len(kern.jump_states))
    y0, mass, prev = 0.0, 0.0, float(row @ kern.exit_block(0.0).sum(axis=1))
    while y0 < y_cap and mass < mass_target:
        y1 = min(y0 + dy, y_cap)
        seg = product_integral(lambda s: kern.sojourn_generator(y0 + s), steps=substeps,
                               y_eval=[y1 - y0])
        p = p @ seg.P[-1]
        val = float(row @ p @ kern.exit_block(y1).sum(axis=1))
        mass += 0.5 * (prev + val) * (y1 - y0)
        ys.append(y1)
        dens.append(val)
        prev, y0 = val, y1
    return np.array(ys), np.array(dens), mass


def pareto_drift(a: float, b: float) -> Callable:
    """Linear down-jump drift ``u -> -a - b u`` giving matrix-Pareto jump tails.

    The size-indexed rate is ``c(y; x) = 1/(a + b (x - y))``.
    """
    if not (a > 0 and b > 0):
        raise UsageError("pareto_drift needs a > 0 and b > 0")

    def drift(u):
        return -a - b * np.asarray(u, dtype=float)

    return drift


def pareto_rate(a: float, b: float, x: float) -> Callable:
    return lambda y: 1.0 / (a + b * (x - np.asarray(y, dtype=float)))


def weibull_drift(beta: float) -> Callable:
    """Down-jump drift ``u -> -1/(beta u^(beta-1))`` giving Weibull-type hazards.

    Defined for ``u > 0``; returns ``nan`` elsewhere so that the jump kernel
    reports a singularity instead of extrapolating.
    """
    if not beta > 0:
        raise UsageError("weibull_drift needs beta > 0")

    def drift(u):
        u = np.asarray(u, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = -1.0 / (beta * np.power(u, beta - 1.0))
        return np.where(u > 0, out, np.nan) if beta != 1 else np.full(u.shape, -1.0)

    return drift


def weibull_rate(beta: float, x: float) -> Callable:
    return lambda y: beta * np.power(x - np.asarray(y, dtype=float), beta - 1.0)
