"""Preset risk models expressed as hybrid SDE specifications."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import LevelDependentGenerator, RiskModelSpec, StateFunction, StatePartition
from .errors import UsageError
from .matrixkit import PhaseType, mat_exp


def linear_premium(c: float, kappa: float) -> Callable:
    """Reserve-dependent premium ``x -> c + kappa x`` tagged with its Lipschitz constant."""

    def premium(x):
        return c + kappa * np.asarray(x, dtype=float)

    premium.lipschitz = abs(kappa)
    return premium


def _lipschitz_of(entries) -> float:
    bound = 0.0
    for e in entries:
        if callable(e):
            bound = max(bound, getattr(e, "lipschitz", np.inf))
    return bound


def markov_modulated(env_generator, premiums: Sequence, claim_rates: Sequence,
                     claims: Sequence[PhaseType], volatilities: Sequence | None = None,
                     claim_drift: Callable | None = None, name: str = "markov_modulated"
                     ) -> RiskModelSpec:
    """Markov-modulated risk model with phase-type claims and optional diffusion.

    Environment state ``j`` collects premium ``premiums[j]`` (number or
    callable of the level), has volatility ``volatilities[j]`` and triggers
    claims ``PH(alpha_j, T_j)`` at rate ``claim_rates[j]``. A finished claim
    returns the environment to the state that generated it. Claim phases
    drift at ``-1`` unless ``claim_drift`` (a callable of the level) is given.
    """
    env = np.atleast_2d(np.asarray(env_generator, dtype=float))
    n_env = env.shape[0]
    if not (len(premiums) == len(claim_rates) == len(claims) == n_env):
        raise UsageError("one premium, claim rate and claim law per environment state")
    if np.any(env - np.diag(np.diag(env)) < 0) or np.any(np.abs(env.sum(axis=1)) > 1e-10):
        raise UsageError("environment generator must be conservative")
    vols = [0.0] * n_env if volatilities is None else list(volatilities)
    sizes = [c.order for c in claims]
    n = n_env + sum(sizes)
    lam = np.zeros((n, n))
    lam[:n_env, :n_env] = env
    names = [f"env{j}" for j in range(n_env)]
    offset = n_env
    for j, (beta, claim) in enumerate(zip(claim_rates, claims)):
        if beta < 0:
            raise UsageError("claim rates must be non-negative")
        blk = slice(offset, offset + claim.order)
        lam[j, blk] = beta * claim.alpha
        lam[j, j] -= beta * claim.alpha.sum()
        lam[blk, blk] = claim.T
        lam[blk, j] = claim.exit
        names += [f"claim{j}.{k}" for k in range(claim.order)]
        offset += claim.order
    down = tuple(range(n_env, n))
    part = StatePartition(tuple(range(n_env)), (), down, tuple(names))
    jump_drift = claim_drift if claim_drift is not None else -1.0
    drift = StateFunction(list(premiums) + [jump_drift] * (n - n_env))
    diffusion = StateFunction(vols + [0.0] * (n - n_env))
    lip = max(_lipschitz_of(premiums), _lipschitz_of(vols),
              _lipschitz_of([claim_drift]) if claim_drift is not None else 0.0)
    return RiskModelSpec(part, drift, diffusion, LevelDependentGenerator.constant(lam), lip, name)


def cramer_lundberg(premium, claim_rate: float, claim: PhaseType, volatility=0.0,
                    claim_drift: Callable | None = None) -> RiskModelSpec:
    """Classical compound-Poisson surplus with phase-type claims embedded as a fluid.

    State 0 collects premium; the claim phases drift at ``-1`` (or
    ``claim_drift``) so each sojourn becomes a downward jump of ``PH`` size.
    """
    return markov_modulated([[0.0]], [premium], [claim_rate], [claim], [volatility],
                            claim_drift=claim_drift, name="cramer_lundberg")


def cramer_lundberg_ruin(premium: float, claim_rate: float, claim: PhaseType, u) -> np.ndarray:
    """Infinite-horizon ruin probability of the classical model with PH claims.

    Uses ``psi(u) = alpha_+ exp((T + t alpha_+) u) 1`` with
    ``alpha_+ = (lambda/c) alpha (-T)^{-1}``.
    """
    if claim_rate * claim.mean() >= premium:
        raise UsageError("net profit condition fails; ruin is certain")
    alpha_plus = claim_rate / premium * np.linalg.solve(-claim.T.T, claim.alpha)
    gen = claim.T + np.outer(claim.exit, alpha_plus)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = np.array([alpha_plus @ mat_exp(gen * v) @ np.ones(claim.order) for v in u])
    return out if out.size > 1 else float(out[0])


def _ramp(z):
    return np.clip(z, 0.0, 1.0)


def dividend_refraction(base: RiskModelSpec, barrier: float, rate: float,
                        width: float = 1e-6) -> RiskModelSpec:
    """Refraction strategy: premium states pay dividends at ``rate`` above ``barrier``.

    The drift reduction ramps up linearly over ``[barrier, barrier + width]``
    so that the drift stays Lipschitz.
    """
    if rate < 0 or width <= 0:
        raise UsageError("dividend rate must be >= 0 and width > 0")
    prem = base.partition.premium_mask

    def drift(state, level):
        state = np.asarray(state)
        level = np.asarray(level, dtype=float)
        cut = rate * _ramp((level - barrier) / width) * prem[state]
        return base.drift(state, level) - cut

    lip = base.lipschitz_bound + rate / width
    return RiskModelSpec(base.partition, drift, base.diffusion, base.generator, lip,
                         f"{base.name}+refraction")


def dividend_poisson_observed(base: RiskModelSpec, barrier: float, obs_rate: float,
                              payout: float) -> RiskModelSpec:
    """Dividends switched on/off by Poisson observations of the surplus.

    Every state is tagged with a dividend mode; mode ``1`` premium states
    pay ``payout``. From premium states an observation at rate ``obs_rate``
    moves mode 0 to 1 when the level is above ``barrier`` and mode 1 to 0
    when it is at or below it. Jump states carry the mode unchanged, so a
    claim returns to the mode in force when it started. New id of
    ``(state, mode)`` is ``mode * n + state``.
    """
    if obs_rate < 0 or payout < 0:
        raise UsageError("observation rate and payout must be non-negative")
    part = base.partition
    n = part.n_states
    prem = np.array(part.premium_states)

    def shift(states, mode):
        return tuple(int(s) + mode * n for s in states)

    new_part = StatePartition(
        part.premium_states + shift(part.premium_states, 1),
        part.up_jump_states + shift(part.up_jump_states, 1),
        part.down_jump_states + shift(part.down_jump_states, 1),
        tuple(f"{nm}|{m}" for m in (0, 1) for nm in part.names),
    )
    base_gen = base.generator

    def entries(x):
        x = np.asarray(x, dtype=float)
        lam = base_gen(x)
        out = np.zeros(x.shape + (2 * n, 2 * n))
        out[..., :n, :n] = lam
        out[..., n:, n:] = lam
        up = obs_rate * (x > barrier)
        down = obs_rate * (x <= barrier)
        out[..., prem, prem + n] += up[..., None]
        out[..., prem, prem] -= up[..., None]
        out[..., prem + n, prem] += down[..., None]
        out[..., prem + n, prem + n] -= down[..., None]
        return out

    bound = None if base_gen.bound is None else base_gen.bound + obs_rate
    base_of = np.tile(np.arange(n), 2)
    mode = np.repeat([0, 1], n)
    prem_mask = np.tile(part.premium_mask, 2)

    def drift(state, level):
        state = np.asarray(state)
        return base.drift(base_of[state], level) - payout * (mode[state] * prem_mask[state])

    def diffusion(state, level):
        return base.diffusion(base_of[np.asarray(state)], level)

    return RiskModelSpec(new_part, drift, diffusion, LevelDependentGenerator(2 * n, entries, bound),
                         base.lipschitz_bound, f"{base.name}+poisson_dividends")


PRESETS = {
    "cramer_lundberg": cramer_lundberg,
    "markov_modulated": markov_modulated,
}
