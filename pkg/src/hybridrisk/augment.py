"""Builders turning a risk model into a killed (possibly clock-augmented) model.

Augmented states are ordered base-state-major, then horizon stage, then
grace stage. A clock attached to the environment advances only while the
base state collects premium, which in Kronecker form reads
``Lambda (x) I + D_p (x) K`` with ``D_p`` the premium indicator; on a
partition-sorted layout this is exactly the block matrix with
``Lambda_pp (+) K`` in the premium block and ``(x) I`` elsewhere.

Killing is always classified explicitly: ``kill_plus`` holds non-ruin
terminations and ``kill_minus`` ruin terminations.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import (KilledGenerator, LevelDependentGenerator, RiskModelSpec, StatePartition,
                   pullback, zero_rates)
from .errors import UsageError
from .matrixkit import ErlangClock, PhaseType, kron_batch

RUIN, NON_RUIN = "ruin", "non_ruin"
CHECK_GRID = np.linspace(-20.0, 20.0, 401)


@dataclass(frozen=True)
class AugmentedModel:
    """A killed model on an augmented state space.

    Attributes
    ----------
    spec : RiskModelSpec
        Augmented model; its generator is the killed subintensity (no ``q``).
    base : RiskModelSpec
        The model before augmentation.
    partition_map : tuple
        ``partition_map[a] = (base state, horizon stage, grace stage)``.
    killing : KilledGenerator
        Exact (possibly discontinuous at 0) killed generator.
    absorption_classes : dict
        Killing source -> ``"ruin"`` or ``"non_ruin"``.
    regimes : tuple or None
        ``(below, above)`` killed generators whose formulas hold for ``x < 0``
        and ``x >= 0``; ``None`` when the generator has no regime switch.
    """

    spec: RiskModelSpec
    base: RiskModelSpec
    partition_map: tuple
    killing: KilledGenerator
    absorption_classes: dict
    ruin_type: str
    horizon_init: np.ndarray
    grace_init: np.ndarray
    regimes: tuple | None = None

    @property
    def n_states(self) -> int:
        return self.spec.n_states

    @property
    def base_of(self) -> np.ndarray:
        return np.array([p[0] for p in self.partition_map])

    def initial_distribution(self, i0: int) -> np.ndarray:
        """Distribution over augmented states when the base process starts in ``i0``."""
        if not 0 <= i0 < self.base.n_states:
            raise UsageError(f"initial state {i0} out of range")
        out = np.zeros(self.n_states)
        for a, (b, h, g) in enumerate(self.partition_map):
            if b == i0:
                out[a] = self.horizon_init[h] * self.grace_init[g]
        return out

    def regime(self, side: str) -> KilledGenerator:
        if self.regimes is None:
            return self.killing
        return self.regimes[0] if side == "below" else self.regimes[1]


def _clock_parts(clock):
    if clock is None:
        return np.zeros((1, 1)), np.ones(1), np.zeros(1)
    if isinstance(clock, ErlangClock):
        clock = clock.as_phase_type()
    if not isinstance(clock, PhaseType):
        raise UsageError("clock must be an ErlangClock or PhaseType")
    if abs(clock.alpha.sum() - 1.0) > 1e-10:
        raise UsageError("clock initial vector must sum to 1")
    return clock.T, clock.alpha, clock.exit


def _piecewise(below: KilledGenerator, above: KilledGenerator) -> KilledGenerator:
    n = below.dimension

    def pick(fb, fa, extra_dims):
        def f(x):
            x = np.asarray(x, dtype=float)
            mask = (x < 0).reshape(x.shape + (1,) * extra_dims)
            return np.where(mask, fb(x), fa(x))
        return f

    gen = LevelDependentGenerator(n, pick(below.base, above.base, 2))
    return KilledGenerator(gen, pick(below.kill_plus, above.kill_plus, 1),
                           pick(below.kill_minus, above.kill_minus, 1), below.premium_mask)


def _assemble(model: RiskModelSpec, killing: KilledGenerator, partition_map, classes,
              ruin_type, horizon_init=np.ones(1), grace_init=np.ones(1), regimes=None,
              ) -> AugmentedModel:
    part = model.partition
    base_of = np.array([p[0] for p in partition_map])
    kinds = {s: part.kind(s) for s in range(part.n_states)}
    groups = {"premium": [], "up": [], "down": []}
    for a, b in enumerate(base_of):
        groups[kinds[int(b)]].append(a)
    multi = len(partition_map) != part.n_states
    names = tuple(part.names[b] + (f"[h{h},g{g}]" if multi else "")
                  for b, h, g in partition_map)
    aug_part = StatePartition(tuple(groups["premium"]), tuple(groups["up"]),
                              tuple(groups["down"]), names)
    spec = RiskModelSpec(aug_part, pullback(model.drift, base_of),
                         pullback(model.diffusion, base_of), killing.base,
                         model.lipschitz_bound, f"{model.name}/{ruin_type}")
    return AugmentedModel(spec, model, tuple(partition_map), killing, dict(classes), ruin_type,
                          np.asarray(horizon_init, float), np.asarray(grace_init, float), regimes)


def _identity_map(n):
    return tuple((s, 0, 0) for s in range(n))


def _killed(n, gen_fn, kp=None, km=None, prem=None):
    return KilledGenerator(LevelDependentGenerator(n, gen_fn), kp or zero_rates(n),
                           km or zero_rates(n), prem)


def build_infinite_horizon(model: RiskModelSpec) -> AugmentedModel:
    """Classical ruin: no augmentation and no killing; ruin is the boundary event."""
    n = model.n_states
    killing = KilledGenerator(model.generator, zero_rates(n), zero_rates(n),
                              model.partition.premium_mask)
    return _assemble(model, killing, _identity_map(n), {"boundary": RUIN}, "infinite")


def build_erlang_horizon(model: RiskModelSpec, clock) -> AugmentedModel:
    """Ruin before an independent Erlang (or PH) horizon running in operational time.

    The clock's absorption is a non-ruin termination on both half-lines.
    """
    k_mat, init, exit_ = _clock_parts(clock)
    n, m = model.n_states, k_mat.shape[0]
    prem = model.partition.premium_mask.astype(float)
    eye = np.eye(m)
    dp_k = np.kron(np.diag(prem), k_mat)
    kill = np.kron(prem, exit_)

    def gen(x):
        return kron_batch(model.generator(x), eye) + dp_k

    def kill_plus(x):
        return np.broadcast_to(kill, np.shape(x) + kill.shape)

    killing = _killed(n * m, gen, kp=kill_plus, prem=np.kron(prem, np.ones(m)) > 0)
    pmap = tuple((s, k, 0) for s in range(n) for k in range(m))
    return _assemble(model, killing, pmap, {"horizon_clock": NON_RUIN}, "erlang", init)


def build_poissonian(model: RiskModelSpec, obs_rate: float) -> AugmentedModel:
    """Ruin when a rate-``obs_rate`` observer (operational time) finds ``x < 0``."""
    if obs_rate < 0:
        raise UsageError("observation rate must be non-negative")
    n = model.n_states
    prem_mask = model.partition.premium_mask
    prem = prem_mask.astype(float)
    kill = obs_rate * prem

    def below_gen(x):
        return model.generator(x) - np.diag(kill)

    def below_kill(x):
        return np.broadcast_to(kill, np.shape(x) + (n,))

    below = _killed(n, below_gen, km=below_kill, prem=prem_mask)
    above = _killed(n, model.generator, prem=prem_mask)
    return _assemble(model, _piecewise(below, above), _identity_map(n),
                     {"observation": RUIN}, "poisson", regimes=(below, above))


def build_cumulative_parisian(model: RiskModelSpec, grace) -> AugmentedModel:
    """Ruin when the cumulative time spent below zero exhausts a PH grace period.

    The grace clock runs (in operational time) only while ``x < 0`` and is
    frozen otherwise; its absorption is ruin.
    """
    k_mat, init, exit_ = _clock_parts(grace)
    n, m = model.n_states, k_mat.shape[0]
    prem_mask = model.partition.premium_mask
    prem = prem_mask.astype(float)
    eye = np.eye(m)
    dp_k = np.kron(np.diag(prem), k_mat)
    kill = np.kron(prem, exit_)
    aug_prem = np.kron(prem, np.ones(m)) > 0

    def below_gen(x):
        return kron_batch(model.generator(x), eye) + dp_k

    def above_gen(x):
        return kron_batch(model.generator(x), eye)

    def below_kill(x):
        return np.broadcast_to(kill, np.shape(x) + kill.shape)

    below = _killed(n * m, below_gen, km=below_kill, prem=aug_prem)
    above = _killed(n * m, above_gen, prem=aug_prem)
    pmap = tuple((s, 0, k) for s in range(n) for k in range(m))
    return _assemble(model, _piecewise(below, above), pmap, {"grace_clock": RUIN}, "parisian",
                     grace_init=init, regimes=(below, above))


def _omega_vec(omega: Callable, n: int, prem: np.ndarray, x):
    x = np.asarray(x, dtype=float)
    states = np.broadcast_to(np.arange(n), x.shape + (n,))
    vals = np.asarray(omega(states, np.broadcast_to(x[..., None], states.shape)), dtype=float)
    if np.any(vals < 0) or not np.all(np.isfinite(vals)):
        raise UsageError("bankruptcy rate must be finite and non-negative")
    return vals * prem


def build_omega(model: RiskModelSpec, omega: Callable) -> AugmentedModel:
    """Bankruptcy at state- and level-dependent rate ``omega(i, x)`` while ``x < 0``.

    ``omega`` is vectorised over ``(state, level)`` arrays.
    """
    n = model.n_states
    prem_mask = model.partition.premium_mask
    prem = prem_mask.astype(float)
    _omega_vec(omega, n, prem, CHECK_GRID[CHECK_GRID < 0])

    def below_kill(x):
        return _omega_vec(omega, n, prem, x)

    def below_gen(x):
        lam = model.generator(x)
        w = below_kill(x)
        idx = np.arange(n)
        lam[..., idx, idx] -= w
        return lam

    below = _killed(n, below_gen, km=below_kill, prem=prem_mask)
    above = _killed(n, model.generator, prem=prem_mask)
    return _assemble(model, _piecewise(below, above), _identity_map(n), {"omega": RUIN},
                     "omega", regimes=(below, above))


def _check_reweigh(model, reweigh, grid):
    lam = model.generator(grid)
    w = np.asarray(reweigh(grid), dtype=float)
    if w.shape != lam.shape:
        raise UsageError("reweighing function must return matrices shaped like the generator")
    n = model.n_states
    prem = model.partition.premium_mask
    off = ~np.eye(n, dtype=bool)
    if np.any(w < -1e-12):
        raise UsageError("reweighing must be non-negative")
    if np.any(np.abs(w[:, ~prem, :]) > 1e-12) or np.any(np.abs(w[:, :, ~prem]) > 1e-12):
        raise UsageError("reweighing is only allowed between premium states")
    if np.any((w - lam)[:, off] > 1e-12):
        raise UsageError("reweighing exceeds the transition rate it is taken from")


def build_generalized_omega(model: RiskModelSpec, reweigh_plus: Callable | None = None,
                            reweigh_minus: Callable | None = None, horizon=None, grace=None,
                            base_omega: Callable | None = None,
                            check_grid=CHECK_GRID) -> AugmentedModel:
    """Two-sided competing-risk termination with optional horizon and grace clocks.

    Parameters
    ----------
    reweigh_plus, reweigh_minus : callable, optional
        ``x -> W(x)`` (``(n, n)``, vectorised) with ``0 <= W_ij <= Lambda_ij``
        off the diagonal and ``W_ii >= 0``; nonzero only between premium
        states. ``reweigh_plus`` acts for ``x >= 0`` and feeds non-ruin
        killing, ``reweigh_minus`` acts for ``x < 0`` and feeds ruin killing.
    horizon : ErlangClock or PhaseType, optional
        Non-ruin clock running on both half-lines.
    grace : PhaseType or ErlangClock, optional
        Ruin clock running only while ``x < 0``.
    base_omega : callable, optional
        Diagonal bankruptcy rate ``omega(i, x)`` applied for ``x < 0``.
    """
    n = model.n_states
    prem_mask = model.partition.premium_mask
    prem = prem_mask.astype(float)
    grid = np.asarray(check_grid, dtype=float)
    for rw, side in ((reweigh_plus, grid >= 0), (reweigh_minus, grid < 0)):
        if rw is not None:
            _check_reweigh(model, rw, grid[side])
    if base_omega is not None:
        _omega_vec(base_omega, n, prem, grid[grid < 0])
    kn, init_n, exit_n = _clock_parts(horizon)
    kr, init_r, exit_r = _clock_parts(grace)
    mn, mr = kn.shape[0], kr.shape[0]
    i_n, i_r = np.eye(mn), np.eye(mr)
    dp = np.diag(prem)
    horizon_part = np.kron(np.kron(dp, kn), i_r)
    grace_part = np.kron(np.kron(dp, i_n), kr)
    stages = mn * mr
    aug_prem = np.repeat(prem, stages)
    horizon_kill = aug_prem * np.tile(np.repeat(exit_n, mr), n)
    grace_kill = aug_prem * np.tile(np.tile(exit_r, mn), n)

    def plus_parts(x):
        lam = model.generator(x)
        if reweigh_plus is None:
            return lam, np.zeros(np.shape(x) + (n,))
        w = np.asarray(reweigh_plus(x), dtype=float)
        return lam - w, w.sum(axis=-1)

    def minus_parts(x):
        lam = model.generator(x)
        kill = np.zeros(np.shape(x) + (n,))
        if reweigh_minus is not None:
            w = np.asarray(reweigh_minus(x), dtype=float)
            lam = lam - w
            kill = kill + w.sum(axis=-1)
        if base_omega is not None:
            om = _omega_vec(base_omega, n, prem, x)
            idx = np.arange(n)
            lam[..., idx, idx] -= om
            kill = kill + om
        return lam, kill

    eye_stages = np.eye(stages)

    def above_gen(x):
        return kron_batch(plus_parts(x)[0], eye_stages) + horizon_part

    def above_kp(x):
        return np.repeat(plus_parts(x)[1], stages, axis=-1) + horizon_kill

    def below_gen(x):
        return kron_batch(minus_parts(x)[0], eye_stages) + horizon_part + grace_part

    def below_kp(x):
        return np.broadcast_to(horizon_kill, np.shape(x) + horizon_kill.shape)

    def below_km(x):
        return np.repeat(minus_parts(x)[1], stages, axis=-1) + grace_kill

    mask = aug_prem > 0
    below = _killed(n * stages, below_gen, kp=below_kp, km=below_km, prem=mask)
    above = _killed(n * stages, above_gen, kp=above_kp, prem=mask)
    pmap = tuple((s, h, g) for s in range(n) for h in range(mn) for g in range(mr))
    classes = {"horizon_clock": NON_RUIN, "grace_clock": RUIN, "omega": RUIN,
               "reweigh_plus": NON_RUIN, "reweigh_minus": RUIN}
    return _assemble(model, _piecewise(below, above), pmap, classes, "gomega", init_n, init_r,
                     regimes=(below, above))


BUILDERS = {
    "infinite": build_infinite_horizon,
    "erlang": build_erlang_horizon,
    "poisson": build_poissonian,
    "parisian": build_cumulative_parisian,
    "omega": build_omega,
    "gomega": build_generalized_omega,
}
