"""Domain types for hybrid risk processes and their validation rules.

States are dense integer ids ``0..n-1``. Every level-dependent quantity is a
vectorised callable: a generator maps a scalar level to an ``(n, n)`` matrix
and a 1-D array of levels to an ``(m, n, n)`` stack; state functions map
``(state, level)`` arrays to arrays.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError, UsageError

TOL = 1e-10

PREMIUM, UP, DOWN = "premium", "up", "down"


@dataclass(frozen=True)
class StatePartition:
    """Split of the environment states into premium, up-jump and down-jump sets."""

    premium_states: tuple
    up_jump_states: tuple = ()
    down_jump_states: tuple = ()
    names: tuple = None

    def __post_init__(self):
        sets = [tuple(int(s) for s in group) for group in
                (self.premium_states, self.up_jump_states, self.down_jump_states)]
        object.__setattr__(self, "premium_states", sets[0])
        object.__setattr__(self, "up_jump_states", sets[1])
        object.__setattr__(self, "down_jump_states", sets[2])
        if not sets[0]:
            raise UsageError("premium state set must be non-empty")
        everything = [s for group in sets for s in group]
        if len(set(everything)) != len(everything):
            raise UsageError("state sets must be pairwise disjoint")
        if sorted(everything) != list(range(len(everything))):
            raise UsageError("state ids must be exactly 0..n-1")
        names = self.names
        if names is None:
            names = tuple(f"s{k}" for k in range(len(everything)))
        names = tuple(str(s) for s in names)
        if len(names) != len(everything):
            raise UsageError("name table length must equal the state count")
        object.__setattr__(self, "names", names)

    @property
    def n_states(self) -> int:
        return len(self.premium_states) + len(self.up_jump_states) + len(self.down_jump_states)

    def kind(self, state: int) -> str:
        if state in self.premium_states:
            return PREMIUM
        if state in self.up_jump_states:
            return UP
        return DOWN

    @property
    def premium_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.premium_states)] = True
        return mask

    @property
    def up_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.up_jump_states)] = True
        return mask

    @property
    def down_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.down_jump_states)] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "premium": list(self.premium_states),
            "up": list(self.up_jump_states),
            "down": list(self.down_jump_states),
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "StatePartition":
        return cls(tuple(data["premium"]), tuple(data.get("up", ())),
                   tuple(data.get("down", ())), tuple(data["names"]) if "names" in data else None)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "StatePartition":
        return cls.from_dict(json.loads(text))


class StateFunction:
    """Per-state level functions evaluated on arrays of ``(state, level)``.

    Each entry is either a number (constant in the level) or a callable
    accepting a numpy array of levels.

    Examples
    --------
    >>> f = StateFunction([1.0, lambda x: -1 - x])
    >>> f(np.array([0, 1]), np.array([2.0, 2.0]))
    array([ 1., -3.])
    """

    def __init__(self, entries: Sequence):
        self.entries = list(entries)
        self._const = np.array([0.0 if callable(e) else float(e) for e in self.entries])
        self._calls = [k for k, e in enumerate(self.entries) if callable(e)]

    def __len__(self):
        return len(self.entries)

    def __call__(self, state, level):
        state = np.asarray(state)
        level = np.asarray(level, dtype=float)
        state, level = np.broadcast_arrays(state, level)
        scalar = state.ndim == 0
        state, level = np.atleast_1d(state), np.atleast_1d(level)
        out = self._const[state].astype(float)
        for s in self._calls:
            mask = state == s
            if np.any(mask):
                out[mask] = np.broadcast_to(self.entries[s](level[mask]), level[mask].shape)
        return float(out[0]) if scalar else out


def pullback(func: Callable, base_of: np.ndarray) -> Callable:
    """State function on an augmented space that reads the base state's value."""
    base_of = np.asarray(base_of)

    def pulled(state, level):
        return func(base_of[np.asarray(state)], level)

    return pulled


class LevelDependentGenerator:
    """Level-dependent (sub)intensity matrix ``x -> Lambda(x)``.

    Parameters
    ----------
    dimension : int
        Number of states.
    entries : callable
        Maps a level (scalar or 1-D array) to a matrix (or stack of matrices).
    bound : float, optional
        Declared uniform bound on ``max |entry|``.
    vectorized : bool
        If False, ``entries`` is only called with scalars and stacks are
        assembled by looping.
    """

    def __init__(self, dimension: int, entries: Callable, bound: float | None = None,
                 vectorized: bool = True):
        if int(dimension) < 1:
            raise UsageError("dimension must be positive")
        self.dimension = int(dimension)
        self.entries = entries
        self.bound = bound
        self.vectorized = vectorized

    @classmethod
    def constant(cls, matrix) -> "LevelDependentGenerator":
        matrix = np.array(matrix, dtype=float)
        n = matrix.shape[0]

        def entries(x):
            x = np.asarray(x, dtype=float)
            if x.ndim == 0:
                return matrix.copy()
            return np.broadcast_to(matrix, x.shape + (n, n)).copy()

        return cls(n, entries, bound=float(np.max(np.abs(matrix))) if matrix.size else 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        n = self.dimension
        if x.ndim == 0 or self.vectorized:
            out = np.asarray(self.entries(x if x.ndim else float(x)), dtype=float)
        else:
            out = np.stack([np.asarray(self.entries(float(v)), dtype=float) for v in x.ravel()])
            out = out.reshape(x.shape + (n, n))
        if out.shape != x.shape + (n, n):
            raise UsageError(f"generator returned shape {out.shape}, expected {x.shape + (n, n)}")
        return out


@dataclass(frozen=True)
class RiskModelSpec:
    """Underlying hybrid SDE: partition, drift, diffusion and switching generator."""

    partition: StatePartition
    drift: Callable
    diffusion: Callable
    generator: LevelDependentGenerator
    lipschitz_bound: float = np.inf
    name: str = "model"

    def __post_init__(self):
        if self.generator.dimension != self.partition.n_states:
            raise UsageError("generator dimension does not match partition")
        if self.lipschitz_bound < 0:
            raise UsageError("declared Lipschitz bound must be non-negative")

    @property
    def n_states(self) -> int:
        return self.partition.n_states


@dataclass(frozen=True)
class KilledGenerator:
    """Subintensity generator whose row defects are classified killings.

    ``base(x)`` already carries ``kill_plus + kill_minus`` as row defects;
    :meth:`matrix` additionally subtracts the discount rate ``q`` on premium
    rows. ``kill_plus`` and ``kill_minus`` map levels to per-state rate
    vectors (shape ``x.shape + (n,)``).
    """

    base: LevelDependentGenerator
    kill_plus: Callable
    kill_minus: Callable
    premium_mask: np.ndarray
    q: float = 0.0

    def __post_init__(self):
        if self.q < 0:
            raise UsageError("discount rate q must be non-negative")

    @property
    def dimension(self) -> int:
        return self.base.dimension

    def matrix(self, x):
        mat = self.base(x)
        if self.q:
            idx = np.flatnonzero(self.premium_mask)
            mat[..., idx, idx] -= self.q
        return mat

    def rates(self, x):
        """Return ``(matrix, kill_plus, kill_minus)`` at ``x`` (q included in matrix)."""
        return self.matrix(x), _rate_vec(self.kill_plus, x, self.dimension), \
            _rate_vec(self.kill_minus, x, self.dimension)

    def kill_plus_rate(self, state: int, x: float) -> float:
        return float(_rate_vec(self.kill_plus, x, self.dimension)[state])

    def kill_minus_rate(self, state: int, x: float) -> float:
        return float(_rate_vec(self.kill_minus, x, self.dimension)[state])

    def with_q(self, q: float) -> "KilledGenerator":
        return KilledGenerator(self.base, self.kill_plus, self.kill_minus, self.premium_mask, q)

    def defect_mismatch(self, x) -> np.ndarray:
        """Row defect of :meth:`matrix` minus ``kill_plus + kill_minus + q 1{premium}``."""
        mat, kp, km = self.rates(x)
        defect = -mat.sum(axis=-1)
        return defect - kp - km - self.q * self.premium_mask


def _rate_vec(func, x, n):
    x = np.asarray(x, dtype=float)
    out = np.asarray(func(x), dtype=float)
    return np.broadcast_to(out, x.shape + (n,))


def zero_rates(n: int) -> Callable:
    def rates(x):
        return np.zeros(np.shape(x) + (n,))
    return rates


@dataclass(frozen=True)
class Violation:
    rule: str
    state: int | None
    level: float | None
    message: str


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, rule, state, level, message):
        self.violations.append(Violation(rule, None if state is None else int(state),
                                         None if level is None else float(level), message))

    def rules(self) -> set:
        return {v.rule for v in self.violations}

    def __str__(self):
        if self.passed:
            return "model valid"
        lines = [f"{len(self.violations)} violation(s):"]
        for v in self.violations:
            lines.append(f"  [{v.rule}] state={v.state} level={v.level}: {v.message}")
        return "\n".join(lines)


def evaluate_generator(gen: LevelDependentGenerator, x: float,
                       partition: StatePartition | None = None) -> np.ndarray:
    """Evaluate ``gen`` at level ``x`` with the jump-to-jump blocks forced to zero.

    Raises
    ------
    NumericError
        If any entry is non-finite.
    UsageError
        If a structurally-zero entry (up-jump to down-jump state or the
        reverse) is materially nonzero.
    """
    mat = np.array(gen(float(x)), dtype=float)
    if not np.all(np.isfinite(mat)):
        raise NumericError(f"non-finite generator entries at level {x}")
    if partition is not None and partition.up_jump_states and partition.down_jump_states:
        up, down = list(partition.up_jump_states), list(partition.down_jump_states)
        for rows, cols in ((up, down), (down, up)):
            block = mat[np.ix_(rows, cols)]
            if np.max(np.abs(block)) > TOL:
                raise UsageError("generator couples up-jump and down-jump states directly")
            mat[np.ix_(rows, cols)] = 0.0
    return mat


def validate_model(spec: RiskModelSpec, sample_grid, tol: float = TOL) -> ValidationReport:
    """Check a model against the structural and regularity rules on a level sample.

    Every violated rule is reported with the offending state and level. The
    Lipschitz check compares slopes between consecutive sample levels with
    ``spec.lipschitz_bound``.
    """
    grid = np.asarray(sample_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise UsageError("sample grid must be a non-empty 1-D sequence")
    if np.any(np.diff(grid) < 0):
        raise UsageError("sample grid must be sorted")
    part = spec.partition
    n = part.n_states
    report = ValidationReport()

    mats = spec.generator(grid)
    if not np.all(np.isfinite(mats)):
        k = int(np.argwhere(~np.isfinite(mats))[0][0])
        report.add("finite", None, grid[k], "generator has non-finite entries")
        return report
    off = mats.copy()
    idx = np.arange(n)
    off[:, idx, idx] = 0.0
    for k, s in zip(*np.nonzero(off.min(axis=2) < -tol)):
        report.add("offdiag", s, grid[k], "off-diagonal rate negative")
    rowsum = mats.sum(axis=2)
    for k, s in zip(*np.nonzero(rowsum > tol)):
        report.add("rowsum", s, grid[k], "row sum positive")
    if part.up_jump_states and part.down_jump_states:
        up, down = list(part.up_jump_states), list(part.down_jump_states)
        cross = np.maximum(np.abs(mats[:, up][:, :, down]).max(axis=(1, 2)),
                           np.abs(mats[:, down][:, :, up]).max(axis=(1, 2)))
        for k in np.flatnonzero(cross > tol):
            report.add("structural_zero", None, grid[k], "up/down jump blocks must be zero")
    sup = float(np.max(np.abs(mats)))
    if spec.generator.bound is not None and sup > spec.generator.bound * (1 + tol) + tol:
        k = int(np.argmax(np.abs(mats).reshape(len(grid), -1).max(axis=1)))
        report.add("bound", None, grid[k], f"generator entry {sup:g} exceeds declared bound "
                                           f"{spec.generator.bound:g}")

    states = np.repeat(idx[:, None], len(grid), axis=1)
    levels = np.broadcast_to(grid, states.shape)
    mu = np.asarray(spec.drift(states, levels), dtype=float)
    sig = np.asarray(spec.diffusion(states, levels), dtype=float)
    for name, vals in (("drift", mu), ("diffusion", sig)):
        bad = ~np.isfinite(vals)
        for s, k in zip(*np.nonzero(bad)):
            report.add("finite", s, grid[k], f"{name} is not finite")
    for s, k in zip(*np.nonzero(sig < -tol)):
        report.add("diffusion_sign", s, grid[k], "diffusion must be non-negative")
    for s in part.down_jump_states:
        for k in np.flatnonzero(~(mu[s] < 0)):
            report.add("down_drift", s, grid[k], "S^- drift must be negative")
        for k in np.flatnonzero(np.abs(sig[s]) > tol):
            report.add("jump_diffusion", s, grid[k], "S^- diffusion must vanish")
    for s in part.up_jump_states:
        for k in np.flatnonzero(~(mu[s] > 0)):
            report.add("up_drift", s, grid[k], "S^+ drift must be positive")
        for k in np.flatnonzero(np.abs(sig[s]) > tol):
            report.add("jump_diffusion", s, grid[k], "S^+ diffusion must vanish")

    if len(grid) > 1 and np.isfinite(spec.lipschitz_bound):
        dx = np.diff(grid)
        ok = dx > 0
        for name, vals in (("drift", mu), ("diffusion", sig)):
            with np.errstate(invalid="ignore"):
                slopes = np.abs(np.diff(vals, axis=1))[:, ok] / dx[ok]
            limit = spec.lipschitz_bound * (1 + 1e-9) + tol
            for s, k in zip(*np.nonzero(slopes > limit)):
                report.add("lipschitz", s, grid[:-1][ok][k],
                           f"{name} slope {slopes[s, k]:g} exceeds Lipschitz bound")
    return report


def check_killed(killed: KilledGenerator, sample_grid, tol: float = TOL) -> float:
    """Largest defect-decomposition mismatch over ``sample_grid`` and premium-only killing.

    Raises
    ------
    UsageError
        If killing rates are nonzero outside premium states.
    """
    grid = np.asarray(sample_grid, dtype=float)
    _, kp, km = killed.rates(grid)
    outside = ~killed.premium_mask
    if np.any(np.abs(kp[:, outside]) > tol) or np.any(np.abs(km[:, outside]) > tol):
        raise UsageError("killing is only allowed in premium states")
    return float(np.max(np.abs(killed.defect_mismatch(grid))))
