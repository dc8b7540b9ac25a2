"""Matrix-analytic primitives: exponentials, Kronecker algebra, PH/IPH laws.

The matrix exponential delegates to :func:`scipy.linalg.expm` (Pade
scaling-and-squaring); the product integral is a fixed-step RK4 solver of
``P'(y) = P(y) T(y)`` written here because its step-halving error estimate
is part of the contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, linalg

from .errors import NumericError, UsageError

BLOWUP = 1e12


def mat_exp(a) -> np.ndarray:
    """Matrix exponential of a square matrix."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise UsageError("mat_exp needs a square matrix")
    if not np.all(np.isfinite(a)):
        raise NumericError("mat_exp input has non-finite entries")
    return linalg.expm(a)


def kron_prod(a, b) -> np.ndarray:
    return np.kron(np.asarray(a, dtype=float), np.asarray(b, dtype=float))


def kron_sum(a, b) -> np.ndarray:
    """Kronecker sum ``A (+) B = A (x) I + I (x) B``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or b.ndim != 2 or b.shape[0] != b.shape[1]:
        raise UsageError("kron_sum needs square matrices")
    return np.kron(a, np.eye(b.shape[0])) + np.kron(np.eye(a.shape[0]), b)


def kron_batch(a, b) -> np.ndarray:
    """Kronecker product over the trailing two axes; leading axes broadcast."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    lead = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    out = a[..., :, None, :, None] * b[..., None, :, None, :]
    return out.reshape(lead + (a.shape[-2] * b.shape[-2], a.shape[-1] * b.shape[-1]))


def _check_subintensity(t, what="T"):
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise UsageError(f"{what} must be square")
    off = t - np.diag(np.diag(t))
    if np.any(off < -1e-12) or np.any(t.sum(axis=1) > 1e-10):
        raise UsageError(f"{what} is not a subintensity matrix")


@dataclass(frozen=True)
class PhaseType:
    """Phase-type law ``PH(alpha, T)``: absorption time of a finite chain."""

    alpha: np.ndarray
    T: np.ndarray
    exit: np.ndarray = field(init=False)

    def __post_init__(self):
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        t = np.atleast_2d(np.asarray(self.T, dtype=float))
        if alpha.shape[0] != t.shape[0]:
            raise UsageError("alpha and T sizes differ")
        if np.any(alpha < -1e-14) or alpha.sum() > 1 + 1e-10:
            raise UsageError("alpha must be a sub-probability vector")
        _check_subintensity(t)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "T", t)
        object.__setattr__(self, "exit", np.maximum(-t.sum(axis=1), 0.0))

    @property
    def order(self) -> int:
        return self.T.shape[0]

    @classmethod
    def exponential(cls, rate: float) -> "PhaseType":
        return cls(np.array([1.0]), np.array([[-float(rate)]]))

    @classmethod
    def erlang(cls, stages: int, rate: float) -> "PhaseType":
        return ErlangClock(stages, rate).as_phase_type()

    def mean(self) -> float:
        return float(self.alpha @ np.linalg.solve(-self.T, np.ones(self.order)))

    def moment(self, k: int) -> float:
        from math import factorial
        inv = np.linalg.inv(-self.T)
        return float(factorial(k) * self.alpha @ np.linalg.matrix_power(inv, k) @ np.ones(self.order))


@dataclass(frozen=True)
class ErlangClock:
    """Erlang(m, rate) clock with bidiagonal generator and start in stage 1."""

    stages: int
    rate: float

    def __post_init__(self):
        if int(self.stages) < 1 or not self.rate > 0:
            raise UsageError("Erlang clock needs stages >= 1 and rate > 0")
        object.__setattr__(self, "stages", int(self.stages))
        object.__setattr__(self, "rate", float(self.rate))

    @property
    def K(self) -> np.ndarray:
        m = self.stages
        return -self.rate * np.eye(m) + self.rate * np.eye(m, k=1)

    @property
    def kappa(self) -> np.ndarray:
        v = np.zeros(self.stages)
        v[0] = 1.0
        return v

    def mean(self) -> float:
        return self.stages / self.rate

    def as_phase_type(self) -> PhaseType:
        return PhaseType(self.kappa, self.K)


def ph_density(ph: PhaseType, x) -> np.ndarray:
    """Density ``alpha exp(T x) t`` (vectorised over ``x``)."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise UsageError("phase-type density is defined for x >= 0")
    vals = [ph.alpha @ mat_exp(ph.T * v) @ ph.exit for v in x.ravel()]
    return np.asarray(vals).reshape(x.shape) if x.ndim else float(vals[0])


def ph_cdf(ph: PhaseType, x) -> np.ndarray:
    """Distribution function ``1 - alpha exp(T x) 1``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise UsageError("phase-type CDF is defined for x >= 0")
    ones = np.ones(ph.order)
    vals = [1.0 - ph.alpha @ mat_exp(ph.T * v) @ ones for v in x.ravel()]
    return np.asarray(vals).reshape(x.shape) if x.ndim else float(vals[0])


def ph_sample(ph: PhaseType, rng_seed, size: int = 1) -> np.ndarray:
    """Draw absorption times by simulating the phase chain.

    Parameters
    ----------
    rng_seed : int or numpy.random.Generator
        Explicit seed; no global RNG state is touched.
    """
    rng = np.random.default_rng(rng_seed)
    n = ph.order
    p0 = np.append(ph.alpha, max(0.0, 1.0 - ph.alpha.sum()))
    phase = rng.choice(n + 1, size=size, p=p0 / p0.sum())
    out = np.zeros(size)
    rates = -np.diag(ph.T)
    jump = np.zeros((n, n + 1))
    for i in range(n):
        if rates[i] > 0:
            row = np.append(ph.T[i], ph.exit[i])
            row[i] = 0.0
            jump[i] = row / rates[i]
    cum = np.cumsum(jump, axis=1)
    live = phase < n
    while np.any(live):
        idx = np.flatnonzero(live)
        cur = phase[idx]
        out[idx] += rng.exponential(1.0, idx.size) / rates[cur]
        u = rng.random(idx.size)
        nxt = (u[:, None] > cum[cur]).sum(axis=1)
        phase[idx] = np.minimum(nxt, n)
        live[idx] = phase[idx] < n
    return out


@dataclass(frozen=True)
class Propagator:
    """Samples of ``P(0, y)`` on a grid with a step-halving error estimate."""

    y: np.ndarray
    P: np.ndarray
    error_estimate: float


def _rk4_path(t_of, ys, substeps):
    n = np.asarray(t_of(ys[0])).shape[0]
    p = np.eye(n)
    out = [p]
    for y0, y1 in zip(ys[:-1], ys[1:]):
        h = (y1 - y0) / substeps
        for k in range(substeps):
            y = y0 + k * h
            k1 = p @ t_of(y)
            tm = t_of(y + h / 2)
            k2 = (p + h / 2 * k1) @ tm
            k3 = (p + h / 2 * k2) @ tm
            k4 = (p + h * k3) @ t_of(y + h)
            p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(p)) or np.max(np.abs(p)) > BLOWUP:
            raise NumericError(f"product integral blew up near y={y1:g}")
        out.append(p)
    return np.array(out)


def product_integral(t_of: Callable, y_max: float | None = None, steps: int = 100,
                     y_eval=None) -> Propagator:
    """Solve ``P'(y) = P(y) T(y)``, ``P(0) = I`` by fixed-step RK4.

    Parameters
    ----------
    t_of : callable
        ``y -> T(y)`` (square matrix).
    y_max : float
        Right end of the uniform output grid ``linspace(0, y_max, steps+1)``.
    steps : int
        RK4 steps (uniform grid) or sub-steps per output interval (``y_eval``).
    y_eval : array_like, optional
        Increasing output levels starting at 0; overrides ``y_max``.
    """
    if steps < 1:
        raise UsageError("steps must be >= 1")
    if y_eval is None:
        if y_max is None or not y_max > 0:
            raise UsageError("y_max must be positive")
        ys = np.linspace(0.0, float(y_max), steps + 1)
        path = _rk4_path(t_of, ys, 1)
        check = _rk4_path(t_of, np.linspace(0.0, float(y_max), 2 * steps + 1), 1)[::2]
    else:
        ys = np.asarray(y_eval, dtype=float)
        if ys[0] != 0.0:
            ys = np.concatenate([[0.0], ys])
        if np.any(np.diff(ys) <= 0):
            raise UsageError("y_eval must be strictly increasing and non-negative")
        path = _rk4_path(t_of, ys, steps)
        check = _rk4_path(t_of, ys, 2 * steps)
    return Propagator(ys, path, float(np.max(np.abs(path - check))))


@dataclass(frozen=True)
class Iph:
    """Inhomogeneous phase-type law with level-varying subintensity ``T(y)``.

    When ``rate`` (``c``) and ``cumulative`` (``C``) are given together with a
    constant ``base`` matrix, ``T(y) = c(y) * base`` and the density has the
    closed form ``alpha exp(base C(y)) t c(y)``.
    """

    alpha: np.ndarray
    T_of: Callable
    rate: Callable | None = None
    cumulative: Callable | None = None
    base: np.ndarray | None = None

    @classmethod
    def separable(cls, alpha, base, rate, cumulative) -> "Iph":
        base = np.asarray(base, dtype=float)
        _check_subintensity(base)
        return cls(np.asarray(alpha, dtype=float), lambda y: rate(y) * base, rate, cumulative, base)

    def density(self, y, steps: int = 50) -> np.ndarray:
        y = np.atleast_1d(np.asarray(y, dtype=float))
        if self.base is not None and self.cumulative is not None:
            t = -self.base.sum(axis=1)
            return np.array([self.alpha @ mat_exp(self.base * self.cumulative(v)) @ t * self.rate(v)
                             for v in y])
        prop = product_integral(self.T_of, steps=steps, y_eval=np.unique(np.concatenate([[0.0], y])))
        lookup = dict(zip(prop.y, prop.P))
        return np.array([self.alpha @ lookup[v] @ (-self.T_of(v).sum(axis=1)) for v in y])


def quad_density_mass(ph: PhaseType) -> float:
    """Integral of :func:`ph_density` over ``[0, 50/|max diag|]`` by adaptive quadrature."""
    top = 50.0 / np.max(np.abs(np.diag(ph.T)))
    return integrate.quad(lambda v: ph_density(ph, v), 0.0, top, limit=200)[0]
