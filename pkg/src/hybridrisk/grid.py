"""Piecewise-constant space-grid approximation of an augmented model on ``[c, d]``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentedModel
from .errors import UsageError

SNAP = 1e-9


@dataclass(frozen=True)
class GridModel:
    """Bin-wise constant coefficients of an augmented model.

    Arrays are indexed ``[bin, state]`` (``[bin, state, state]`` for the
    generator). ``generator`` already carries the killing as row defect but
    not the discount ``q``, which is kept separately.
    """

    edges: np.ndarray
    drift: np.ndarray
    variance: np.ndarray
    generator: np.ndarray
    kill_plus: np.ndarray
    kill_minus: np.ndarray
    eps: float
    q: float
    premium_mask: np.ndarray
    model: AugmentedModel = field(repr=False)
    errors: dict = field(default_factory=dict)
    n_uniform: int = 0

    @property
    def n_bins(self) -> int:
        return len(self.edges) - 1

    @property
    def n_states(self) -> int:
        return self.drift.shape[1]

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def c(self) -> float:
        return float(self.edges[0])

    @property
    def d(self) -> float:
        return float(self.edges[-1])

    def bin_of(self, x: float) -> int:
        """Index of the bin ``[x_k, x_{k+1})`` holding ``x`` (the last bin is closed)."""
        if not self.c <= x <= self.d:
            raise UsageError(f"level {x} outside [{self.c}, {self.d}]")
        return int(min(np.searchsorted(self.edges, x, side="right") - 1, self.n_bins - 1))

    def level_weights(self, u: float) -> list:
        """Split a start level over the two bins whose centres bracket it.

        Returns a list of ``(bin, weight)``; beyond the outermost centres all
        weight goes to the end bin.
        """
        if not self.c <= u <= self.d:
            raise UsageError(f"start level {u} outside [{self.c}, {self.d}]")
        ctr = self.centers
        if u <= ctr[0]:
            return [(0, 1.0)]
        if u >= ctr[-1]:
            return [(self.n_bins - 1, 1.0)]
        k = int(np.searchsorted(ctr, u, side="right") - 1)
        w = (u - ctr[k]) / (ctr[k + 1] - ctr[k])
        return [(k, 1.0 - w), (k + 1, w)] if w > 0 else [(k, 1.0)]

    def initial_vector(self, u: float, i0: int) -> np.ndarray:
        """Start distribution over composite states ``k * S + s``."""
        alpha = self.model.initial_distribution(i0)
        out = np.zeros((self.n_bins, self.n_states))
        for k, w in self.level_weights(u):
            out[k] += w * alpha
        return out.ravel()


def make_edges(c: float, d: float, n_bins: int, eps: float) -> np.ndarray:
    """Uniform edges on ``[c, d]`` with forced edges at ``0`` and ``+-eps``.

    Uniform edges closer than ``SNAP * h`` to a forced edge are dropped.
    """
    uniform = np.linspace(c, d, n_bins + 1)
    h = (d - c) / n_bins
    forced = [v for v in (0.0, -eps, eps) if c < v < d]
    keep = [v for v in uniform[1:-1] if all(abs(v - f) > SNAP * h for f in forced)]
    return np.unique(np.array([c, d] + keep + forced, dtype=float))


def _blend_weight(x, eps):
    x = np.asarray(x, dtype=float)
    if eps <= 0:
        return (x >= 0).astype(float)
    return np.clip((x + eps) / (2 * eps), 0.0, 1.0)


def _coefficients(aug: AugmentedModel, x: np.ndarray, eps: float):
    n = aug.n_states
    states = np.broadcast_to(np.arange(n), x.shape + (n,))
    levels = np.broadcast_to(x[:, None], states.shape)
    mu = np.asarray(aug.spec.drift(states, levels), dtype=float)
    sig = np.asarray(aug.spec.diffusion(states, levels), dtype=float)
    if aug.regimes is None:
        gen, kp, km = aug.killing.rates(x)
    else:
        below, above = aug.regimes
        w = _blend_weight(x, eps)
        parts = []
        for a, b in zip(below.rates(x), above.rates(x)):
            ww = w.reshape(w.shape + (1,) * (a.ndim - 1))
            parts.append((1 - ww) * a + ww * b)
        gen, kp, km = parts
    jump = ~aug.spec.partition.premium_mask
    sig = np.where(jump, 0.0, sig)
    return mu, sig ** 2, np.array(gen), np.array(kp), np.array(km)


def discretize(aug: AugmentedModel, c: float, d: float, n_bins: int, eps: float | None = None,
               q: float = 0.0, samples_per_bin: int = 4) -> GridModel:
    """Midpoint-evaluated piecewise-constant approximation on ``[c, d]``.

    Inside ``(-eps, eps)`` the generator and killing rates are blended
    linearly between the ``x < 0`` and ``x >= 0`` regimes, which turns the
    jump at zero into a Lipschitz ramp. ``eps`` defaults to one bin width.
    The reported ``errors`` are sup-norm gaps between the bin values and the
    (blended) coefficients on ``samples_per_bin`` interior points per bin.
    """
    if not (c <= 0 < d):
        raise UsageError("domain must satisfy c <= 0 < d")
    if int(n_bins) < 2:
        raise UsageError("need at least 2 bins")
    if q < 0:
        raise UsageError("discount rate q must be non-negative")
    n_bins = int(n_bins)
    if eps is None:
        eps = (d - c) / n_bins
    if eps < 0:
        raise UsageError("eps must be non-negative")
    edges = make_edges(float(c), float(d), n_bins, float(eps))
    centers = 0.5 * (edges[:-1] + edges[1:])
    mu, var, gen, kp, km = _coefficients(aug, centers, eps)
    if not all(np.all(np.isfinite(a)) for a in (mu, var, gen, kp, km)):
        raise UsageError("model coefficients are not finite on the grid")

    frac = (np.arange(samples_per_bin) + 0.5) / samples_per_bin
    widths = np.diff(edges)
    sample = (edges[:-1, None] + widths[:, None] * frac[None, :]).ravel()
    s_mu, s_var, s_gen, s_kp, s_km = _coefficients(aug, sample, eps)
    rep = np.repeat(np.arange(len(centers)), samples_per_bin)
    errors = {
        "drift": float(np.max(np.abs(s_mu - mu[rep]))),
        "diffusion": float(np.max(np.abs(np.sqrt(s_var) - np.sqrt(var[rep])))),
        "generator": float(np.max(np.abs(s_gen - gen[rep]))),
        "kill": float(max(np.max(np.abs(s_kp - kp[rep])), np.max(np.abs(s_km - km[rep])))),
    }
    return GridModel(edges, mu, var, gen, kp, km, float(eps), float(q),
                     aug.spec.partition.premium_mask, aug, errors, n_bins)
