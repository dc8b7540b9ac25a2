"""Monte Carlo simulation of the underlying hybrid SDE and its time change.

Paths are advanced together as numpy arrays. Environment switches and
killings come from thinning: each state ``i`` carries a dominating rate
``lam_bar[i]`` and candidate epochs arrive as a Poisson stream at that rate;
a candidate at ``(i, x)`` becomes a switch to ``j``, a killing or a discount
event with probability (actual rate) / ``lam_bar[i]``.

Between candidates a premium state with volatility moves by Euler-Maruyama
steps of length at most ``h`` and boundary hits inside a step are detected
with the Brownian-bridge crossing probability. Drift-only states (all jump
states, and premium states with zero volatility) follow the ODE
``dx = mu dt`` by RK4. Time spent in jump states is excised from the
operational clock, so each jump-state sojourn shows up as one jump.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentedModel
from .errors import NumericError, UsageError
from .solver import DescriptorSet

ALIVE, LOWER, UPPER, KILL_PLUS, KILL_MINUS, Q_KILL, CAPPED = range(7)
OUTCOMES = ("alive", "boundary_c", "boundary_d", "kill_plus", "kill_minus", "q_kill",
            "horizon_cap")
CHUNK = 4096
RK_SUBSTEPS = 8
DET_STEP = 1.0
RATE_MARGIN = 1.1


@dataclass(frozen=True)
class PathSample:
    """One simulated path of the time-changed process.

    ``times`` are operational times; ``jumps`` holds tuples
    ``(time, size, sign, entry_state, exit_state)``; ``real_time`` is the
    underlying clock, which equals operational plus excised time.
    """

    times: np.ndarray
    levels: np.ndarray
    env: np.ndarray
    jumps: list
    termination: str
    terminal_state: int
    terminal_level: float
    operational_time: float
    excised_time: float
    real_time: float


@dataclass(frozen=True)
class McEstimate:
    value: float
    std_error: float
    n_paths: int
    seed: int


class RunningStats:
    """Mean and centred second moment with pairwise (Chan) merging."""

    def __init__(self, shape=()):
        self.n = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add_batch(self, values: np.ndarray):
        values = np.asarray(values, dtype=float)
        k = values.shape[0]
        if k == 0:
            return
        b_mean = values.mean(axis=0)
        b_m2 = ((values - b_mean) ** 2).sum(axis=0)
        self.merge(k, b_mean, b_m2)

    def merge(self, k, b_mean, b_m2):
        n = self.n + k
        delta = b_mean - self.mean
        self.mean = self.mean + delta * (k / n)
        self.m2 = self.m2 + b_m2 + delta ** 2 * (self.n * k / n)
        self.n = n

    @property
    def std_error(self):
        if self.n < 2:
            return np.full(np.shape(self.mean), np.nan)
        return np.sqrt(self.m2 / (self.n - 1) / self.n)


def dominating_rates(aug: AugmentedModel, c: float, d: float, q: float = 0.0,
                     samples: int = 4001) -> np.ndarray:
    """Per-state bound on the total event rate, sampled on ``[c, d]`` with a margin.

    The simulator re-checks every candidate and raises if a bound is beaten.
    """
    grid = np.linspace(c, d, samples)
    grid = np.concatenate([grid, [-1e-12, 0.0]])
    mat = aug.killing.with_q(q).matrix(grid)
    idx = np.arange(aug.n_states)
    out = (-mat[:, idx, idx]).max(axis=0)
    return np.maximum(out * RATE_MARGIN, 1e-12)


class _Engine:
    def __init__(self, aug, c, d, q, h, bands, cap, lam_bar=None):
        if not (c <= 0 < d):
            raise UsageError("boundaries must satisfy c <= 0 < d")
        if not h > 0:
            raise UsageError("time step h must be positive")
        if q < 0:
            raise UsageError("discount rate q must be non-negative")
        self.aug, self.c, self.d, self.q, self.h = aug, float(c), float(d), float(q), float(h)
        self.killed = aug.killing.with_q(q)
        self.n = aug.n_states
        self.prem = aug.spec.partition.premium_mask
        self.bands = [tuple(map(float, b)) for b in bands]
        for a, b in self.bands:
            if not (self.c <= a < b <= self.d):
                raise UsageError("bands must lie inside [c, d]")
        self.cap = float(cap)
        self.lam_bar = dominating_rates(aug, c, d, q) if lam_bar is None \
            else np.asarray(lam_bar, dtype=float)

    def drift(self, s, x):
        return np.asarray(self.aug.spec.drift(s, x), dtype=float)

    def rk4(self, s, x, dt):
        hs = dt / RK_SUBSTEPS
        for _ in range(RK_SUBSTEPS):
            k1 = self.drift(s, x)
            k2 = self.drift(s, x + 0.5 * hs * k1)
            k3 = self.drift(s, x + 0.5 * hs * k2)
            k4 = self.drift(s, x + hs * k3)
            x = x + hs / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    def band_time(self, x0, x1, dt):
        """Time in each band when moving linearly from ``x0`` to ``x1`` over ``dt``."""
        lo, hi = np.minimum(x0, x1), np.maximum(x0, x1)
        span = hi - lo
        out = np.empty((len(x0), len(self.bands)))
        flat = span <= 1e-300
        for r, (a, b) in enumerate(self.bands):
            inside = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None)
            frac = np.where(flat, ((lo >= a) & (lo < b)).astype(float),
                            inside / np.where(flat, 1.0, span))
            out[:, r] = frac * dt
        return out

    def run(self, u, i0, n, rng, record=False):
        """Simulate ``n`` paths from ``(i0, u)`` and return their final :class:`_Paths` state."""
        alpha = self.aug.initial_distribution(i0)
        st = _Paths(n, len(self.bands), self.n)
        st.s[:] = rng.choice(self.n, size=n, p=alpha / alpha.sum())
        st.x[:] = float(u)
        st.clock[:] = rng.exponential(1.0, n) / self.lam_bar[st.s]
        st.record = record
        if record:
            st.trace = [[(0.0, float(u), int(st.s[p]))] for p in range(n)]
        active = np.arange(n)
        while active.size:
            sa, xa = st.s[active], st.x[active]
            sig = np.zeros(active.size)
            pm = self.prem[sa]
            if np.any(pm):
                sig[pm] = np.asarray(self.aug.spec.diffusion(sa[pm], xa[pm]), dtype=float)
            diffusive = sig > 0
            event = np.zeros(active.size, dtype=bool)
            if np.any(diffusive):
                event[diffusive] = self._diffusive(st, active[diffusive], sig[diffusive], rng)
            if not np.all(diffusive):
                event[~diffusive] = self._deterministic(st, active[~diffusive])
            ev = active[event & (st.code[active] == ALIVE)]
            if ev.size:
                self._events(st, ev, rng)
            alive = active[st.code[active] == ALIVE]
            st.code[alive[st.t_op[alive] >= self.cap]] = CAPPED
            if record:
                for p in active:
                    st.trace[p].append((float(st.t_op[p]), float(st.x[p]), int(st.s[p])))
            active = active[st.code[active] == ALIVE]
        gap = np.abs(st.t_real - st.t_op - st.t_ex)
        if np.any(gap > 1e-9 * np.maximum(st.t_real, 1.0)):
            raise NumericError("time-change bookkeeping is inconsistent")
        return st

    def _occupy(self, st, idx, x0, x1, dt):
        if self.bands:
            st.occ[idx, :, st.s[idx]] += self.band_time(x0, x1, dt)

    def _diffusive(self, st, idx, sig, rng):
        s, x0 = st.s[idx], st.x[idx]
        clock = st.clock[idx]
        dt = np.minimum(self.h, clock)
        mu = self.drift(s, x0)
        x1 = x0 + mu * dt + sig * np.sqrt(dt) * rng.standard_normal(idx.size)
        var = sig ** 2 * dt
        with np.errstate(over="ignore", invalid="ignore"):
            p_low = np.where(x1 > self.c, np.exp(-2.0 * (x0 - self.c) * (x1 - self.c) / var), 1.0)
            p_high = np.where(x1 < self.d, np.exp(-2.0 * (self.d - x0) * (self.d - x1) / var), 1.0)
        draw = rng.random(idx.size)
        low = draw < p_low
        high = ~low & (draw < p_low + p_high)
        hit = low | high
        end = np.where(low, self.c, np.where(high, self.d, x1))
        self._occupy(st, idx, x0, np.clip(x1, self.c, self.d), dt)
        st.t_op[idx] += dt
        st.t_real[idx] += dt
        st.x[idx] = end
        st.code[idx[low]] = LOWER
        st.code[idx[high]] = UPPER
        st.clock[idx] = clock - dt
        return ~hit & (clock <= self.h)

    def _deterministic(self, st, idx):
        s, x0 = st.s[idx], st.x[idx]
        clock = st.clock[idx]
        dt = np.minimum(clock, DET_STEP)
        x1 = self.rk4(s, x0, dt)
        if not np.all(np.isfinite(x1)):
            raise NumericError("deterministic flow produced non-finite levels")
        low, high = x1 <= self.c, x1 >= self.d
        hit = low | high
        frac = np.ones(idx.size)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac[low] = (x0[low] - self.c) / (x0[low] - x1[low])
            frac[high] = (self.d - x0[high]) / (x1[high] - x0[high])
        frac = np.clip(np.nan_to_num(frac, nan=1.0), 0.0, 1.0)
        used = dt * frac
        end = np.where(low, self.c, np.where(high, self.d, x1))
        prem = self.prem[s]
        self._occupy(st, idx[prem], x0[prem], end[prem], used[prem])
        st.t_op[idx[prem]] += used[prem]
        st.t_ex[idx[~prem]] += used[~prem]
        st.t_real[idx] += used
        st.x[idx] = end
        st.code[idx[low]] = LOWER
        st.code[idx[high]] = UPPER
        st.clock[idx] = clock - dt
        return ~hit & (clock <= DET_STEP)

    def _events(self, st, idx, rng):
        n = self.n
        for lo in range(0, idx.size, CHUNK):
            part = idx[lo:lo + CHUNK]
            s, x = st.s[part], st.x[part]
            mat, kp, km = self.killed.rates(x)
            rows = np.arange(part.size)
            rate = mat[rows, s].copy()
            rate[rows, s] = 0.0
            qv = self.q * self.prem[s]
            table = np.column_stack([rate, kp[rows, s], km[rows, s], qv])
            total = table.sum(axis=1)
            bound = self.lam_bar[s]
            if np.any(total > bound * (1 + 1e-9) + 1e-12):
                k = int(np.argmax(total - bound))
                raise NumericError(f"event rate {total[k]:g} in state {s[k]} at level {x[k]:g} "
                                   f"exceeds the dominating rate {bound[k]:g}")
            if np.any(table < -1e-12):
                raise NumericError("negative transition or killing rate encountered")
            pick = (np.cumsum(table, axis=1) < (rng.random(part.size) * bound)[:, None]).sum(axis=1)
            switch = pick < n
            for code, col in ((KILL_PLUS, n), (KILL_MINUS, n + 1), (Q_KILL, n + 2)):
                st.code[part[pick == col]] = code
            moved = part[switch]
            new = pick[switch]
            old = st.s[moved]
            self._jump_bookkeeping(st, moved, old, new)
            st.s[moved] = new
            alive = part[st.code[part] == ALIVE]
            st.clock[alive] = rng.exponential(1.0, alive.size) / self.lam_bar[st.s[alive]]

    def _jump_bookkeeping(self, st, idx, old, new):
        start = self.prem[old] & ~self.prem[new]
        st.jump_level[idx[start]] = st.x[idx[start]]
        st.jump_from[idx[start]] = old[start]
        done = ~self.prem[old] & self.prem[new]
        if st.record_jumps is not None and np.any(done):
            p = idx[done]
            size = st.x[p] - st.jump_level[p]
            st.record_jumps.append(np.column_stack([
                st.t_op[p], np.abs(size), np.sign(size), st.jump_from[p], new[done], p]))


class _Paths:
    """Mutable per-path state of one simulation batch."""

    def __init__(self, n, n_bands, n_states):
        self.s = np.zeros(n, dtype=np.int64)
        self.x = np.zeros(n)
        self.clock = np.zeros(n)
        self.t_op = np.zeros(n)
        self.t_ex = np.zeros(n)
        self.t_real = np.zeros(n)
        self.code = np.zeros(n, dtype=np.int8)
        self.occ = np.zeros((n, n_bands, n_states))
        self.jump_level = np.full(n, np.nan)
        self.jump_from = np.full(n, -1)
        self.record_jumps = []
        self.record = False
        self.trace = None

    def jump_table(self) -> np.ndarray:
        """Completed jumps as rows ``(time, size, sign, entry, exit, path)``."""
        if not self.record_jumps:
            return np.zeros((0, 6))
        return np.vstack(self.record_jumps)


def _check_start(u, c, d):
    if not (c <= u < d):
        raise UsageError(f"start level {u} must lie in [c, d) = [{c}, {d})")


def simulate_path(aug: AugmentedModel, u: float, i0: int, h: float, c: float, d: float,
                  seed: int, horizon_cap: float = 1e4, q: float = 0.0) -> PathSample:
    """Simulate one path and return its trajectory in operational time.

    The trace has one point per step while the path is alive; drift-only
    stretches are recorded at their end points only.
    """
    _check_start(u, c, d)
    eng = _Engine(aug, c, d, q, h, (), horizon_cap)
    st = eng.run(u, i0, 1, np.random.default_rng(seed), record=True)
    trace = st.trace[0]
    prem = aug.spec.partition.premium_mask
    keep = [p for p in trace if prem[p[2]]]
    times = np.array([p[0] for p in keep])
    jt = st.jump_table()
    jumps = [(float(r[0]), float(r[1]), int(r[2]), int(r[3]), int(r[4])) for r in jt]
    return PathSample(times, np.array([p[1] for p in keep]), np.array([p[2] for p in keep]),
                      jumps, OUTCOMES[int(st.code[0])], int(st.s[0]), float(st.x[0]),
                      float(st.t_op[0]), float(st.t_ex[0]), float(st.t_real[0]))


def simulate_jumps(aug: AugmentedModel, u: float, i0: int, n_paths: int, h: float, c: float,
                   d: float, seed: int, horizon_cap: float = 1e4) -> np.ndarray:
    """Completed jumps of ``n_paths`` paths as rows ``(time, size, sign, entry, exit, path)``."""
    _check_start(u, c, d)
    eng = _Engine(aug, c, d, 0.0, h, (), horizon_cap)
    return eng.run(u, i0, n_paths, np.random.default_rng(seed)).jump_table()


@dataclass
class _Tally:
    n_states: int
    n_bins: int
    n_bands: int
    counts: dict = field(default_factory=dict)
    occupation: RunningStats = None

    def __post_init__(self):
        self.counts = {"lower": np.zeros(self.n_states), "upper": np.zeros(self.n_states),
                       "kill_plus": np.zeros((self.n_bins, self.n_states)),
                       "kill_minus": np.zeros((self.n_bins, self.n_states)),
                       "q_kill": np.zeros((self.n_bins, self.n_states)), "horizon_cap": 0.0}
        self.occupation = RunningStats((self.n_bands, self.n_states))

    def add(self, st: _Paths, edges):
        bins = np.clip(np.searchsorted(edges, st.x, side="right") - 1, 0, self.n_bins - 1)
        np.add.at(self.counts["lower"], st.s[st.code == LOWER], 1.0)
        np.add.at(self.counts["upper"], st.s[st.code == UPPER], 1.0)
        for name, code in (("kill_plus", KILL_PLUS), ("kill_minus", KILL_MINUS),
                           ("q_kill", Q_KILL)):
            sel = st.code == code
            np.add.at(self.counts[name], (bins[sel], st.s[sel]), 1.0)
        self.counts["horizon_cap"] += float(np.sum(st.code == CAPPED))
        self.occupation.add_batch(st.occ)


def estimate_descriptors(aug: AugmentedModel, u: float, i0: int, n_paths: int, h: float,
                         c: float, d: float, q: float = 0.0, bands=(), seed: int = 0,
                         edges=None, n_bins: int = 200, horizon_cap: float = 1e4,
                         batch_size: int = 20000, threads: int = 1, lam_bar=None
                         ) -> DescriptorSet:
    """Monte Carlo estimates of every descriptor with standard errors.

    Kill levels are histogrammed on ``edges`` (default: ``n_bins`` uniform
    bins on ``[c, d]``). Batches get independent child seeds of ``seed``
    and are merged in batch order, so results do not depend on ``threads``.
    """
    _check_start(u, c, d)
    if n_paths < 1:
        raise UsageError("n_paths must be positive")
    status = "ok"
    if n_paths < 100:
        warnings.warn("fewer than 100 paths; standard errors are unreliable", RuntimeWarning,
                      stacklevel=2)
        status = "warning"
    edges = np.linspace(c, d, n_bins + 1) if edges is None else np.asarray(edges, dtype=float)
    if edges[0] != c or edges[-1] != d or np.any(np.diff(edges) <= 0):
        raise UsageError("histogram edges must increase from c to d")
    eng = _Engine(aug, c, d, q, h, bands, horizon_cap, lam_bar)
    sizes = [batch_size] * (n_paths // batch_size)
    if n_paths % batch_size:
        sizes.append(n_paths % batch_size)
    seeds = np.random.SeedSequence(seed).spawn(len(sizes))

    def one(k):
        return eng.run(u, i0, sizes[k], np.random.default_rng(seeds[k]))

    tally = _Tally(aug.n_states, len(edges) - 1, len(eng.bands))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(len(sizes))))
        for st in results:
            tally.add(st, edges)
    else:
        for k in range(len(sizes)):
            tally.add(one(k), edges)

    def freq(v):
        p = v / n_paths
        return p, np.sqrt(p * (1 - p) / n_paths)

    est, se = {}, {}
    for name, v in tally.counts.items():
        est[name], se[name] = freq(np.asarray(v, dtype=float))
    est["band_occupation"] = tally.occupation.mean
    se["band_occupation"] = tally.occupation.std_error
    prov = {"backend": "mc", "u": float(u), "i0": int(i0), "c": float(c), "d": float(d),
            "paths": int(n_paths), "h": float(h), "q": float(q), "seed": int(seed),
            "horizon_cap": float(horizon_cap), "model": aug.spec.name, "status": status}
    return DescriptorSet(edges.copy(), est["lower"], est["upper"], est["kill_plus"],
                         est["kill_minus"], est["q_kill"], list(eng.bands), est["band_occupation"],
                         aug.spec.partition.names, aug.base_of, float(est["horizon_cap"]), None,
                         {k: np.asarray(v) for k, v in se.items()}, prov)


def total_estimate(ds: DescriptorSet, name: str) -> McEstimate:
    """Total probability of one outcome with its binomial standard error."""
    p = ds.total(name) if name != "horizon_cap" else ds.horizon_cap
    n = int(ds.provenance.get("paths", 0))
    return McEstimate(p, float(np.sqrt(max(p * (1 - p), 0.0) / n)) if n else float("nan"), n,
                      int(ds.provenance.get("seed", 0)))
