"""Descriptors of the discretised process by two independent linear-algebra routes.

``solve_transient`` works with the killed level chain directly: one sparse
solve gives the expected occupation of every (bin, state) pair, and every
absorption mass is occupation times exit rate.

``solve_stationary`` closes the chain into a recurrent one: each absorption
is held for an Exp(1) time, then the process travels bin by bin back to the
start level and waits an Exp(1) time in a pre-start state before restarting.
Stationary masses divided by the pre-start mass give the same descriptors,
which makes the two backends a mutual check.

Composite states are ordered level-major: ``index = bin * S + state``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .errors import SolverError, UsageError
from .grid import GridModel

SCHEMA_VERSION = 1
COND_WARN = 1e12
REFINE_STEPS = 2


@dataclass
class DescriptorSet:
    """Competing-risk masses, kill-level distributions and occupation times.

    Per-level arrays are masses per bin, shape ``(n_bins, S)``; divide by
    bin widths (:meth:`density`) for densities. ``lower``/``upper`` are the
    probabilities of leaving through ``c``/``d`` per exit state.

    With ``c = 0``: ``lower`` is the probability of ruin before non-ruin
    termination, and ``kill_plus`` the distribution of the surplus at a
    non-ruin termination that precedes ruin. With ``c < 0``: ``kill_minus``
    on negative levels is the deficit at ruin by termination and
    ``kill_plus`` the level at a non-ruin termination preceding it.
    """

    edges: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    kill_plus: np.ndarray
    kill_minus: np.ndarray
    q_kill: np.ndarray
    bands: list
    band_occupation: np.ndarray
    names: tuple
    base_of: np.ndarray
    horizon_cap: float = 0.0
    occupation_bins: np.ndarray | None = None
    std_errors: dict | None = None
    provenance: dict = field(default_factory=dict)

    ARRAYS = ("lower", "upper", "kill_plus", "kill_minus", "q_kill", "band_occupation")

    @property
    def widths(self):
        return np.diff(self.edges)

    @property
    def centers(self):
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def density(self, name: str) -> np.ndarray:
        return getattr(self, name) / self.widths[:, None]

    def total(self, name: str) -> float:
        return float(np.sum(getattr(self, name)))

    def total_probability(self) -> float:
        """Mass of every classified outcome; 1 when nothing is left unresolved."""
        return float(sum(self.total(a) for a in ("lower", "upper", "kill_plus", "kill_minus",
                                                 "q_kill")) + self.horizon_cap)

    def psi_ruin_boundary(self) -> np.ndarray:
        """Probability of leaving through ``c`` before any termination, per state."""
        return self.lower

    def psi_plus_density(self):
        """Levels and density of the level at non-ruin termination."""
        return self.centers, self.density("kill_plus")

    def psi_minus_density(self):
        """Deficits ``y > 0`` and density of ``-R`` at ruin by termination."""
        neg = self.centers < 0
        return -self.centers[neg][::-1], self.density("kill_minus")[neg][::-1]

    def aggregate(self) -> "DescriptorSet":
        """Collapse augmented states onto their base states."""
        n_base = int(self.base_of.max()) + 1
        onto = np.zeros((len(self.base_of), n_base))
        onto[np.arange(len(self.base_of)), self.base_of] = 1.0
        names = tuple(self.names[int(np.flatnonzero(self.base_of == b)[0])].split("[")[0]
                      for b in range(n_base))
        ses = None
        if self.std_errors is not None:
            ses = {k: np.sqrt((v ** 2) @ onto) if np.ndim(v) else v
                   for k, v in self.std_errors.items()}
        return DescriptorSet(self.edges, self.lower @ onto, self.upper @ onto,
                             self.kill_plus @ onto, self.kill_minus @ onto, self.q_kill @ onto,
                             list(self.bands), self.band_occupation @ onto, names,
                             np.arange(n_base), self.horizon_cap,
                             None if self.occupation_bins is None else self.occupation_bins @ onto,
                             ses, dict(self.provenance))

    def max_difference(self, other: "DescriptorSet") -> float:
        return max(float(np.max(np.abs(getattr(self, a) - getattr(other, a)), initial=0.0))
                   for a in self.ARRAYS)

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "edges": self.edges.tolist(),
               "names": list(self.names), "base_of": self.base_of.tolist(),
               "bands": [list(b) for b in self.bands], "horizon_cap": self.horizon_cap,
               "provenance": self.provenance}
        for a in self.ARRAYS:
            out[a] = getattr(self, a).tolist()
        out["occupation_bins"] = None if self.occupation_bins is None \
            else self.occupation_bins.tolist()
        out["std_errors"] = None if self.std_errors is None else \
            {k: np.asarray(v).tolist() for k, v in self.std_errors.items()}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, data: dict) -> "DescriptorSet":
        if data.get("schema_version") != SCHEMA_VERSION:
            raise UsageError(f"unsupported descriptor schema {data.get('schema_version')}")
        arr = {a: np.array(data[a], dtype=float) for a in cls.ARRAYS}
        occ = data.get("occupation_bins")
        se = data.get("std_errors")
        return cls(np.array(data["edges"], float), arr["lower"], arr["upper"], arr["kill_plus"],
                   arr["kill_minus"], arr["q_kill"], [tuple(b) for b in data["bands"]],
                   arr["band_occupation"], tuple(data["names"]), np.array(data["base_of"]),
                   float(data["horizon_cap"]), None if occ is None else np.array(occ, float),
                   None if se is None else {k: np.array(v, float) for k, v in se.items()},
                   data.get("provenance", {}))


def band_overlap(edges: np.ndarray, bands) -> np.ndarray:
    """Fraction of each bin inside each band, shape ``(n_bands, n_bins)``."""
    lo, hi = edges[:-1], edges[1:]
    out = np.zeros((len(bands), len(lo)))
    for r, (a, b) in enumerate(bands):
        if not a < b:
            raise UsageError(f"band ({a}, {b}) is empty")
        out[r] = np.clip(np.minimum(hi, b) - np.maximum(lo, a), 0.0, None) / (hi - lo)
    return out


@dataclass(frozen=True)
class LevelChain:
    """Killed CTMC on (bin, state) pairs with exit rates into the accumulators.

    ``Q`` is the transient block; exits are kept as per-state rate vectors:
    ``to_lower``/``to_upper`` (leaving through ``c``/``d``), ``kill_plus``,
    ``kill_minus`` and ``q_rate``. Rows of ``Q`` plus all exit rates sum to 0.
    """

    grid: GridModel
    Q: sparse.csr_matrix
    to_lower: np.ndarray
    to_upper: np.ndarray
    kill_plus: np.ndarray
    kill_minus: np.ndarray
    q_rate: np.ndarray

    @property
    def n_transient(self) -> int:
        return self.Q.shape[0]

    def exit_total(self) -> np.ndarray:
        return self.to_lower + self.to_upper + self.kill_plus + self.kill_minus + self.q_rate

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.Q.sum(axis=1)).ravel() + self.exit_total()


def level_rates(g: GridModel):
    """Upwind finite-volume rates to the next bin up and down, shape ``(n_bins, S)``.

    Diffusive flux across an interface uses the distance between the two bin
    centres (a full bin width at the domain ends).
    """
    h = g.widths
    ctr = g.centers
    gap_up = np.append(np.diff(ctr), h[-1])
    gap_down = np.insert(np.diff(ctr), 0, h[0])
    half_var = 0.5 * g.variance
    up = half_var / (h * gap_up)[:, None] + np.maximum(g.drift, 0.0) / h[:, None]
    down = half_var / (h * gap_down)[:, None] + np.maximum(-g.drift, 0.0) / h[:, None]
    return up, down


def build_level_chain(g: GridModel) -> LevelChain:
    nb, s = g.n_bins, g.n_states
    n = nb * s
    up, down = level_rates(g)
    rows, cols, vals = [], [], []
    env = g.generator.copy()
    idx = np.arange(s)
    diag = env[:, idx, idx].copy()
    env[:, idx, idx] = 0.0
    kk, ii, jj = np.nonzero(env)
    rows.append(kk * s + ii)
    cols.append(kk * s + jj)
    vals.append(env[kk, ii, jj])
    comp = np.arange(n).reshape(nb, s)
    rows += [comp[:-1].ravel(), comp[1:].ravel()]
    cols += [comp[1:].ravel(), comp[:-1].ravel()]
    vals += [up[:-1].ravel(), down[1:].ravel()]
    q_rate = (g.q * g.premium_mask)[None, :] * np.ones((nb, 1))
    to_lower = np.zeros((nb, s))
    to_lower[0] = down[0]
    to_upper = np.zeros((nb, s))
    to_upper[-1] = up[-1]
    out = diag - up - down - q_rate
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(out.ravel())
    mat = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n, n))
    return LevelChain(g, mat, to_lower.ravel(), to_upper.ravel(), g.kill_plus.ravel(),
                      g.kill_minus.ravel(), q_rate.ravel())


def _factor(mat: sparse.spmatrix, what: str):
    try:
        lu = splinalg.splu(mat.tocsc())
    except RuntimeError as exc:
        raise SolverError(f"{what} is singular: {exc}") from exc
    diag = np.abs(lu.U.diagonal())
    if diag.min() <= 1e-14 * max(diag.max(), 1.0):
        raise SolverError(f"{what} is numerically singular (no reachable exit from some states)")
    return lu


def _refined_solve(mat, lu, rhs, trans="N"):
    op = mat.T if trans == "T" else mat
    x = lu.solve(rhs, trans=trans)
    for _ in range(REFINE_STEPS):
        x = x + lu.solve(rhs - op @ x, trans=trans)
    if not np.all(np.isfinite(x)):
        raise SolverError("linear solve produced non-finite values")
    return x


def condition_estimate(mat, lu) -> float:
    """1-norm condition estimate ``|A| |A^-1|`` using the existing factorisation."""
    n = mat.shape[0]
    inv = splinalg.LinearOperator((n, n), matvec=lambda v: lu.solve(np.asarray(v, float)),
                                  rmatvec=lambda v: lu.solve(np.asarray(v, float), trans="T"),
                                  dtype=float)
    return float(splinalg.onenormest(mat) * splinalg.onenormest(inv))


def _check_condition(mat, lu, check):
    if not check:
        return None
    cond = condition_estimate(mat, lu)
    if cond > COND_WARN:
        warnings.warn(f"linear system condition estimate {cond:.2e} exceeds {COND_WARN:.0e}",
                      RuntimeWarning, stacklevel=3)
    return cond


def _assemble(chain: LevelChain, occupation: np.ndarray, bands, provenance) -> DescriptorSet:
    g = chain.grid
    nb, s = g.n_bins, g.n_states
    occ = occupation.reshape(nb, s)

    def mass(rate):
        return occ * rate.reshape(nb, s)

    overlap = band_overlap(g.edges, bands)
    band_occ = (overlap @ occ) * g.premium_mask[None, :]
    aug = g.model
    return DescriptorSet(g.edges.copy(), mass(chain.to_lower)[0], mass(chain.to_upper)[-1],
                         mass(chain.kill_plus), mass(chain.kill_minus), mass(chain.q_rate),
                         [tuple(map(float, b)) for b in bands], band_occ, aug.spec.partition.names,
                         aug.base_of, 0.0, occ, None, provenance)


def _provenance(g: GridModel, backend: str, u, i0, cond) -> dict:
    return {"backend": backend, "u": float(u), "i0": int(i0), "c": g.c, "d": g.d,
            "bins": g.n_uniform or g.n_bins, "eps": g.eps, "q": g.q, "model": g.model.spec.name,
            "condition_estimate": cond}


def solve_transient(chain: LevelChain, u: float, i0: int, bands=(), check_condition: bool = False
                    ) -> DescriptorSet:
    """Occupation and absorption masses of the killed level chain started at ``(i0, u)``.

    Raises
    ------
    SolverError
        If the transient block is singular, e.g. a state that can neither
        move, switch nor be killed.
    """
    alpha = chain.grid.initial_vector(u, i0)
    neg = (-chain.Q).tocsc()
    lu = _factor(neg, "transient block")
    cond = _check_condition(neg, lu, check_condition)
    occupation = _refined_solve(neg, lu, alpha, trans="T")
    return _assemble(chain, occupation, bands, _provenance(chain.grid, "transient", u, i0, cond))


@dataclass(frozen=True)
class AuxiliaryChain:
    """Recurrent chain obtained by closing a level chain through a regeneration loop.

    Layout: transient states, holding states (lower per state, upper per
    state, then kill_plus, kill_minus and q per composite state), the upward
    and downward transit lanes (one state per bin each), and the pre-start
    state last.
    """

    chain: LevelChain
    Q: sparse.csr_matrix
    u: float
    i0: int
    offsets: dict

    @property
    def n_total(self) -> int:
        return self.Q.shape[0]


def build_auxiliary(chain: LevelChain, u: float, i0: int) -> AuxiliaryChain:
    g = chain.grid
    nb, s = g.n_bins, g.n_states
    n = nb * s
    start = g.bin_of(u)
    off = {"transient": 0, "lower": n, "upper": n + s, "kill_plus": n + 2 * s,
           "kill_minus": 2 * n + 2 * s, "q": 3 * n + 2 * s, "lane_up": 4 * n + 2 * s,
           "lane_down": 4 * n + 2 * s + nb}
    pre = 4 * n + 2 * s + 2 * nb
    off["pre_start"] = pre
    total = pre + 1
    q_t = chain.Q.tocoo()
    rows, cols, vals = [q_t.row], [q_t.col], [q_t.data]
    comp = np.arange(n)
    bin_of_comp = comp // s

    def add(r, c, v):
        r, c, v = np.broadcast_arrays(np.asarray(r), np.asarray(c), np.asarray(v, dtype=float))
        keep = v != 0
        rows.append(r[keep].ravel())
        cols.append(c[keep].ravel())
        vals.append(v[keep].ravel())

    state_of = comp % s
    add(comp, off["lower"] + state_of, chain.to_lower)
    add(comp, off["upper"] + state_of, chain.to_upper)
    for name, rate in (("kill_plus", chain.kill_plus), ("kill_minus", chain.kill_minus),
                       ("q", chain.q_rate)):
        add(comp, off[name] + comp, rate)

    def lane_entry(k):
        k = np.asarray(k)
        return np.where(k < start, off["lane_up"] + k,
                        np.where(k > start, off["lane_down"] + k, pre))

    hold = [(off["lower"] + np.arange(s), np.zeros(s, dtype=int)),
            (off["upper"] + np.arange(s), np.full(s, nb - 1))]
    for name in ("kill_plus", "kill_minus", "q"):
        hold.append((off[name] + comp, bin_of_comp))
    for states, bins in hold:
        add(states, states, -1.0)
        add(states, lane_entry(bins), 1.0)

    h = g.widths
    k = np.arange(nb)
    up_lane, down_lane = off["lane_up"] + k, off["lane_down"] + k
    up_target = np.where(k + 1 < start, off["lane_up"] + k + 1, pre)
    up_rate = np.where(k < start, 1.0 / h, 1.0)
    add(up_lane, up_lane, -up_rate)
    add(up_lane, up_target, up_rate)
    down_target = np.where(k - 1 > start, off["lane_down"] + k - 1, pre)
    down_rate = np.where(k > start, 1.0 / h, 1.0)
    add(down_lane, down_lane, -down_rate)
    add(down_lane, down_target, down_rate)

    alpha = g.initial_vector(u, i0)
    add(pre, pre, -1.0)
    add(np.full(n, pre), comp, alpha)
    mat = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(total, total))
    return AuxiliaryChain(chain, mat, float(u), int(i0), off)


@dataclass(frozen=True)
class AuxStationary:
    """Stationary law of the auxiliary chain split into its components."""

    aux: AuxiliaryChain
    excursion: np.ndarray
    p_lower: np.ndarray
    p_upper: np.ndarray
    pi_plus: np.ndarray
    pi_minus: np.ndarray
    pi_q: np.ndarray
    lanes: np.ndarray
    p_u: float

    def total_mass(self) -> float:
        return float(sum(np.sum(a) for a in (self.excursion, self.p_lower, self.p_upper,
                                             self.pi_plus, self.pi_minus, self.pi_q, self.lanes))
                     + self.p_u)


def solve_stationary(aux: AuxiliaryChain, check_condition: bool = False) -> AuxStationary:
    """Solve ``pi Q = 0``, ``pi 1 = 1`` with the pre-start balance replaced by normalisation."""
    pre = aux.offsets["pre_start"]
    qt = aux.Q.T.tocoo()
    keep = qt.row != pre
    total = aux.n_total
    mat = sparse.csc_matrix((np.append(qt.data[keep], np.ones(total)),
                             (np.append(qt.row[keep], np.full(total, pre)),
                              np.append(qt.col[keep], np.arange(total)))), shape=(total, total))
    rhs = np.zeros(aux.n_total)
    rhs[pre] = 1.0
    lu = _factor(mat, "stationary system")
    _check_condition(mat, lu, check_condition)
    pi = _refined_solve(mat, lu, rhs)
    g = aux.chain.grid
    nb, s = g.n_bins, g.n_states
    n = nb * s
    off = aux.offsets

    def block(name, size):
        return pi[off[name]:off[name] + size]

    return AuxStationary(aux, block("transient", n).reshape(nb, s), block("lower", s),
                         block("upper", s), block("kill_plus", n).reshape(nb, s),
                         block("kill_minus", n).reshape(nb, s), block("q", n).reshape(nb, s),
                         pi[off["lane_up"]:pre], float(pi[pre]))


def descriptors_from_stationary(st: AuxStationary, bands=()) -> DescriptorSet:
    """Normalise stationary masses by the pre-start atom ``p_u``.

    Holding times are Exp(1), so a holding mass divided by ``p_u`` is the
    probability of the matching absorption per cycle, and excursion mass
    divided by ``p_u`` is the expected occupation.
    """
    if not st.p_u > 0:
        raise SolverError("pre-start atom has zero mass")
    aux = st.aux
    g = aux.chain.grid
    p = st.p_u
    overlap = band_overlap(g.edges, bands)
    occ = st.excursion / p
    band_occ = (overlap @ occ) * g.premium_mask[None, :]
    prov = _provenance(g, "stationary", aux.u, aux.i0, None)
    prov["p_u"] = p
    aug = g.model
    return DescriptorSet(g.edges.copy(), st.p_lower / p, st.p_upper / p, st.pi_plus / p,
                         st.pi_minus / p, st.pi_q / p, [tuple(map(float, b)) for b in bands],
                         band_occ, aug.spec.partition.names, aug.base_of, 0.0, occ, None, prov)


def remap_masses(values: np.ndarray, src_edges: np.ndarray, dst_edges: np.ndarray) -> np.ndarray:
    """Redistribute per-bin masses onto another binning of the same interval.

    Mass is spread uniformly within each source bin, so totals are preserved.
    """
    lo, hi = dst_edges[:-1], dst_edges[1:]
    share = np.clip(np.minimum(hi[:, None], src_edges[None, 1:])
                    - np.maximum(lo[:, None], src_edges[None, :-1]), 0.0, None)
    share /= np.diff(src_edges)[None, :]
    return share @ values


def richardson(fine: DescriptorSet, coarse: DescriptorSet) -> DescriptorSet:
    """First-order Richardson combination ``2 fine - coarse``.

    The upwind chain has an O(h) bias; when ``coarse`` uses twice the bin
    width this cancels the leading term. Per-bin masses of ``coarse`` are
    first remapped onto the fine bins. Extrapolated masses may be slightly
    negative where the density has a kink.
    """
    def comb(a, b):
        return 2.0 * a - b

    def per_bin(name):
        return comb(getattr(fine, name), remap_masses(getattr(coarse, name), coarse.edges,
                                                       fine.edges))

    occ = None
    if fine.occupation_bins is not None and coarse.occupation_bins is not None:
        occ = per_bin("occupation_bins")
    prov = dict(fine.provenance)
    prov["extrapolation"] = {"scheme": "richardson",
                             "coarse_bins": coarse.provenance.get("bins", len(coarse.edges) - 1)}
    return DescriptorSet(fine.edges.copy(), comb(fine.lower, coarse.lower),
                         comb(fine.upper, coarse.upper), per_bin("kill_plus"),
                         per_bin("kill_minus"), per_bin("q_kill"), list(fine.bands),
                         comb(fine.band_occupation, coarse.band_occupation), fine.names,
                         fine.base_of, 0.0, occ, None, prov)


def solve(grid: GridModel, u: float, i0: int, bands=(), backend: str = "transient",
          check_condition: bool = False, extrapolate: bool = False) -> DescriptorSet:
    """Build the chain and run one backend.

    With ``extrapolate`` the same model is also solved on half as many bins
    (same ``eps``) and the two results are combined by :func:`richardson`.
    """
    if extrapolate:
        from .grid import discretize
        n = grid.n_uniform or grid.n_bins
        if n < 4:
            raise UsageError("extrapolation needs at least 4 bins")
        coarse = discretize(grid.model, grid.c, grid.d, n // 2, grid.eps, grid.q)
        return richardson(solve(grid, u, i0, bands, backend, check_condition),
                          solve(coarse, u, i0, bands, backend, check_condition))
    chain = build_level_chain(grid)
    if backend == "transient":
        return solve_transient(chain, u, i0, bands, check_condition)
    if backend == "stationary":
        st = solve_stationary(build_auxiliary(chain, u, i0), check_condition)
        return descriptors_from_stationary(st, bands)
    raise UsageError(f"unknown backend {backend!r}")
