"""YAML run configuration: schema checks with line numbers and model assembly.

Level functions are written as numbers, small call expressions or tables::

    1.5                      constant
    "linear(a, b)"           a + b x
    "abs(k)"                 k |x|
    "pareto_drift(a, b)"     -a - b x
    "weibull_drift(beta)"    -1 / (beta x^(beta-1))
    {levels: [...], values: [...]}   piecewise linear, flat outside
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import yaml

from . import augment
from .core import LevelDependentGenerator, RiskModelSpec, StateFunction, StatePartition
from .errors import ConfigError, UsageError
from .jumps import pareto_drift, weibull_drift
from .matrixkit import ErlangClock, PhaseType
from .models import (cramer_lundberg, cramer_lundberg_ruin, dividend_poisson_observed,
                     dividend_refraction, linear_premium, markov_modulated)

METHODS = ("mc", "transient", "stationary", "all")
RUIN_TYPES = tuple(augment.BUILDERS)
_CALL = re.compile(r"^\s*([a-z_]+)\s*\(([^()]*)\)\s*$")


class _Doc:
    """Parsed YAML plus its node tree, so errors can cite a line."""

    def __init__(self, text: str):
        try:
            self.node = yaml.compose(text)
            self.data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                              None if mark is None else mark.line + 1) from exc
        if not isinstance(self.data, dict):
            raise ConfigError("config must be a mapping", 1)

    def line(self, path) -> int | None:
        node = self.node
        best = node.start_mark.line + 1 if node is not None else None
        for key in path:
            if isinstance(node, yaml.MappingNode):
                nxt = None
                for k, v in node.value:
                    if k.value == str(key):
                        best = k.start_mark.line + 1
                        nxt = v
                        break
                if nxt is None:
                    return best
                node = nxt
            elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) \
                    and key < len(node.value):
                node = node.value[key]
                best = node.start_mark.line + 1
            else:
                return best
        return best

    def fail(self, path, message):
        raise ConfigError(f"{'.'.join(map(str, path)) or '<root>'}: {message}", self.line(path))


def level_function(spec, doc: _Doc | None = None, path=()):
    """Turn a config value into a callable of the level (or a float)."""
    def fail(msg):
        if doc is None:
            raise UsageError(msg)
        doc.fail(path, msg)

    if isinstance(spec, bool):
        fail("expected a number, expression or table")
    if isinstance(spec, (int, float)):
        return float(spec)
    if isinstance(spec, dict):
        if set(spec) != {"levels", "values"}:
            fail("table needs exactly 'levels' and 'values'")
        lv = np.asarray(spec["levels"], dtype=float)
        vals = np.asarray(spec["values"], dtype=float)
        if lv.ndim != 1 or lv.shape != vals.shape or lv.size < 2 or np.any(np.diff(lv) <= 0):
            fail("table levels must increase and match values in length")

        def table(x):
            return np.interp(np.asarray(x, dtype=float), lv, vals)

        table.lipschitz = float(np.max(np.abs(np.diff(vals) / np.diff(lv))))
        return table
    if isinstance(spec, str):
        m = _CALL.match(spec)
        if not m:
            fail(f"cannot parse level function {spec!r}")
        name, raw = m.group(1), m.group(2)
        try:
            args = [float(a) for a in raw.split(",")] if raw.strip() else []
        except ValueError:
            fail(f"non-numeric argument in {spec!r}")
        arity = {"constant": 1, "linear": 2, "abs": 1, "pareto_drift": 2, "weibull_drift": 1}
        if name not in arity:
            fail(f"unknown function {name!r}; expected one of {sorted(arity)}")
        if len(args) != arity[name]:
            fail(f"{name} takes {arity[name]} argument(s)")
        if name == "constant":
            return args[0]
        if name == "linear":
            return linear_premium(*args)
        if name == "abs":
            k = args[0]

            def absf(x):
                return k * np.abs(np.asarray(x, dtype=float))

            absf.lipschitz = abs(k)
            return absf
        try:
            fn = pareto_drift(*args) if name == "pareto_drift" else weibull_drift(*args)
        except UsageError as exc:
            fail(str(exc))
        fn.lipschitz = args[1] if name == "pareto_drift" else np.inf
        return fn
    fail("expected a number, expression or table")


def phase_type(spec, doc: _Doc, path) -> PhaseType:
    """``{exponential: rate}``, ``{erlang: [stages, rate]}`` or ``{alpha: [...], T: [[...]]}``."""
    if not isinstance(spec, dict):
        doc.fail(path, "phase-type law must be a mapping")
    try:
        if "exponential" in spec:
            return PhaseType.exponential(float(spec["exponential"]))
        if "erlang" in spec:
            stages, rate = spec["erlang"]
            return PhaseType.erlang(int(stages), float(rate))
        if "alpha" in spec and "T" in spec:
            return PhaseType(np.asarray(spec["alpha"], float), np.asarray(spec["T"], float))
    except (UsageError, TypeError, ValueError) as exc:
        doc.fail(path, f"bad phase-type law: {exc}")
    doc.fail(path, "phase-type law needs 'exponential', 'erlang' or 'alpha' and 'T'")


def _clock(spec, doc, path):
    if spec is None:
        return None
    if isinstance(spec, dict) and "stages" in spec:
        try:
            return ErlangClock(int(spec["stages"]), float(spec.get("rate", 1.0)))
        except (UsageError, TypeError, ValueError) as exc:
            doc.fail(path, str(exc))
    return phase_type(spec, doc, path)


def _require(doc, mapping, key, path, kinds=None):
    if not isinstance(mapping, dict) or key not in mapping:
        doc.fail(path, f"missing required key '{key}'")
    value = mapping[key]
    if kinds is not None and (not isinstance(value, kinds) or isinstance(value, bool)):
        doc.fail(tuple(path) + (key,), f"expected {kinds if isinstance(kinds, type) else kinds}")
    return value


def _inline_model(spec, doc, path) -> RiskModelSpec:
    states = _require(doc, spec, "states", path, list)
    names, kinds, drifts, diffs = [], [], [], []
    for k, st in enumerate(states):
        p = path + ("states", k)
        if not isinstance(st, dict):
            doc.fail(p, "state entry must be a mapping")
        names.append(str(_require(doc, st, "name", p)))
        kind = st.get("type", "premium")
        if kind not in ("premium", "up", "down"):
            doc.fail(p + ("type",), "type must be premium, up or down")
        kinds.append(kind)
        drifts.append(level_function(_require(doc, st, "drift", p), doc, p + ("drift",)))
        diffs.append(level_function(st.get("diffusion", 0.0), doc, p + ("diffusion",)))
    if len(set(names)) != len(names):
        doc.fail(path + ("states",), "state names must be unique")
    order = [i for kind in ("premium", "up", "down") for i in range(len(names))
             if kinds[i] == kind]
    new_id = {old: new for new, old in enumerate(order)}
    n = len(names)
    entries = {}
    gen = spec.get("generator", {}) or {}
    if not isinstance(gen, dict):
        doc.fail(path + ("generator",), "generator must map 'from->to' to rates")
    for key, val in gen.items():
        p = path + ("generator", key)
        parts = [s.strip() for s in str(key).split("->")]
        if len(parts) != 2 or parts[0] not in names or parts[1] not in names or \
                parts[0] == parts[1]:
            doc.fail(p, f"bad transition {key!r}; use 'from->to' with known, distinct states")
        entries[(new_id[names.index(parts[0])], new_id[names.index(parts[1])])] = \
            level_function(val, doc, p)

    def gen_fn(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (n, n))
        for (i, j), f in entries.items():
            out[..., i, j] = f(x) if callable(f) else f
        idx = np.arange(n)
        out[..., idx, idx] = -out.sum(axis=-1)
        return out

    part = StatePartition(
        tuple(new_id[i] for i in range(n) if kinds[i] == "premium"),
        tuple(new_id[i] for i in range(n) if kinds[i] == "up"),
        tuple(new_id[i] for i in range(n) if kinds[i] == "down"),
        tuple(names[i] for i in order))
    lips = [getattr(f, "lipschitz", np.inf) for f in drifts + diffs if callable(f)]
    return RiskModelSpec(part, StateFunction([drifts[i] for i in order]),
                         StateFunction([diffs[i] for i in order]),
                         LevelDependentGenerator(n, gen_fn), max(lips, default=0.0),
                         str(spec.get("name", "inline")))


def build_model(spec, doc: _Doc, path=("model",)) -> RiskModelSpec:
    if not isinstance(spec, dict):
        doc.fail(path, "model must be a mapping")
    if "states" in spec:
        model = _inline_model(spec, doc, path)
    else:
        preset = _require(doc, spec, "preset", path, str)
        params = spec.get("params", {}) or {}
        pp = path + ("params",)
        try:
            if preset == "cramer_lundberg":
                model = cramer_lundberg(
                    level_function(_require(doc, params, "premium", pp), doc, pp + ("premium",)),
                    float(_require(doc, params, "claim_rate", pp, (int, float))),
                    phase_type(_require(doc, params, "claim", pp), doc, pp + ("claim",)),
                    level_function(params.get("volatility", 0.0), doc, pp + ("volatility",)))
            elif preset == "markov_modulated":
                env = _require(doc, params, "env_generator", pp, list)
                prem = [level_function(v, doc, pp + ("premiums", k))
                        for k, v in enumerate(_require(doc, params, "premiums", pp, list))]
                rates = [float(v) for v in _require(doc, params, "claim_rates", pp, list)]
                claims = [phase_type(v, doc, pp + ("claims", k))
                          for k, v in enumerate(_require(doc, params, "claims", pp, list))]
                vols = params.get("volatilities")
                if vols is not None:
                    vols = [level_function(v, doc, pp + ("volatilities", k))
                            for k, v in enumerate(vols)]
                model = markov_modulated(env, prem, rates, claims, vols)
            else:
                doc.fail(path + ("preset",), f"unknown preset {preset!r}; expected "
                                             "cramer_lundberg or markov_modulated")
        except UsageError as exc:
            if isinstance(exc, ConfigError):
                raise
            doc.fail(pp, str(exc))
    div = spec.get("dividends")
    if div is not None:
        dp = path + ("dividends",)
        kind = _require(doc, div, "type", dp, str)
        try:
            if kind == "refraction":
                model = dividend_refraction(model, float(_require(doc, div, "barrier", dp)),
                                            float(_require(doc, div, "rate", dp)),
                                            float(div.get("width", 1e-6)))
            elif kind == "poisson":
                model = dividend_poisson_observed(
                    model, float(_require(doc, div, "barrier", dp)),
                    float(_require(doc, div, "obs_rate", dp)),
                    float(_require(doc, div, "payout", dp)))
            else:
                doc.fail(dp + ("type",), "dividend type must be refraction or poisson")
        except UsageError as exc:
            if isinstance(exc, ConfigError):
                raise
            doc.fail(dp, str(exc))
    return model


def _state_rate(spec, model, doc, path):
    """Per-state level function ``omega(i, x)`` from a single function or a name mapping."""
    names = model.partition.names
    if isinstance(spec, dict) and "levels" not in spec:
        funcs = [0.0] * model.n_states
        for key, val in spec.items():
            if key not in names:
                doc.fail(path + (key,), f"unknown state {key!r}")
            funcs[names.index(key)] = level_function(val, doc, path + (key,))
    else:
        funcs = [level_function(spec, doc, path)] * model.n_states
    return StateFunction(funcs)


def _reweigh(spec, model, doc, path):
    if spec is None:
        return None
    names = model.partition.names
    n = model.n_states
    entries = {}
    for key, val in spec.items():
        parts = [s.strip() for s in str(key).split("->")]
        if len(parts) != 2 or parts[0] not in names or parts[1] not in names:
            doc.fail(path + (key,), f"bad reweighing entry {key!r}")
        entries[(names.index(parts[0]), names.index(parts[1]))] = \
            level_function(val, doc, path + (key,))

    def fn(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape + (n, n))
        for (i, j), f in entries.items():
            out[..., i, j] = f(x) if callable(f) else f
        return out

    return fn


def build_ruin(spec, model: RiskModelSpec, doc: _Doc, path=("ruin",)):
    kind = _require(doc, spec, "type", path, str)
    if kind not in RUIN_TYPES:
        doc.fail(path + ("type",), f"unknown ruin type {kind!r}; expected one of {RUIN_TYPES}")
    try:
        if kind == "infinite":
            return augment.build_infinite_horizon(model)
        if kind == "erlang":
            return augment.build_erlang_horizon(
                model, _clock(_require(doc, spec, "horizon", path), doc, path + ("horizon",)))
        if kind == "poisson":
            return augment.build_poissonian(model, float(_require(doc, spec, "rate", path,
                                                                  (int, float))))
        if kind == "parisian":
            return augment.build_cumulative_parisian(
                model, _clock(_require(doc, spec, "grace", path), doc, path + ("grace",)))
        if kind == "omega":
            return augment.build_omega(
                model, _state_rate(_require(doc, spec, "omega", path), model, doc,
                                   path + ("omega",)))
        omega = spec.get("omega")
        return augment.build_generalized_omega(
            model, _reweigh(spec.get("reweigh_plus"), model, doc, path + ("reweigh_plus",)),
            _reweigh(spec.get("reweigh_minus"), model, doc, path + ("reweigh_minus",)),
            _clock(spec.get("horizon"), doc, path + ("horizon",)),
            _clock(spec.get("grace"), doc, path + ("grace",)),
            None if omega is None else _state_rate(omega, model, doc, path + ("omega",)))
    except UsageError as exc:
        if isinstance(exc, ConfigError):
            raise
        doc.fail(path, str(exc))


@dataclass
class RunConfig:
    """Validated run description."""

    model: RiskModelSpec
    aug: Any
    method: str
    c: float
    d: float
    u: float
    i0: int
    bins: int | None = None
    eps: float | None = None
    q: float = 0.0
    bands: list = field(default_factory=list)
    seed: int = 0
    paths: int | None = None
    step: float | None = None
    threads: int = 1
    horizon_cap: float = 1e4
    extrapolate: bool = False
    hist_bins: int = 200
    output: str = "out"
    closed_form: float | None = None
    raw: dict = field(default_factory=dict)


_TOP_KEYS = {"model", "ruin", "method", "domain", "u", "i0", "bins", "eps", "q", "bands", "seed",
             "paths", "step", "threads", "horizon_cap", "extrapolate", "hist_bins", "output"}


def load_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a YAML config; ``overrides`` replace top-level keys."""
    doc = _Doc(text)
    data = dict(doc.data)
    for k, v in (overrides or {}).items():
        if v is not None:
            data[k] = v
    doc.data = data
    unknown = sorted(set(data) - _TOP_KEYS)
    if unknown:
        doc.fail((unknown[0],), f"unknown key; allowed keys are {sorted(_TOP_KEYS)}")
    model = build_model(_require(doc, data, "model", ()), doc)
    aug = build_ruin(_require(doc, data, "ruin", ()), model, doc)
    method = _require(doc, data, "method", (), str)
    if method not in METHODS:
        doc.fail(("method",), f"method must be one of {METHODS}")
    dom = _require(doc, data, "domain", (), list)
    if len(dom) != 2 or not all(isinstance(v, (int, float)) for v in dom):
        doc.fail(("domain",), "domain must be [c, d]")
    c, d = float(dom[0]), float(dom[1])
    if not c <= 0 < d:
        doc.fail(("domain",), "domain must satisfy c <= 0 < d")
    u = float(_require(doc, data, "u", (), (int, float)))
    if not c <= u < d:
        doc.fail(("u",), "u must lie in [c, d)")
    i0 = data.get("i0", 0)
    names = model.partition.names
    if isinstance(i0, str):
        if i0 not in names:
            doc.fail(("i0",), f"unknown state {i0!r}")
        i0 = names.index(i0)
    if not (isinstance(i0, int) and 0 <= i0 < model.n_states and model.partition.premium_mask[i0]):
        doc.fail(("i0",), "i0 must name a premium state")
    cfg = RunConfig(model, aug, method, c, d, u, int(i0), raw=data)
    if method in ("transient", "stationary", "all"):
        cfg.bins = int(_require(doc, data, "bins", (), int))
        if cfg.bins < 2:
            doc.fail(("bins",), "bins must be >= 2")
    if method in ("mc", "all"):
        cfg.paths = int(_require(doc, data, "paths", (), int))
        cfg.step = float(_require(doc, data, "step", (), (int, float)))
        if cfg.paths < 1 or cfg.step <= 0:
            doc.fail(("paths",), "paths must be >= 1 and step > 0")
    for key, kinds in (("eps", (int, float)), ("q", (int, float)), ("seed", int),
                       ("threads", int), ("horizon_cap", (int, float)), ("hist_bins", int),
                       ("output", str), ("extrapolate", bool)):
        if key in data and data[key] is not None:
            val = data[key]
            if not isinstance(val, kinds) or (kinds != bool and isinstance(val, bool)):
                doc.fail((key,), f"expected {kinds}")
            setattr(cfg, key, val)
    if cfg.q < 0:
        doc.fail(("q",), "q must be non-negative")
    bands = data.get("bands", []) or []
    for k, b in enumerate(bands):
        if not (isinstance(b, list) and len(b) == 2 and c <= b[0] < b[1] <= d):
            doc.fail(("bands", k), "band must be [a, b] with c <= a < b <= d")
    cfg.bands = [tuple(map(float, b)) for b in bands]
    cfg.closed_form = _classical_ruin(data, cfg, doc)
    return cfg


def _classical_ruin(data, cfg: RunConfig, doc: _Doc):
    """Closed-form ruin probability when the run is the plain compound-Poisson case."""
    model, ruin = data["model"], data["ruin"]
    params = model.get("params", {}) or {}
    if model.get("preset") != "cramer_lundberg" or ruin.get("type") != "infinite" or \
            "dividends" in model or cfg.c != 0 or cfg.q > 1e-6:
        return None
    if not isinstance(params.get("premium"), (int, float)) or params.get("volatility", 0) != 0:
        return None
    claim = phase_type(params["claim"], doc, ("model", "params", "claim"))
    try:
        return float(cramer_lundberg_ruin(float(params["premium"]),
                                          float(params["claim_rate"]), claim, cfg.u))
    except UsageError:
        return None
