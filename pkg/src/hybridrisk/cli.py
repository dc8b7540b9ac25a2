"""Command-line entry point: ``hybridrisk {validate,jump-density,simulate,solve,run}``.

Every command reads one YAML config (see ``docs/formats.md``); flags
override the matching config keys. Outputs carry a provenance block and no
timestamps, so a rerun with the same config and seed is byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import io
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .core import check_killed, validate_model
from .errors import HybridRiskError, NumericError
from .grid import discretize
from .jumps import jump_intensity_density
from .simulate import estimate_descriptors
from .solver import DescriptorSet, solve

TOTALS = ("lower", "upper", "kill_plus", "kill_minus", "q_kill")


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "--short", "HEAD"], capture_output=True,
                             text=True, cwd=Path(__file__).resolve().parent, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def provenance(cfg: RunConfig, method: str) -> dict:
    prov = {"version": __version__, "git": git_revision(), "method": method,
            "model": cfg.aug.spec.name, "u": cfg.u, "i0": cfg.i0, "c": cfg.c, "d": cfg.d,
            "q": cfg.q}
    if method == "mc":
        prov.update(seed=cfg.seed, paths=cfg.paths, step=cfg.step, hist_bins=cfg.hist_bins,
                    horizon_cap=cfg.horizon_cap)
    else:
        prov.update(bins=cfg.bins, eps=cfg.eps, extrapolate=cfg.extrapolate,
                    tolerances="sparse LU, 2 refinement steps")
    return prov


def _csv_text(prov: dict, header, rows) -> str:
    buf = io.StringIO()
    for k in sorted(prov):
        buf.write(f"# {k}: {prov[k]}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.12g}" if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def run_method(cfg: RunConfig, method: str) -> DescriptorSet:
    if method == "mc":
        ds = estimate_descriptors(cfg.aug, cfg.u, cfg.i0, cfg.paths, cfg.step, cfg.c, cfg.d,
                                  cfg.q, cfg.bands, cfg.seed, n_bins=cfg.hist_bins,
                                  horizon_cap=cfg.horizon_cap, threads=cfg.threads)
    else:
        grid = discretize(cfg.aug, cfg.c, cfg.d, cfg.bins, cfg.eps, cfg.q)
        ds = solve(grid, cfg.u, cfg.i0, cfg.bands, backend=method, extrapolate=cfg.extrapolate)
        ds.provenance["grid_errors"] = grid.errors
    ds.provenance.update(provenance(cfg, method))
    return ds


def write_outputs(ds: DescriptorSet, cfg: RunConfig, method: str, out: Path) -> list:
    prov = provenance(cfg, method)
    agg = ds.aggregate()
    se = agg.std_errors
    files = []
    path = out / f"descriptors_{method}.json"
    _write(path, ds.to_json() + "\n")
    files.append(path)

    header = ["state"] + list(TOTALS) + ([f"{t}_se" for t in TOTALS] if se else [])
    n_base = len(agg.names)
    per_state = {t: getattr(agg, t).reshape(-1, n_base).sum(axis=0) for t in TOTALS}
    rows = []
    for j, name in enumerate(agg.names):
        row = [name] + [float(per_state[t][j]) for t in TOTALS]
        if se:
            n = ds.provenance["paths"]
            row += [float(np.sqrt(per_state[t][j] * (1 - per_state[t][j]) / n)) for t in TOTALS]
        rows.append(row)
    path = out / f"totals_{method}.csv"
    _write(path, _csv_text(prov, header, rows))
    files.append(path)

    dens = ("kill_plus", "kill_minus", "q_kill")
    header = ["bin_lo", "bin_hi", "level", "state"] + [f"{t}_density" for t in dens] + \
        ([f"{t}_density_se" for t in dens] if se else [])
    rows = []
    w = agg.widths
    for k in range(len(w)):
        for j, name in enumerate(agg.names):
            row = [float(agg.edges[k]), float(agg.edges[k + 1]), float(agg.centers[k]), name]
            row += [float(getattr(agg, t)[k, j] / w[k]) for t in dens]
            if se:
                row += [float(se[t][k, j] / w[k]) for t in dens]
            rows.append(row)
    path = out / f"densities_{method}.csv"
    _write(path, _csv_text(prov, header, rows))
    files.append(path)

    if agg.bands:
        header = ["band_lo", "band_hi", "state", "occupation"] + (["occupation_se"] if se else [])
        rows = []
        for r, (a, b) in enumerate(agg.bands):
            for j, name in enumerate(agg.names):
                row = [a, b, name, float(agg.band_occupation[r, j])]
                if se:
                    row.append(float(se["band_occupation"][r, j]))
                rows.append(row)
        path = out / f"occupation_{method}.csv"
        _write(path, _csv_text(prov, header, rows))
        files.append(path)
    return files


def comparison_rows(results: dict, cfg: RunConfig):
    """Rows ``quantity, transient, stationary, mc, mc_se, z, closed_form``."""
    quantities = [(t, lambda ds, t=t: ds.total(t)) for t in TOTALS]
    quantities.append(("horizon_cap", lambda ds: ds.horizon_cap))
    for r, (a, b) in enumerate(cfg.bands):
        quantities.append((f"occupation[{a:g},{b:g}]",
                           lambda ds, r=r: float(np.sum(ds.band_occupation[r]))))
    mc = results.get("mc")
    cf = cfg.closed_form
    rows = []
    for name, get in quantities:
        vals = {m: get(ds) for m, ds in results.items()}
        se = float("nan")
        if mc is not None:
            if name.startswith("occupation"):
                r = [q[0] for q in quantities[len(TOTALS) + 1:]].index(name)
                se = float(np.sqrt(np.sum(mc.std_errors["band_occupation"][r] ** 2)))
            else:
                n = mc.provenance["paths"]
                se = float(np.sqrt(vals["mc"] * (1 - vals["mc"]) / n))
        ref = vals.get("transient")
        z = (vals["mc"] - ref) / se if mc is not None and ref is not None and se > 0 \
            else float("nan")
        target = cf if (name == "lower" and cf is not None) else float("nan")
        rows.append([name, vals.get("transient", float("nan")),
                     vals.get("stationary", float("nan")), vals.get("mc", float("nan")), se, z,
                     target])
    return rows


def cmd_run(cfg: RunConfig, out: Path) -> int:
    methods = ("transient", "stationary", "mc") if cfg.method == "all" else (cfg.method,)
    results = {}
    for m in methods:
        results[m] = run_method(cfg, m)
        for f in write_outputs(results[m], cfg, m, out):
            print(f"wrote {f}")
    if cfg.method == "all":
        rows = comparison_rows(results, cfg)
        header = ["quantity", "transient", "stationary", "mc", "mc_se", "z_mc_vs_transient",
                  "closed_form"]
        path = out / "comparison.csv"
        _write(path, _csv_text(provenance(cfg, "all") | {"seed": cfg.seed, "paths": cfg.paths,
                                                          "step": cfg.step}, header, rows))
        print(f"wrote {path}")
        for r in rows:
            print("  " + "  ".join(f"{v:.6g}" if isinstance(v, float) else str(v) for v in r))
    else:
        ds = results[cfg.method]
        for t in TOTALS:
            print(f"  {t:>10s}: {ds.total(t):.8g}")
    return 0


def cmd_validate(cfg: RunConfig) -> int:
    grid = np.linspace(cfg.c, cfg.d, 401)
    report = validate_model(cfg.model, grid)
    print(f"base model: {report}")
    aug_report = validate_model(cfg.aug.spec, grid)
    print(f"augmented model ({cfg.aug.n_states} states): {aug_report}")
    mismatch = check_killed(cfg.aug.killing, grid)
    print(f"killing decomposition mismatch: {mismatch:.3e}")
    return 0 if report.passed and aug_report.passed and mismatch < 1e-9 else 1


def cmd_jump_density(cfg: RunConfig, args) -> int:
    model = cfg.model
    names = model.partition.names
    i = names.index(args.state) if args.state in names else cfg.i0
    ys = np.linspace(args.y_max / args.points, args.y_max, args.points)
    dens = jump_intensity_density(model, args.level, i, None, ys, direction=args.direction)
    prem = [names[p] for p in model.partition.premium_states]
    prov = {"level": args.level, "from_state": names[i], "direction": args.direction,
            "version": __version__, "git": git_revision(), "model": model.name}
    text = _csv_text(prov, ["y"] + [f"to_{p}" for p in prem],
                     [[float(y)] + [float(v) for v in row] for y, row in zip(ys, dens)])
    if args.out:
        _write(Path(args.out), text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hybridrisk", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="YAML run configuration")
        sp.add_argument("--out", help="output directory (overrides 'output')")

    common(sub.add_parser("validate", help="check model and ruin construction"))
    jd = sub.add_parser("jump-density", help="jump-size intensity density from one level")
    jd.add_argument("config")
    jd.add_argument("--level", type=float, required=True)
    jd.add_argument("--state", help="premium state name (default: i0)")
    jd.add_argument("--y-max", type=float, default=5.0)
    jd.add_argument("--points", type=int, default=200)
    jd.add_argument("--direction", choices=("down", "up"), default="down")
    jd.add_argument("--out", help="CSV file (default: stdout)")
    sim = sub.add_parser("simulate", help="Monte Carlo descriptors")
    common(sim)
    sim.add_argument("--paths", type=int)
    sim.add_argument("--step", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--threads", type=int)
    sv = sub.add_parser("solve", help="grid solver descriptors")
    common(sv)
    sv.add_argument("--backend", choices=("transient", "stationary"), default="transient")
    sv.add_argument("--bins", type=int)
    sv.add_argument("--eps", type=float)
    sv.add_argument("--domain", type=float, nargs=2, metavar=("C", "D"))
    sv.add_argument("--extrapolate", action="store_true", default=None)
    common(sub.add_parser("run", help="run the method(s) named in the config"))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        text = Path(args.config).read_text()
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    over = {}
    if args.command == "simulate":
        over = {"method": "mc", "paths": args.paths, "step": args.step, "seed": args.seed,
                "threads": args.threads}
    elif args.command == "solve":
        over = {"method": args.backend, "bins": args.bins, "eps": args.eps,
                "domain": list(args.domain) if args.domain else None,
                "extrapolate": args.extrapolate}
    try:
        cfg = load_config(text, over)
        out = Path(getattr(args, "out", None) or cfg.output)
        if args.command == "validate":
            return cmd_validate(cfg)
        if args.command == "jump-density":
            return cmd_jump_density(cfg, args)
        return cmd_run(cfg, out)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except HybridRiskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
