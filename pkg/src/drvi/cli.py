"""Command-line surface: regime presets, posterior fits, ambiguity sets,
CDF envelopes, equilibrium solves and the benchmark, each emitting files plus
a manifest with content hashes for reproducibility.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import scipy
from scipy.stats import norm as norm_dist
from scipy.stats import t as t_dist

from . import __version__
from .ambiguity import (
    BoxSimplexSet,
    cdf_envelope,
    clip_bounds,
    empirical_cdf_envelope,
    empirical_radius,
)
from .bayes import build_bayes_set, posterior_summary, summary_from_json, summary_to_json
from .experiment import (
    METRIC_NAMES,
    ExperimentConfig,
    benchmark,
    derive_seed,
    experiment_config,
    sec5_components,
    sec22_components,
    solve_truth,
)
from .mixture import build_pools, components_from_json, components_to_json
from .vi import (
    SolverConfig,
    bayes_field,
    estimate_lipschitz_params,
    extragradient,
    joint_projector,
    lipschitz_bound,
    natural_residual,
)

__all__ = ["main", "parse_samples", "run_command"]

_TABLE_FILES = {
    "residual": "table1_residual.csv",
    "utility_error": "table2_utility_error.csv",
    "sharpe": "table3_sharpe.csv",
    "raroc": "table4_raroc.csv",
}


class UsageError(Exception):
    pass


def parse_samples(path) -> np.ndarray:
    """Read a sample CSV: one row per observation, optional header."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"sample file not found: {path}")
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        raw = [row for row in reader if row]
    if not raw:
        raise ValueError(f"sample file {path} is empty")
    start = 0
    try:
        [float(v) for v in raw[0]]
    except ValueError:
        start = 1  # header row
    width = len(raw[start]) if start < len(raw) else 0
    if width == 0:
        raise ValueError(f"sample file {path} has no data rows")
    for i, row in enumerate(raw[start:], start=start + 1):
        if len(row) != width:
            raise ValueError(f"row {i} has {len(row)} fields, expected {width}")
        parsed = []
        for j, cell in enumerate(row):
            try:
                parsed.append(float(cell))
            except ValueError:
                raise ValueError(f"non-numeric cell at row {i}, column {j + 1}: {cell!r}") from None
        rows.append(parsed)
    return np.asarray(rows)


def _write_json(payload, path: Path) -> None:
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _emit_manifest(outdir: Path, command: str, config: dict, seed, outputs) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "outputs": {p.name: _sha256(p) for p in sorted(outputs)},
        "versions": {
            "drvi": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    path = outdir / f"{command}_manifest.json"
    _write_json(manifest, path)
    return path


def _apply_overrides(data: dict, pairs) -> dict:
    """Apply dot-path overrides onto a config dict; unknown keys rejected."""
    for pair in pairs or []:
        if "=" not in pair:
            raise UsageError(f"override {pair!r} is not of the form key.path=value")
        key, raw = pair.split("=", 1)
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(node, dict) or part not in node:
                raise UsageError(f"unknown override key {key!r}")
            node = node[part]
        leaf = parts[-1]
        if not isinstance(node, dict) or leaf not in node:
            raise UsageError(f"unknown override key {key!r}")
        node[leaf] = json.loads(raw) if raw and raw[0] in "[{0123456789-+.tfn\"" else raw
    return data


def _experiment_from_args(args) -> tuple[ExperimentConfig, dict]:
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
        preset = data.pop("preset", args.preset)
    else:
        data = {}
        preset = args.preset
    base = experiment_config(preset)
    cfg_dict = dataclasses.asdict(base)
    factor = cfg_dict.pop("factor")  # factor params stay at the preset values
    cfg_dict.update(data)
    cfg_dict = _apply_overrides(cfg_dict, args.set)
    if args.seed is not None:
        cfg_dict["base_seed"] = args.seed
    known = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"factor"}
    unknown = set(cfg_dict) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    for tuple_key in ("sample_sizes", "methods", "theta_c"):
        if tuple_key in cfg_dict and isinstance(cfg_dict[tuple_key], list):
            cfg_dict[tuple_key] = tuple(cfg_dict[tuple_key])
    cfg = experiment_config(preset, **{k: v for k, v in cfg_dict.items()})
    resolved = dataclasses.asdict(cfg)
    resolved["factor"] = factor
    resolved["preset"] = preset
    return cfg, _jsonable(resolved)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    return obj


def _cmd_regimes(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.preset != "sec5":
        raise UsageError(f"unknown regime preset {args.preset!r}")
    comps = sec5_components()
    path = outdir / "regimes.json"
    components_to_json(comps, path)
    _emit_manifest(outdir, "regimes", {"preset": args.preset}, None, [path])
    return 0


def _cmd_fit(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    samples = parse_samples(args.samples)
    comps = components_from_json(args.regimes)
    summary = posterior_summary(samples, comps, alpha=args.alpha, sigma_scaling=args.sigma_scaling)
    path = outdir / "summary.json"
    summary_to_json(summary, path)
    config = {"samples": str(args.samples), "regimes": str(args.regimes), "alpha": args.alpha,
              "sigma_scaling": args.sigma_scaling}
    _emit_manifest(outdir, "fit", config, None, [path])
    return 0


def _cmd_ambiguity(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = summary_from_json(args.summary)
    result = build_bayes_set(summary, args.r_c)
    l, u, feasible = clip_bounds(result.set)
    path = outdir / "ambiguity.json"
    _write_json(
        {
            "center": result.set.center.tolist(),
            "radius": result.set.radius,
            "r_c": result.r_c,
            "delta_hat": summary.delta_hat,
            "lower": l.tolist(),
            "upper": u.tolist(),
            "feasible": feasible,
        },
        path,
    )
    _emit_manifest(outdir, "ambiguity", {"summary": str(args.summary), "r_c": args.r_c}, None, [path])
    return 0


def _cmd_envelope(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    comps = sec22_components()
    sizes = [int(s) for s in args.sizes.split(",")]
    grid = np.linspace(args.grid_min, args.grid_max, args.grid_points)
    F = np.column_stack(
        [norm_dist.cdf(grid, loc=c.mean[0], scale=np.sqrt(c.covariance[0, 0])) for c in comps]
    )
    true_cdf = t_dist.cdf(grid, df=3)
    outputs = []
    for N in sizes:
        rng = np.random.default_rng(derive_seed(args.seed, "envelope", N))
        samples = np.sort(rng.standard_t(3, size=N))
        k = np.searchsorted(samples, grid, side="right")
        empirical = k / N
        summary = posterior_summary(samples[:, None], comps, alpha=args.alpha,
                                    sigma_scaling=args.sigma_scaling)
        bayes_set = BoxSimplexSet(center=summary.theta_hat, radius=summary.delta_hat)
        lower, upper, nominal = cdf_envelope(bayes_set, F)
        per_method = {"bayes": (lower, upper, nominal)}
        for kind in ("l1", "chi2"):
            rho = empirical_radius(kind, N, args.alpha)
            lo, up = empirical_cdf_envelope(kind, N, rho, k)
            per_method[kind] = (lo, up, empirical)
        for method, (lo, up, nom) in per_method.items():
            path = outdir / f"envelope_{method}_N{N}.csv"
            rows = zip(grid.tolist(), lo.tolist(), up.tolist(), nom.tolist(),
                       empirical.tolist(), true_cdf.tolist())
            _write_csv(path, ["t", "lower", "upper", "nominal", "empirical_cdf", "true_cdf"], rows)
            outputs.append(path)
    config = {
        "alpha": args.alpha,
        "sizes": sizes,
        "grid": [args.grid_min, args.grid_max, args.grid_points],
        "sigma_scaling": args.sigma_scaling,
    }
    _emit_manifest(outdir, "envelope", config, args.seed, outputs)
    return 0


def _cmd_solve(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    with open(args.problem) as fh:
        spec = json.load(fh)
    comps = components_from_json(spec["regimes"])
    with open(spec["ambiguity"]) as fh:
        amb = json.load(fh)
    set_ = BoxSimplexSet(center=np.asarray(amb["center"]), radius=float(amb["radius"]))
    kappa = float(spec.get("kappa", 0.1))
    lam = float(spec.get("lambda", 0.01))
    eps = float(spec.get("eps", 1e-6))
    max_iter = int(spec.get("max_iter", 200000))
    pool_size = int(spec.get("pool_size", 20000))
    seed = int(spec.get("seed", 0))
    pools = build_pools(comps, pool_size, derive_seed(seed, "solve-pools"))
    fld = bayes_field(pools, set_, lam, kappa)
    if "eta" in spec:
        eta = float(spec["eta"])
    else:
        _, eta = lipschitz_bound(estimate_lipschitz_params(pools, lam, kappa))
    d = fld.d
    x0 = np.full(2 * d, 1.0 / (2.0 * d))
    projector = joint_projector(d)
    result = extragradient(fld, projector, SolverConfig(eta=eta, eps=eps, max_iter=max_iter, x0=x0))
    result_path = outdir / "solve_result.json"
    _write_json(
        {
            "x_star": result.x_star.tolist(),
            "theta_star": None if result.theta_star is None else result.theta_star.tolist(),
            "iterations": result.iterations,
            "stop_value": result.stop_value,
            "converged": result.converged,
            "natural_residual": natural_residual(fld, projector, result.x_star),
            "eta": eta,
            "eps": eps,
        },
        result_path,
    )
    hist_path = outdir / "residual_history.csv"
    _write_csv(hist_path, ["iteration", "stop_value"],
               [(k, float(v)) for k, v in enumerate(result.residual_history)])
    _emit_manifest(outdir, "solve", _jsonable(spec), seed, [result_path, hist_path])
    return 0


def _cmd_truth(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg, resolved = _experiment_from_args(args)
    result = solve_truth(cfg)
    path = outdir / "truth.json"
    _write_json(
        {
            "x_c": result.x_star.tolist(),
            "iterations": result.iterations,
            "stop_value": result.stop_value,
            "converged": result.converged,
        },
        path,
    )
    hist_path = outdir / "truth_residual_history.csv"
    _write_csv(hist_path, ["iteration", "stop_value"],
               [(k, float(v)) for k, v in enumerate(result.residual_history)])
    _emit_manifest(outdir, "truth", resolved, cfg.base_seed, [path, hist_path])
    return 0


def _cmd_benchmark(args) -> int:
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    cfg, resolved = _experiment_from_args(args)
    report = benchmark(cfg)
    outputs = []
    for metric in METRIC_NAMES:
        path = outdir / _TABLE_FILES[metric]
        rows = []
        for method in cfg.methods:
            for N in cfg.sample_sizes:
                mean, var = report.cells[(method, int(N))][metric]
                rows.append(
                    (method, int(N), float(mean), float(var),
                     report.cells[(method, int(N))]["trials_completed"])
                )
        _write_csv(path, ["method", "N", "mean", "variance", "trials_completed"], rows)
        outputs.append(path)
    failures_path = outdir / "failures.json"
    _write_json({"failures": [list(f) for f in report.failures]}, failures_path)
    outputs.append(failures_path)
    config_hash = hashlib.sha256(
        json.dumps(resolved, sort_keys=True).encode()
    ).hexdigest()
    resolved["config_hash"] = config_hash
    _emit_manifest(outdir, "benchmark", resolved, cfg.base_seed, outputs)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drvi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("regimes", help="emit mixture components for a preset")
    p.add_argument("--preset", default="sec5")
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_regimes)

    p = sub.add_parser("fit", help="fit posterior weights from a sample CSV")
    p.add_argument("--samples", required=True)
    p.add_argument("--regimes", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--sigma-scaling", default="bvm", choices=("bvm", "literal"))
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("ambiguity", help="build the data-driven ambiguity set")
    p.add_argument("--summary", required=True)
    p.add_argument("--r-c", type=float, default=0.0, dest="r_c")
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_ambiguity)

    p = sub.add_parser("envelope", help="emit CDF envelope CSVs per method and N")
    p.add_argument("--sizes", default="20,50,200")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--grid-min", type=float, default=-8.0)
    p.add_argument("--grid-max", type=float, default=8.0)
    p.add_argument("--grid-points", type=int, default=200)
    p.add_argument("--sigma-scaling", default="literal", choices=("bvm", "literal"))
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_envelope)

    p = sub.add_parser("solve", help="solve one equilibrium problem from JSON")
    p.add_argument("--problem", required=True)
    p.add_argument("--out", default=".")
    p.set_defaults(func=_cmd_solve)

    for name, fn in (("truth", _cmd_truth), ("benchmark", _cmd_benchmark)):
        p = sub.add_parser(name, help=f"run the {name} computation")
        p.add_argument("--preset", default="desk", choices=("desk", "sec5"))
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--set", action="append", metavar="KEY.PATH=VALUE")
        p.add_argument("--out", default=".")
        p.set_defaults(func=fn)

    return parser


def run_command(argv) -> int:
    """Dispatch a CLI invocation: 0 success, 1 domain error, 2 usage error."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
