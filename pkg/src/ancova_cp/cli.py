"""Command line interface.

Subcommands: cp, grid, lines, profile, min, oracle, quantiles.  A JSON config
file supplies the design (keys k, n, x, contrast) and optional run defaults
(alpha, sig_tau, sig_xi, runs, seed, estimator); flags override file values;
without a config the bundled reference design is used.  The thread count for
chunk and grid fan-out comes from the ANCOVA_CP_THREADS environment variable.

Every table row carries the seed, run count and estimator that produced it,
and rerunning a command with the same inputs reproduces output files byte
for byte.  Diagnostics (for example a boundary rejection probability below
its target) are printed as warnings; the exit status is nonzero only when a
computation could not be completed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .design import (
    AncovaLayout,
    ContrastSpec,
    GeometryBundle,
    TwoStageConfig,
    _parse_design,
    build_geometry,
    critical_values,
    reference_design,
)
from .errors import AncovaError, DomainError
from .montecarlo import CoverageEstimate, SlopePoint, estimate_conditioned, estimate_naive
from .oracle import agreement_with_events
from .search import (
    GridSpec,
    LineLocus,
    SearchConfig,
    fit_low_cp_lines,
    grid_eval,
    line_profile,
    min_cp_search,
    write_grid_csv,
    write_profile_csv,
)

_RUN_KEYS = ("alpha", "sig_tau", "sig_xi", "runs", "seed", "estimator")


@dataclass(frozen=True)
class RunConfig:
    """Resolved inputs of one CLI invocation."""

    layout: AncovaLayout
    contrast: ContrastSpec
    geom: GeometryBundle
    cfg: TwoStageConfig
    runs: int
    seed: int
    estimator: str
    out: str | None


def _parse_floats(text: str, what: str, expect: int | None = None) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be comma-separated numbers, got {text!r}")
    if expect is not None and len(values) != expect:
        raise argparse.ArgumentTypeError(f"{what} needs {expect} values, got {len(values)}")
    return values


def _point_arg(text: str) -> tuple[float, ...]:
    return _parse_floats(text, "--point")


def _pair_arg(text: str) -> tuple[float, float]:
    values = _parse_floats(text, "an interval flag", 2)
    return values[0], values[1]


def _offsets_arg(text: str) -> tuple[float, ...]:
    return _parse_floats(text, "--offsets")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ancova-cp",
        description="Coverage probability of the interval selected by a two-stage F-test "
        "procedure in one-way ANCOVA.",
        epilog="Thread count for parallel evaluation: set ANCOVA_CP_THREADS (default 1).",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with the design and run defaults")
    common.add_argument("--alpha", type=float, help="nominal non-coverage level (default 0.05)")
    common.add_argument("--sig-tau", type=float, help="level of the first-stage F test (default 0.10)")
    common.add_argument("--sig-xi", type=float, help="level of the second-stage F test (default 0.10)")
    common.add_argument("--runs", type=int, help="Monte Carlo runs per estimate (default 10000)")
    common.add_argument("--seed", type=int, help="stream seed (default 0)")
    common.add_argument(
        "--estimator",
        choices=["naive", "conditioned", "both"],
        help="estimator to use; 'both' is accepted by cp only (default conditioned)",
    )
    common.add_argument("--out", help="output file (directory for min)")

    sub = parser.add_subparsers(dest="command", required=True)

    p_cp = sub.add_parser("cp", parents=[common], help="coverage probability at one slope point")
    p_cp.add_argument("--point", type=_point_arg, required=True, help="true scaled slopes, e.g. 0,0.1,0")
    p_cp.add_argument(
        "--thresholds-off",
        action="store_true",
        help="set both cutoffs to zero so the separate-slopes interval is always used",
    )

    p_grid = sub.add_parser("grid", parents=[common], help="coverage over a lattice on the cube")
    p_grid.add_argument("--bounds", type=_pair_arg, help="axis bounds lo,hi (default -0.25,0.25)")
    p_grid.add_argument("--density", type=int, help="lattice points per axis (default 21)")

    p_lines = sub.add_parser("lines", parents=[common], help="fit the two low-coverage line loci")
    p_lines.add_argument("--bounds", type=_pair_arg, help="axis bounds lo,hi (default -0.25,0.25)")
    p_lines.add_argument("--density", type=int, help="lattice points per axis (default 21)")
    p_lines.add_argument("--threshold", type=float, help="low-coverage cutoff (default 0.6)")

    p_prof = sub.add_parser("profile", parents=[common], help="coverage along one line locus")
    p_prof.add_argument("--offsets", type=_offsets_arg, required=True, help="per-axis offsets, e.g. 0,0.088,0.041")
    p_prof.add_argument("--c-range", type=_pair_arg, help="range of the line parameter (default -0.25,0.25)")
    p_prof.add_argument("--points", type=int, default=41, help="profile points (default 41)")

    p_min = sub.add_parser("min", parents=[common], help="restricted minimum-coverage search")
    p_min.add_argument("--bounds", type=_pair_arg, help="cube bounds lo,hi (default -0.25,0.25)")
    p_min.add_argument("--density", type=int, help="cube lattice points per axis (default 21)")
    p_min.add_argument("--square-bounds", type=_pair_arg, help="slope-difference bounds (default -0.2,0.2)")
    p_min.add_argument("--square-density", type=int, help="square lattice points per axis (default 21)")
    p_min.add_argument("--threshold", type=float, help="low-coverage cutoff for line fitting (default 0.6)")
    p_min.add_argument("--profile-points", type=int, default=41, help="points per line profile (default 41)")
    p_min.add_argument("--offset", type=float, default=1000.0, help="first-slope offset for min2 (default 1000)")

    p_orc = sub.add_parser("oracle", parents=[common], help="raw-data pipeline with agreement check")
    p_orc.add_argument("--point", type=_point_arg, required=True, help="true scaled slopes")
    p_orc.add_argument("--sigma", type=float, default=1.0, help="error standard deviation (default 1.0)")

    sub.add_parser("quantiles", parents=[common], help="print the cutoffs and t critical points")

    return parser


def _load_file_config(path: str | None) -> tuple[dict, AncovaLayout | None, ContrastSpec | None]:
    if path is None:
        return {}, None, None
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DomainError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise DomainError(f"{path}: top level must be an object")
    unknown = set(doc) - set(_RUN_KEYS) - {"k", "n", "x", "contrast"}
    if unknown:
        raise DomainError(f"{path}: unknown keys {sorted(unknown)}")
    layout = contrast = None
    if any(key in doc for key in ("k", "n", "x", "contrast")):
        layout, contrast = _parse_design(doc, path)
    return {key: doc[key] for key in _RUN_KEYS if key in doc}, layout, contrast


def resolve_config(args: argparse.Namespace) -> RunConfig:
    file_cfg, layout, contrast = _load_file_config(args.config)
    if layout is None:
        layout, contrast = reference_design()

    def pick(flag, key, fallback):
        if flag is not None:
            return flag
        return file_cfg.get(key, fallback)

    alpha = float(pick(args.alpha, "alpha", 0.05))
    sig_tau = float(pick(args.sig_tau, "sig_tau", 0.10))
    sig_xi = float(pick(args.sig_xi, "sig_xi", 0.10))
    runs = int(pick(args.runs, "runs", 10_000))
    seed = int(pick(args.seed, "seed", 0))
    estimator = str(pick(args.estimator, "estimator", "conditioned"))

    geom = build_geometry(layout, contrast)
    cfg = critical_values(layout, alpha, sig_tau, sig_xi)
    return RunConfig(
        layout=layout,
        contrast=contrast,
        geom=geom,
        cfg=cfg,
        runs=runs,
        seed=seed,
        estimator=estimator,
        out=args.out,
    )


def _single_estimator(run: RunConfig) -> str:
    if run.estimator not in ("naive", "conditioned"):
        raise DomainError(f"this command needs a single estimator, got {run.estimator!r}")
    return run.estimator


def _est_line(est: CoverageEstimate) -> str:
    point = ",".join(str(v) for v in est.point.values)
    return (
        f"point=({point}) estimator={est.estimator} estimate={est.estimate:.6f} "
        f"se={est.se:.6f} runs={est.runs} seed={est.seed}"
    )


def _est_dict(est: CoverageEstimate) -> dict:
    return {
        "point": list(est.point.values),
        "estimate": est.estimate,
        "se": est.se,
        "runs": est.runs,
        "estimator": est.estimator,
        "seed": est.seed,
    }


def _grid_spec(args, run: RunConfig, default_bounds=(-0.25, 0.25)) -> GridSpec:
    bounds = getattr(args, "bounds", None) or default_bounds
    density = getattr(args, "density", None) or 21
    return GridSpec(bounds=bounds, points_per_axis=density, runs=run.runs, seed=run.seed)


def cmd_cp(args, run: RunConfig) -> int:
    cfg = run.cfg
    if args.thresholds_off:
        cfg = dataclasses.replace(cfg, l_tau=0.0, l_xi=0.0)
    names = ["naive", "conditioned"] if run.estimator == "both" else [_single_estimator(run)]
    estimates = []
    for name in names:
        fn = estimate_naive if name == "naive" else estimate_conditioned
        estimates.append(fn(SlopePoint.of(args.point), run.geom, cfg, runs=run.runs, seed=run.seed))
    for est in estimates:
        print(_est_line(est))
    if len(estimates) == 2:
        gap = abs(estimates[0].estimate - estimates[1].estimate)
        bar = 3.0 * float(np.hypot(estimates[0].se, estimates[1].se))
        if gap > bar:
            print(
                f"warning: estimators differ by {gap:.6f}, more than 3 combined SEs ({bar:.6f})",
                file=sys.stderr,
            )
    if run.out:
        write_grid_csv([(e.point, e) for e in estimates], run.out)
        print(f"wrote {run.out}")
    return 0


def cmd_grid(args, run: RunConfig) -> int:
    spec = _grid_spec(args, run)
    table = grid_eval(spec, _single_estimator(run), run.geom, run.cfg)
    best = min((est for _, est in table), key=lambda e: e.estimate)
    out = run.out or "grid.csv"
    write_grid_csv(table, out)
    print(f"wrote {len(table)} rows to {out}")
    print("minimum " + _est_line(best))
    return 0


def _lines_payload(lines: tuple[LineLocus, LineLocus]) -> dict:
    return {
        f"line{i + 1}": {
            "direction": list(line.direction),
            "offsets": list(line.offsets),
            "c_range": list(line.c_range),
        }
        for i, line in enumerate(lines)
    }


def cmd_lines(args, run: RunConfig) -> int:
    spec = _grid_spec(args, run)
    table = grid_eval(spec, _single_estimator(run), run.geom, run.cfg)
    lines = fit_low_cp_lines(table, args.threshold if args.threshold is not None else 0.6)
    payload = json.dumps(_lines_payload(lines), indent=2)
    if run.out:
        Path(run.out).write_text(payload + "\n", encoding="utf-8")
        print(f"wrote {run.out}")
    print(payload)
    return 0


def cmd_profile(args, run: RunConfig) -> int:
    k = run.geom.k
    if len(args.offsets) != k:
        raise DomainError(f"--offsets needs {k} values, got {len(args.offsets)}")
    c_range = args.c_range or (-0.25, 0.25)
    line = LineLocus(direction=(1.0,) * k, offsets=args.offsets, c_range=c_range)
    profile = line_profile(
        line,
        run.geom,
        run.cfg,
        n_points=args.points,
        runs=run.runs,
        seed=run.seed,
        estimator=_single_estimator(run),
    )
    out = run.out or "profile.csv"
    write_profile_csv(profile, out)
    print(f"wrote {len(profile.cs)} rows to {out}")
    print(f"profile minimum: c={profile.c_min:.6f} estimate={profile.cp_min:.6f}")
    return 0


def cmd_min(args, run: RunConfig) -> int:
    cube = _grid_spec(args, run)
    square = GridSpec(
        bounds=args.square_bounds or (-0.2, 0.2),
        points_per_axis=args.square_density or 21,
        runs=run.runs,
        seed=run.seed,
    )
    config = SearchConfig(
        geom=run.geom,
        cfg=run.cfg,
        estimator=_single_estimator(run),
        cube=cube,
        square=square,
        threshold=args.threshold if args.threshold is not None else 0.6,
        profile_points=args.profile_points,
        offset=args.offset,
    )
    report = min_cp_search(config)

    out_dir = Path(run.out or "min_search")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_grid_csv(list(report.cube_table), out_dir / "cube.csv")
    write_grid_csv([(est.point, est) for _, est in report.square_table], out_dir / "square.csv")
    for i, profile in enumerate(report.profiles):
        write_profile_csv(profile, out_dir / f"profile_{i + 1}.csv")
    payload = {
        "min1": _est_dict(report.min1),
        "min2": _est_dict(report.min2),
        "overall": _est_dict(report.overall),
        "argmin": list(report.argmin.values),
        "lines": _lines_payload(report.lines) if report.lines else None,
        "profile_minima": [
            {"offsets": list(p.line.offsets), "c_min": p.c_min, "cp_min": p.cp_min}
            for p in report.profiles
        ],
        "diagnostics": report.diagnostics,
    }
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")

    print("min1    " + _est_line(report.min1))
    print("min2    " + _est_line(report.min2))
    print("overall " + _est_line(report.overall))
    print(f"wrote report and tables to {out_dir}")
    for warning in report.diagnostics["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    return 0


def cmd_oracle(args, run: RunConfig) -> int:
    k = run.geom.k
    if len(args.point) != k:
        raise DomainError(f"--point needs {k} values, got {len(args.point)}")
    if not args.sigma > 0.0:
        raise DomainError(f"--sigma must be positive, got {args.sigma}")
    beta = np.concatenate([np.zeros(k), args.sigma * np.asarray(args.point)])
    report = agreement_with_events(
        beta,
        args.sigma,
        run.layout,
        run.geom,
        run.cfg,
        np.asarray(run.contrast.a),
        runs=run.runs,
        seed=run.seed,
    )
    print("raw     " + _est_line(report.raw))
    print(f"event-path rate={report.event_rate:.6f}")
    print(f"agreement={report.agreement:.6f} worst_rss_rel_error={report.worst_rss_rel_error:.3e}")
    if report.agreement < 0.999:
        print(f"warning: agreement {report.agreement:.6f} below 0.999", file=sys.stderr)
    if run.out:
        payload = {
            "raw": _est_dict(report.raw),
            "event_rate": report.event_rate,
            "agreement": report.agreement,
            "worst_rss_rel_error": report.worst_rss_rel_error,
        }
        Path(run.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {run.out}")
    return 0


def cmd_quantiles(args, run: RunConfig) -> int:
    cfg, layout = run.cfg, run.layout
    k, m = layout.k, layout.m
    rows = [
        (f"first-stage F cutoff (df {k}, {m}; level {cfg.sig_tau})", cfg.l_tau),
        (f"second-stage F cutoff (df {k - 1}, {m}; level {cfg.sig_xi})", cfg.l_xi),
        (f"t critical point, separate-slopes interval (df {m})", cfg.t_m),
        (f"t critical point, zero-slopes interval (df {m + k})", cfg.t_mk),
        (f"t critical point, common-slope interval (df {m + k - 1})", cfg.t_mk1),
    ]
    for label, value in rows:
        print(f"{label}: {value:.10f}")
    if run.out:
        payload = {
            "alpha": cfg.alpha,
            "sig_tau": cfg.sig_tau,
            "sig_xi": cfg.sig_xi,
            "l_tau": cfg.l_tau,
            "l_xi": cfg.l_xi,
            "t_m": cfg.t_m,
            "t_mk": cfg.t_mk,
            "t_mk1": cfg.t_mk1,
        }
        Path(run.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"wrote {run.out}")
    return 0


_COMMANDS = {
    "cp": cmd_cp,
    "grid": cmd_grid,
    "lines": cmd_lines,
    "profile": cmd_profile,
    "min": cmd_min,
    "oracle": cmd_oracle,
    "quantiles": cmd_quantiles,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        run = resolve_config(args)
        return _COMMANDS[args.command](args, run)
    except AncovaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
