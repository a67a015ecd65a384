"""``sseweak`` command-line harness.

Commands
--------
reference    exact observable mean from the master equation (t, expectation)
simulate     Monte Carlo estimate for one scheme (t, estimate, ci_halfwidth)
table        eps_0 and Delta/2 per scheme and step count
convergence  log-log slopes of eps_J against the step size

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .config import Scheme, SchemeConfig
from .errors import NumericalError
from .fileio import (
    ConfigError,
    RunManifest,
    RunSpec,
    finish_run,
    load_config,
    parse_scheme,
    read_csv,
    render_csv,
    run_dict,
    write_csv,
)
from .master import ReferenceSolution, solve_reference
from .montecarlo import EnsembleStats, epsilon_J, estimate_observable, loglog_slope
from .oscillator import FockTruncation, example1_problem

__all__ = [
    "cmd_convergence",
    "cmd_reference",
    "cmd_simulate",
    "cmd_table",
    "estimate_cost",
    "main",
]

# Runs predicted to take longer than this need --full-scale.
COST_LIMIT_S = 600.0

FULL_SCALE = {
    "level": 50,
    "initial_level": 6,
    "horizon": 100.0,
    "trajectories": 5000,
    "output_points": 100,
    "steps": [2000, 4000, 8000, 16000],
    "schemes": [Scheme.EXPLICIT_EULER, Scheme.SCHEME3, Scheme.SCHEME2],
}


def _emit(out, columns, rows, manifest) -> None:
    if out is None:
        sys.stdout.write(render_csv(columns, rows, manifest))
    else:
        write_csv(out, columns, rows, manifest)


def estimate_cost(dim: int, runs: list[tuple[int, int]], workers: int = 1) -> float:
    """Rough wall-clock seconds for ensemble runs given as ``(steps, trajectories)``.

    Calibrated on the fused column kernel: about ``0.68 + 0.001 d^2``
    microseconds per trajectory-step on one core.
    """
    per = (0.68 + 1e-3 * dim * dim) * 1e-6
    mc = sum(m * n for m, n in runs) * per / max(1, workers)
    ref = 1.5e-9 * float(dim) ** 6
    return mc + ref


def _gate(cost: float, full_scale: bool) -> None:
    print(f"estimated cost: {cost:,.0f} s ({cost / 3600:.2f} h) on this machine", file=sys.stderr)
    if cost > COST_LIMIT_S and not full_scale:
        raise ConfigError(
            f"estimated runtime {cost:,.0f} s exceeds {COST_LIMIT_S:.0f} s; pass --full-scale to run it"
        )


# -- commands -----------------------------------------------------------------


def cmd_reference(spec: RunSpec, cfg: SchemeConfig, out=None) -> ReferenceSolution:
    ref = solve_reference(spec.problem, cfg.horizon, cfg.output_times(), backend=spec.backend)
    manifest = RunManifest(
        command="reference",
        problem=spec.problem_spec,
        run={"horizon": cfg.horizon, "output_points": cfg.output_points, "backend": spec.backend},
    )
    _emit(out, ["t", "expectation"], zip(ref.times, np.real(ref.expectation)), manifest)
    return ref


def cmd_simulate(spec: RunSpec, cfg: SchemeConfig, out=None) -> EnsembleStats:
    stats = estimate_observable(spec.problem, cfg, workers=spec.workers)
    manifest = RunManifest(
        command="simulate",
        problem=spec.problem_spec,
        run=run_dict(cfg),
        extra={"min_pre_norm": stats.min_pre_norm, "max_pre_norm": stats.max_pre_norm},
    )
    _emit(out, ["t", "estimate", "ci_halfwidth"], zip(stats.times, stats.mean, stats.ci_halfwidth), manifest)
    return stats


def _stats_from_csv(path) -> tuple[str, int, EnsembleStats]:
    f = read_csv(path)
    for col in ("t", "estimate", "ci_halfwidth"):
        if col not in f.columns:
            raise ConfigError(f"{path}: missing column '{col}'")
    run = (f.manifest or {}).get("run", {})
    if "scheme" not in run or "steps" not in run:
        raise ConfigError(f"{path}: no simulate manifest (scheme and steps unknown)")
    stats = EnsembleStats(
        times=f["t"],
        mean=f["estimate"],
        ci_halfwidth=f["ci_halfwidth"],
        trajectories=int(run.get("trajectories", 0)),
        min_pre_norm=float("nan"),
        max_pre_norm=float("nan"),
    )
    return run["scheme"], int(run["steps"]), stats


def _ref_from_csv(path) -> ReferenceSolution:
    f = read_csv(path)
    for col in ("t", "expectation"):
        if col not in f.columns:
            raise ConfigError(f"{path}: missing column '{col}'")
    return ReferenceSolution(times=f["t"], tau=None, expectation=f["expectation"])


def table_rows(entries, ref: ReferenceSolution) -> list[tuple[str, int, float, float]]:
    """``(scheme, steps, eps_0, Delta/2)`` with ``Delta/2`` the largest CI half-width."""
    rows = []
    for scheme, steps, stats in entries:
        try:
            eps = epsilon_J(stats, ref, 0)
        except ValueError as exc:
            raise ConfigError(f"{scheme} M={steps}: {exc}") from None
        rows.append((scheme, steps, eps, stats.max_halfwidth))
    return rows


def format_table(rows) -> str:
    schemes = list(dict.fromkeys(r[0] for r in rows))
    steps = sorted({r[1] for r in rows})
    cell = {(r[0], r[1]): r for r in rows}
    label_w = max(24, max(len(s) for s in schemes) + 14)
    lines = [f"{'M':<{label_w}}" + "".join(f"{m:>12d}" for m in steps)]
    for s in schemes:
        for name, idx in ((f"eps_0({s})", 2), (f"Delta/2({s})", 3)):
            vals = [f"{cell[(s, m)][idx]:>12.5g}" if (s, m) in cell else f"{'-':>12}" for m in steps]
            lines.append(f"{name:<{label_w}}" + "".join(vals))
    return "\n".join(lines) + "\n"


def cmd_table(entries, ref: ReferenceSolution, out=None, manifest: RunManifest | None = None):
    rows = table_rows(entries, ref)
    sys.stdout.write(format_table(rows))
    if out is not None:
        write_csv(out, ["scheme", "steps", "epsilon_0", "half_delta"], rows, manifest)
    return rows


def convergence_points(ref, runs, J_list) -> list[tuple[int, float, int, float, float]]:
    """``(steps, step_size, J, eps_J, max CI half-width)`` for each run and J."""
    pts = []
    for cfg, stats in runs:
        for J in J_list:
            try:
                eps = epsilon_J(stats, ref, J)
            except ValueError as exc:
                raise ConfigError(str(exc)) from None
            pts.append((cfg.steps, cfg.dt, J, eps, float(np.max(stats.ci_halfwidth[J:]))))
    return pts


def slope_report(points) -> dict[int, tuple[float, float]]:
    out = {}
    for J in sorted({p[2] for p in points}):
        sel = [p for p in points if p[2] == J]
        if len(sel) < 3:
            raise ConfigError(f"J={J}: need at least 3 step counts for a slope, got {len(sel)}")
        try:
            out[J] = loglog_slope([p[1] for p in sel], [p[3] for p in sel])
        except ValueError as exc:
            raise ConfigError(f"J={J}: {exc}") from None
    return out


def cmd_convergence(spec: RunSpec, base: SchemeConfig, out=None):
    steps = spec.convergence_steps
    if len(steps) < 3:
        raise ConfigError(f"{spec.source}: [convergence] steps needs at least 3 values, got {len(steps)}")
    ref = solve_reference(spec.problem, base.horizon, base.output_times(), backend=spec.backend)
    runs = []
    for m in steps:
        cfg = finish_run(spec, **{**run_dict(base), "steps": m})
        runs.append((cfg, estimate_observable(spec.problem, cfg, workers=spec.workers)))
    points = convergence_points(ref, runs, spec.convergence_J)
    report = slope_report(points)
    manifest = RunManifest(
        command="convergence",
        problem=spec.problem_spec,
        run={**run_dict(base), "steps": steps, "J": spec.convergence_J},
    )
    _print_slopes(report)
    if out is not None:
        write_csv(out, ["steps", "step_size", "J", "epsilon", "max_ci_halfwidth"], points, manifest)
    return report, points


def _print_slopes(report) -> None:
    for J, (slope, c) in report.items():
        print(f"J={J}: slope {slope:.4f} (log-log intercept {c:.4f})")


# -- argument handling --------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sseweak", description="Weak SSE simulation harness.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", type=Path, required=config_required, help="INI-style run config")
        p.add_argument("--out", type=Path, help="output CSV (default: stdout)")
        p.add_argument("--seed", type=int)
        p.add_argument("--scheme", type=str, help="scheme2, scheme3 or explicit_euler")
        p.add_argument("--steps", type=int)
        p.add_argument("--trajectories", type=int)
        p.add_argument("--workers", type=int, help="worker processes (results do not depend on it)")
        p.add_argument("--full-scale", action="store_true", help="allow runs beyond the desk-scale cost limit")

    common(sub.add_parser("reference", help="master-equation reference values"))
    common(sub.add_parser("simulate", help="Monte Carlo estimate for one scheme"))
    t = sub.add_parser("table", help="error table from estimate CSVs or from a config")
    common(t, config_required=False)
    t.add_argument("estimates", nargs="*", type=Path, help="estimate CSVs written by 'simulate'")
    t.add_argument("--reference", type=Path, help="reference CSV written by 'reference'")
    c = sub.add_parser("convergence", help="slope of eps_J against the step size")
    common(c, config_required=False)
    c.add_argument("--points", type=Path, help="fit slopes from an existing per-point CSV")
    return ap


def _overrides(args) -> dict:
    ov = {"seed": args.seed, "steps": args.steps, "trajectories": args.trajectories}
    if args.scheme is not None:
        ov["scheme"] = parse_scheme(args.scheme)
    return ov


def _spec(args) -> RunSpec:
    spec = load_config(args.config)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        spec.workers = args.workers
    return spec


def _run_table(args) -> None:
    if args.estimates:
        if args.reference is None:
            raise ConfigError("table: --reference is required with estimate files")
        entries = [_stats_from_csv(p) for p in args.estimates]
        ref = _ref_from_csv(args.reference)
        manifest = RunManifest(
            command="table",
            problem={"reference": str(args.reference)},
            run={"estimates": [str(p) for p in args.estimates]},
        )
        cmd_table(entries, ref, out=args.out, manifest=manifest)
        return

    if args.config is not None:
        spec = _spec(args)
        base = finish_run(spec, **_overrides(args))
        schemes = spec.table_schemes or [base.scheme]
        steps = spec.table_steps or [base.steps]
    elif args.full_scale:
        fs = FULL_SCALE
        p = example1_problem(FockTruncation(fs["level"]), initial_level=fs["initial_level"])
        run = dict(horizon=fs["horizon"], trajectories=fs["trajectories"], output_points=fs["output_points"])
        spec = RunSpec(
            problem=p,
            problem_spec={"model": "example1", "level": fs["level"], "initial_level": fs["initial_level"]},
            run=run,
            workers=args.workers or 1,
            source="<full-scale>",
        )
        base = finish_run(spec, **_overrides(args))
        schemes = fs["schemes"]
        steps = [args.steps] if args.steps else fs["steps"]
    else:
        raise ConfigError("table: give estimate CSVs with --reference, a --config, or --full-scale")

    cost = estimate_cost(spec.problem.dim, [(m, base.trajectories) for m in steps] * len(schemes), spec.workers)
    _gate(cost, args.full_scale)
    ref = solve_reference(spec.problem, base.horizon, base.output_times(), backend=spec.backend)
    entries = []
    for s in schemes:
        for m in steps:
            cfg = finish_run(spec, **{**run_dict(base), "scheme": s, "steps": m})
            stats = estimate_observable(spec.problem, cfg, workers=spec.workers)
            entries.append((s.value, m, stats))
    manifest = RunManifest(
        command="table",
        problem=spec.problem_spec,
        run={**run_dict(base), "schemes": [s.value for s in schemes], "steps": steps},
    )
    cmd_table(entries, ref, out=args.out, manifest=manifest)


def _run_convergence(args) -> None:
    if args.points is not None:
        f = read_csv(args.points)
        for col in ("step_size", "J", "epsilon"):
            if col not in f.columns:
                raise ConfigError(f"{args.points}: missing column '{col}'")
        pts = [(0, h, int(j), e, 0.0) for h, j, e in zip(f["step_size"], f["J"], f["epsilon"])]
        _print_slopes(slope_report(pts))
        return
    if args.config is None:
        raise ConfigError("convergence: --config or --points is required")
    spec = _spec(args)
    base = finish_run(spec, **_overrides(args))
    runs = [(m, base.trajectories) for m in spec.convergence_steps]
    _gate(estimate_cost(spec.problem.dim, runs, spec.workers), args.full_scale)
    cmd_convergence(spec, base, out=args.out)


def run(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "reference":
            spec = _spec(args)
            cmd_reference(spec, finish_run(spec, **_overrides(args)), out=args.out)
        elif args.command == "simulate":
            spec = _spec(args)
            cfg = finish_run(spec, **_overrides(args))
            _gate(estimate_cost(spec.problem.dim, [(cfg.steps, cfg.trajectories)], spec.workers), args.full_scale)
            cmd_simulate(spec, cfg, out=args.out)
        elif args.command == "table":
            _run_table(args)
        else:
            _run_convergence(args)
    except ValueError as exc:  # ConfigError and argument validation
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
