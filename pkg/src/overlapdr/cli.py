"""``overlapdr`` command line: simulate, analyze, phi, calibrate.

Every successful run writes its CSVs plus ``manifest.json`` (config echo,
seed, version, kernel backend, wall time) into the output directory. Config
problems exit with status 2 and one JSON error line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ConfigError, bundled_config

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get("OVERLAPDR_OUT") or "out")


def _write_manifest(out: Path, command: str, config: dict, seed, started: float,
                    outputs: list) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "backend": kernels.BACKEND,
        "seed": seed,
        "config": config,
        "wall_time_s": round(time.time() - started, 3),
        "outputs": sorted(Path(p).name for p in outputs),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def _resolve_config(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_config(p.name)
    if bundled.exists():
        return bundled
    raise ConfigError(f"config file {path!r} not found", field="config")


def cmd_simulate(args) -> int:
    from .harness import RunConfig, run, with_overrides
    from .tables import emit_tables

    started = time.time()
    config = RunConfig.from_toml(_resolve_config(args.config))
    if args.scenario:
        wanted = args.scenario.split(",")
        known = {s.name: s for s in config.scenarios}
        missing = [w for w in wanted if w not in known]
        if missing:
            raise ConfigError(f"unknown scenario {missing[0]!r}", field="scenario")
        config = with_overrides(config, scenarios=tuple(known[w] for w in wanted))
    config = with_overrides(
        config,
        master_seed=args.seed,
        threads=args.threads,
        n_replicates=args.replicates,
        sample_sizes=tuple(args.n) if args.n else None,
        primary_n=args.n[0] if args.n and config.primary_n not in args.n else None,
    )
    result = run(config)
    out = _out_dir(args)
    written = emit_tables(result, out)
    cfg = config.to_dict()
    cfg["skipped"] = result.skipped
    _write_manifest(out, "simulate", cfg, config.master_seed, started, written)
    for note in result.skipped:
        print(f"note: {note}", file=sys.stderr)
    print(f"wrote {len(written)} files to {out}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .analyze import AnalysisSpec, ingest_csv, run_analysis, write_report

    started = time.time()
    spec = AnalysisSpec(
        treatment_col=args.treatment,
        outcome_col=args.outcome,
        covariate_cols=[c.strip() for c in args.covariates.split(",") if c.strip()],
        trim_levels=tuple(args.trim),
        bootstrap_reps=args.boot,
        seed=args.seed,
        ci_level=args.ci_level,
        ci_method=args.ci,
        outcome_mode=args.outcome_mode,
        threads=args.threads or 1,
    )
    data = ingest_csv(args.data, spec)
    print(f"{data.n} rows: {data.n_treated} treated, {data.n_control} control")
    report = run_analysis(data, spec, hist_bins=args.bins)
    out = _out_dir(args)
    written = write_report(report, out)
    cfg = {k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(spec).items()}
    cfg["methods"] = [m.value for m in spec.methods]
    cfg["data"] = str(args.data)
    _write_manifest(out, "analyze", cfg, spec.seed, started, written)
    for r in report.rows:
        trim = "" if r.trim is None else f" (trim {r.trim:g})"
        flag = "  UNSTABLE" if r.unstable else ""
        print(f"{r.estimator}{trim}: {r.estimate:.4f} ({r.ci_lower:.4f}, {r.ci_upper:.4f}) "
              f"SD {r.sd:.4f}{flag}")
    return EXIT_OK


def _scenario_from_args(args):
    from .datagen import PRESETS, preset

    if args.scenario:
        if args.scenario not in PRESETS:
            raise ConfigError(f"unknown scenario {args.scenario!r}", field="scenario")
        return PRESETS[args.scenario]
    if args.prevalence is None or args.d is None:
        raise ConfigError("give --scenario or both --prevalence and --d", field="scenario")
    try:
        return preset(args.prevalence, args.d)
    except KeyError as exc:
        raise ConfigError(str(exc.args[0]), field="scenario") from None


def cmd_phi(args) -> int:
    from .diagnostics import phi_mass
    from .tables import write_csv

    started = time.time()
    scenario = _scenario_from_args(args)
    rng = np.random.default_rng(args.seed)
    res = phi_mass(scenario, args.N, rng)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    edges = res.edges
    rows = [dict(scenario=scenario.name, interval_lo=float(edges[i]),
                 interval_hi=float(edges[i + 1]), phi=float(res.phi[i]),
                 count_treated=int(res.counts_treated[i]),
                 count_control=int(res.counts_control[i]))
            for i in range(res.phi.shape[0])]
    written = [
        write_csv(out / "phi.csv", ["scenario", "interval_lo", "interval_hi", "phi",
                                    "count_treated", "count_control"], rows),
        write_csv(out / "phi_summary.csv", ["scenario", "N", "tail_pct", "phi_sum"],
                  [dict(scenario=scenario.name, N=args.N, tail_pct=100 * res.tail_fraction,
                        phi_sum=float(res.phi.sum()))]),
    ]
    _write_manifest(out, "phi", {"scenario": scenario.to_dict(), "N": args.N}, args.seed,
                    started, written)
    print(f"{scenario.name}: {100 * res.tail_fraction:.1f}% of true PS outside (0.05, 0.95)")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .datagen import BASE_ALPHA, calibrate_intercept
    from .tables import write_csv

    started = time.time()
    alpha = np.asarray(args.alpha) if args.alpha else args.d * np.asarray(BASE_ALPHA)
    if alpha.shape != (6,):
        raise ConfigError("--alpha needs six comma-separated values", field="alpha")
    rng = np.random.default_rng(args.seed)
    a0 = calibrate_intercept(args.prevalence, alpha=alpha, rng=rng, n_draw=args.draws)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    written = [write_csv(out / "calibration.csv", ["prevalence", "d", "alpha0"],
                         [dict(prevalence=args.prevalence, d=args.d, alpha0=a0)])]
    _write_manifest(out, "calibrate", {"prevalence": args.prevalence, "d": args.d,
                                       "alpha": list(alpha), "draws": args.draws},
                    args.seed, started, written)
    print(f"alpha0 = {a0:.4f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="overlapdr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (default $OVERLAPDR_OUT or ./out)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="worker processes")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run the Monte Carlo study")
    p.add_argument("--config", default="paper_desk.toml",
                   help="TOML run config (bundled names such as paper_desk.toml also work)")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--n", type=_ints, default=None, help="sample sizes, comma separated")
    p.add_argument("--scenario", default=None, help="restrict to scenarios, comma separated")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", parents=[common], help="analyze a CSV dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--treatment", required=True)
    p.add_argument("--outcome", required=True)
    p.add_argument("--covariates", required=True)
    p.add_argument("--trim", type=_floats, default=[0.05, 0.1])
    p.add_argument("--boot", type=int, default=1000)
    p.add_argument("--ci", choices=["normal", "percentile"], default="normal")
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--outcome-mode", choices=["per_arm", "joint"], default="per_arm")
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("phi", parents=[common], help="true-PS mass per 0.01 interval")
    p.add_argument("--scenario", default=None)
    p.add_argument("--prevalence", type=float, default=None)
    p.add_argument("--d", type=float, default=None)
    p.add_argument("--N", type=int, default=100_000)
    p.set_defaults(func=cmd_phi)

    p = sub.add_parser("calibrate", parents=[common], help="solve for the PS intercept")
    p.add_argument("--prevalence", type=float, required=True)
    p.add_argument("--d", type=float, default=1.0)
    p.add_argument("--alpha", type=_floats, default=None, help="six PS slopes")
    p.add_argument("--draws", type=int, default=1_000_000)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command in ("analyze", "phi", "calibrate") and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print("error: " + json.dumps({"kind": "config", "field": exc.field, "line": exc.line,
                                      "message": str(exc)}), file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, RuntimeError) as exc:
        print("error: " + json.dumps({"kind": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
