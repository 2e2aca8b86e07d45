"""Command-line entry points for the experiment pipelines.

Subcommands: validate, reference, solve, sweep, study, emit. Every
subcommand takes --config/--seed/--out/--jobs; outputs land under the
resolved output directory and are byte-deterministic in (config, seed),
independent of --jobs.
"""

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

from .experiments import (
    ConfigError,
    ExperimentConfig,
    compute_reference,
    emit_plot_data,
    load_artifact,
    load_config,
    resolve_config,
    run_convergence_sweep,
    run_market_study,
    run_single,
    write_sweep_csvs,
)
from .game import validate_game
from .graph import is_connected
from .schedule import validate_schedule
from .solver import NumericalFailure

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgnep",
        description="Distributed stochastic equilibrium experiments: "
                    "validate configs, compute references, run solves, "
                    "sweeps, and market studies, and emit plot data.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (
            ("validate", "resolve and validate a config, print the echo"),
            ("reference", "compute and store the centralized reference solution"),
            ("solve", "one distributed run under the configured schedule"),
            ("sweep", "replicated convergence sweep over the configured axis"),
            ("study", "equilibrium market study across substitutability values"),
            ("emit", "re-emit plot data and figures from stored artifacts")):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", type=str, default=None,
                       help="JSON config path (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", type=str, default=None,
                       help="override the output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="parallel worker processes (default 1)")
    return parser


def _load(args) -> ExperimentConfig:
    if args.config is not None:
        return load_config(args.config, seed_override=args.seed,
                           out_override=args.out)
    return resolve_config({}, seed_override=args.seed, out_override=args.out)


def _write_echo(config: ExperimentConfig, out: Path) -> Path:
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config_echo.json"
    path.write_text(json.dumps(config.echo(), sort_keys=True, indent=2) + "\n")
    return path


def _cmd_validate(args) -> int:
    config = _load(args)
    print(json.dumps(config.echo(), sort_keys=True, indent=2))
    report = validate_game(config.build_game())
    for line in report.lines():
        print(line)
    connected = is_connected(config.build_graph())
    print(f"[{'ok' if connected else 'FAIL'}] multiplier graph connected")
    sched = config.resolved["schedule"]
    print(f"[{'ok' if validate_schedule(sched['a'], sched['b']) else 'FAIL'}] "
          f"schedule exponents a={sched['a']}, b={sched['b']}")
    return 0 if report.ok and connected else 1


def _cmd_reference(args) -> int:
    config = _load(args)
    out = config.out_dir
    _write_echo(config, out)
    ref = compute_reference(config)
    (out / "reference.json").write_text(ref.to_json() + "\n")
    cert = ref.certificate
    print(f"reference: residual {cert.natural_residual:.3e} after "
          f"{cert.iterations} iterations "
          f"({'converged' if cert.converged else 'NOT converged'})")
    print(f"wrote {out / 'reference.json'}")
    return 0 if cert.converged else 1


def _cmd_solve(args) -> int:
    config = _load(args)
    out = config.out_dir
    _write_echo(config, out)
    ref = compute_reference(config)
    (out / "reference.json").write_text(ref.to_json() + "\n")
    if not ref.certificate.converged:
        print("warning: reference did not certify; distances are "
              "relative to the best point found", file=sys.stderr)
    try:
        record = run_single(config, reference=ref)
    except NumericalFailure as exc:
        print(f"run diverged at iteration {exc.iteration}: {exc}",
              file=sys.stderr)
        if exc.record is not None:
            exc.record.to_csv(out / "run.csv")
            print(f"partial record in {out / 'run.csv'}", file=sys.stderr)
        return 1
    record.to_csv(out / "run.csv")
    meta = dict(record.meta)
    meta.update(stop_reason=record.stop_reason, iterations=record.iterations)
    (out / "run_meta.json").write_text(
        json.dumps(meta, sort_keys=True, indent=2) + "\n")
    last = record.rows[-1]
    print(f"run: {record.iterations} iterations, stop={record.stop_reason}")
    print(f"final consensus={last[3]:.3e} feasibility={last[4]:.3e} "
          f"natural={last[5]:.3e} ref_dist={last[6]:.3e}")
    print(f"wrote {out / 'run.csv'}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load(args)
    out = config.out_dir / f"sweep_{config.resolved['sweep']['axis']}"
    _write_echo(config, config.out_dir)
    artifact = run_convergence_sweep(config, jobs=max(1, args.jobs))
    out.mkdir(parents=True, exist_ok=True)
    (out / "artifact.json").write_text(artifact.to_json() + "\n")
    written = write_sweep_csvs(artifact, out) + emit_plot_data(artifact, out)
    from .figures import render_artifact
    written += render_artifact(artifact, out)
    for path in written:
        print(f"wrote {path}")
    if artifact.divergences:
        print(f"{len(artifact.divergences)} replication(s) diverged; "
              "see artifact.json", file=sys.stderr)
        return 1
    return 0


def _cmd_study(args) -> int:
    config = _load(args)
    out = config.out_dir / "study"
    _write_echo(config, config.out_dir)
    artifact = run_market_study(config, jobs=max(1, args.jobs))
    out.mkdir(parents=True, exist_ok=True)
    (out / "artifact.json").write_text(artifact.to_json() + "\n")
    written = emit_plot_data(artifact, out)
    from .figures import render_artifact
    written += render_artifact(artifact, out)
    for path in written:
        print(f"wrote {path}")
    if artifact.flagged:
        for item in artifact.flagged:
            print(f"theta={item['theta']}: {item['message']}", file=sys.stderr)
        return 1
    return 0


def _cmd_emit(args) -> int:
    root = Path(args.out) if args.out else Path(
        resolve_config({}, seed_override=args.seed).resolved["out"])
    found = sorted(root.rglob("artifact.json"))
    if not found:
        print(f"no artifact.json under {root}", file=sys.stderr)
        return 2
    from .figures import render_artifact
    for path in found:
        artifact = load_artifact(path)
        written = emit_plot_data(artifact, path.parent)
        written += render_artifact(artifact, path.parent)
        for out_path in written:
            print(f"wrote {out_path}")
    return 0


_COMMANDS = {
    "validate": _cmd_validate,
    "reference": _cmd_reference,
    "solve": _cmd_solve,
    "sweep": _cmd_sweep,
    "study": _cmd_study,
    "emit": _cmd_emit,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"config error: {line}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
