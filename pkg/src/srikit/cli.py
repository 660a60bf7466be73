"""Command-line entry point: ``srikit {run,check,analyze,sweep,presets}``.

Exit codes: 0 ok, 2 validation error, 3 assumption guard (or a failed
assumption in ``check``), 4 numerical failure. Errors are reported on
standard error as one JSON object.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentConfig, load_preset, preset_names
from .errors import AssumptionViolation, SrikitError, ValidationError
from .experiment import TRAJECTORY, analyze_experiment, check_experiment, dumps, run_experiment, sweep


def _config(args) -> ExperimentConfig:
    if args.preset and args.config:
        raise ValidationError("give either --config or --preset, not both", field="config")
    if args.preset:
        cfg = load_preset(args.preset)
    elif args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        raise ValidationError("one of --config or --preset is required", field="config")
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _seeds(text: str) -> list[int]:
    seeds = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        elif part:
            seeds.append(int(part))
    return seeds


def cmd_run(args) -> int:
    cfg = _config(args)
    traj = run_experiment(cfg, args.out)
    print(dumps({"out": str(args.out), "n_steps": traj.n_steps, "final_x": traj.X[-1], "config_hash": cfg.hash()}))
    return 0


def cmd_check(args) -> int:
    cfg = _config(args)
    report = check_experiment(cfg, post_run=not args.no_run)
    text = dumps(report, indent=2)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "check.json").write_text(text + "\n")
    print(text)
    return 3 if "fail" in report["status"].values() else 0


def cmd_analyze(args) -> int:
    cfg = _config(args)
    traj = args.trajectory or str(Path(args.out) / TRAJECTORY)
    summary = analyze_experiment(cfg, traj, args.out)
    print(dumps(summary, indent=2))
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    results = sweep(cfg, _seeds(args.seeds), args.out, jobs=args.jobs)
    print(dumps(results, indent=2))
    return 3 if any(r["status"] != "ok" for r in results) else 0


def cmd_presets(args) -> int:
    for name in preset_names():
        print(name)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="srikit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment config (JSON)")
        sp.add_argument("--preset", help="name of a bundled preset")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("run", help="simulate the recursion and write trajectory, events, manifest")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("check", help="assumption diagnostics (A1-A5)")
    common(sp, out_required=False)
    sp.add_argument("--no-run", action="store_true", help="skip the post-run A4/A5 checks")
    sp.set_defaults(func=cmd_check)

    sp = sub.add_parser("analyze", help="APT statistic, limit set, averaged-map support dump")
    common(sp)
    sp.add_argument("--trajectory", help="trajectory CSV (default: OUT/trajectory.csv)")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("sweep", help="run several seeds, one directory each")
    common(sp)
    sp.add_argument("--seeds", default="0-4", help="comma list or ranges, e.g. 0-4,10")
    sp.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("presets", help="list bundled presets")
    sp.set_defaults(func=cmd_presets)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SrikitError as exc:
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": exc.exit_code}
        if getattr(exc, "field", None):
            err["field"] = exc.field
        if isinstance(exc, AssumptionViolation):
            err["assumption"] = exc.assumption
        print(json.dumps(err), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
