"""Run, check and analyze experiments described by an :class:`ExperimentConfig`.

Output files are deterministic given the config and seed; the only
wall-clock value produced anywhere is the timestamp in ``manifest.json``.
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import platform
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .apt import apt_statistic, log_time_grid
from .averaging import AveragedMap, default_dirs, hhat_support_many, marchaud_report
from .config import ExperimentConfig
from .dynamics import attractor_containment, limit_set_estimate, max_distance_to
from .engine import (
    Trajectory,
    check_A3,
    check_A4,
    check_A5,
    read_trajectory_csv,
    run,
    write_trajectory_csv,
)
from .errors import StabilityError, ValidationError
from .markov import continuity_modulus, effective_row
from .svmap import check_closed_graph, check_growth

TRAJECTORY = "trajectory.csv"
EVENTS = "events.jsonl"
MANIFEST = "manifest.json"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def dumps(obj, **kw) -> str:
    return json.dumps(obj, default=_json_default, sort_keys=True, **kw)


def simulate(cfg: ExperimentConfig) -> Trajectory:
    return run(
        cfg.build_drift(),
        cfg.build_kernel(),
        cfg.build_schedule(),
        cfg.build_noise(),
        cfg.build_policy(),
        np.asarray(cfg.x0, dtype=float),
        cfg.s0,
        cfg.n_steps,
        cfg.seed,
        blowup=float(cfg.blowup),
    )


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(cfg: ExperimentConfig, out: Path, files, status: str) -> None:
    manifest = {
        "config_hash": cfg.hash(),
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "status": status,
        "versions": {
            "srikit": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "files": {f: _sha256(out / f) for f in files if (out / f).exists()},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (out / MANIFEST).write_text(dumps(manifest, indent=2) + "\n")


def run_experiment(cfg: ExperimentConfig, out) -> Trajectory:
    """Simulate and write trajectory CSV, event log and manifest into ``out``.

    On a blow-up the event log and manifest are still written and the
    :class:`StabilityError` is re-raised.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    events = [{"event": "config", "name": cfg.name, "config_hash": cfg.hash(), "seed": cfg.seed}]
    try:
        traj = simulate(cfg)
    except StabilityError as exc:
        events.append({"event": "abort", "reason": "A5", "step": exc.step, "norm": exc.norm, "message": str(exc)})
        (out / EVENTS).write_text("".join(dumps(e) + "\n" for e in events))
        _write_manifest(cfg, out, [EVENTS], "aborted")
        raise
    N = traj.n_steps
    for n in sorted({N // 10 * k for k in range(1, 10)} | {N}):
        events.append({"event": "progress", "n": n, "t": traj.t[n], "x": traj.X[n], "s": int(traj.S[n])})
    a5 = check_A5(traj)
    events.append({"event": "done", "n_steps": N, "horizon": traj.horizon, "max_norm": a5.max_norm})
    with open(out / TRAJECTORY, "w", newline="") as fh:
        write_trajectory_csv(traj, fh)
    (out / EVENTS).write_text("".join(dumps(e) + "\n" for e in events))
    _write_manifest(cfg, out, [TRAJECTORY, EVENTS], "ok")
    return traj


def _sweep_one(args):
    cfg_dict, base_dir, seed, out = args
    cfg = ExperimentConfig.from_dict(cfg_dict, base_dir=base_dir).with_seed(seed)
    try:
        traj = run_experiment(cfg, out)
    except StabilityError as exc:
        return {"seed": seed, "status": "aborted", "error": str(exc)}
    return {"seed": seed, "status": "ok", "final_x": traj.X[-1].tolist(), "out": str(out)}


def sweep(cfg: ExperimentConfig, seeds, out, jobs: int = 1) -> list[dict]:
    """Run one experiment per seed in ``out/seed_<seed>``; results ordered by seed."""
    out = Path(out)
    tasks = [(cfg.to_dict(), cfg.base_dir, int(s), out / f"seed_{int(s)}") for s in sorted(set(seeds))]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, tasks))
    else:
        results = [_sweep_one(t) for t in tasks]
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(dumps({"config_hash": cfg.hash(), "runs": results}, indent=2) + "\n")
    return results


# -- assumption checks -------------------------------------------------------


def _status(ok, warn=False):
    return "pass" if ok else ("warn" if warn else "fail")


def check_experiment(cfg: ExperimentConfig, post_run: bool = True) -> dict:
    """Sampled diagnostics for the standing assumptions.

    Returns ``{"A1": {...}, ..., "status": {assumption: pass|warn|fail}}``.
    ``A4`` can only ever ``warn``; it is an asymptotic property.
    """
    opts = cfg.checks
    drift, kernel, schedule = cfg.build_drift(), cfg.build_kernel(), cfg.build_schedule()
    rng = np.random.default_rng(opts.get("seed", 0))
    box = float(opts.get("box", 5.0))
    xs = rng.uniform(-box, box, size=(int(opts.get("growth_samples", 200)), cfg.dim))
    growth = check_growth(drift, xs)
    x_cg = np.asarray(opts.get("closed_graph_point", cfg.x0), dtype=float)
    radii = opts.get("closed_graph_radii", [1e-1, 1e-2, 1e-3])
    cg = [check_closed_graph(drift, x_cg, s, radii).to_dict() for s in range(cfg.n_states)]
    cg_ok = all(r["ok"] for r in cg)
    report = {
        "A1": {"growth": growth.to_dict(), "closed_graph": cg},
    }
    status = {"A1": _status(growth.ok and cg_ok)}

    rows_ok, row_error = True, None
    try:
        for x in xs[:20]:
            for s in range(cfg.n_states):
                effective_row(kernel, x, s)
    except ValidationError as exc:
        rows_ok, row_error = False, str(exc)
    a2 = {"rows_ok": rows_ok, "error": row_error, "depends_on_x": bool(kernel.depends_on_x)}
    if kernel.depends_on_x:
        a2["continuity_modulus"] = continuity_modulus(kernel, xs[:20])
    report["A2"] = a2
    status["A2"] = _status(rows_ok)

    a3 = check_A3(schedule, N=min(cfg.n_steps, 1_000_000))
    report["A3"] = a3.to_dict()
    status["A3"] = _status(a3.ok)

    if post_run:
        try:
            traj = simulate(cfg)
        except StabilityError as exc:
            report["A5"] = check_A5(error=exc, blowup=float(cfg.blowup)).to_dict()
            status["A5"] = "fail"
            status["A4"] = "warn"
            report["A4"] = {"skipped": "run aborted by the A5 guard"}
        else:
            T = float(opts.get("A4_T", 1.0))
            try:
                a4 = check_A4(traj, T)
                report["A4"] = a4.to_dict()
                status["A4"] = _status(not a4.flagged, warn=True)
            except ValidationError as exc:
                report["A4"] = {"skipped": str(exc)}
                status["A4"] = "warn"
            a5 = check_A5(traj)
            report["A5"] = a5.to_dict()
            status["A5"] = _status(a5.ok)
    report["status"] = status
    return report


# -- analysis ----------------------------------------------------------------


def analyze_experiment(cfg: ExperimentConfig, traj: Trajectory | str | Path, out) -> dict:
    """Write ``apt.csv``, ``limit_set.json`` and ``hhat_support.csv`` as configured."""
    if not isinstance(traj, Trajectory):
        path = Path(traj)
        if not path.is_file():
            raise ValidationError(f"trajectory file not found: {path}", field="trajectory")
        traj = read_trajectory_csv(path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    am = AveragedMap(cfg.build_drift(), cfg.build_kernel())
    summary = {}
    blocks = cfg.analysis

    if "apt" in blocks:
        b = blocks["apt"]
        T, dt = float(b["T"]), float(b["dt"])
        grid = b.get("t_grid") or log_time_grid(traj, T, int(b.get("n_points", 8)), float(b.get("t_min", 1.0)))
        series = apt_statistic(traj, am, T, grid, dt)
        with open(out / "apt.csv", "w", newline="") as fh:
            series.to_csv(fh)
        summary["apt"] = {"last": series.last, "nonincreasing_tail": series.nonincreasing_tail()}

    if "limit_set" in blocks or "attractor" in blocks:
        tf = float(blocks.get("limit_set", {}).get("tail_fraction", 0.1))
        est = limit_set_estimate(traj, tf)
        ls = {"tail_fraction": tf, **est.to_dict()}
        A = cfg.attractor_body()
        if A is not None:
            eps = float(blocks["attractor"].get("eps", 0.0))
            ls["attractor"] = {
                "generators": A.generators.tolist(),
                "radius": A.radius,
                "eps": eps,
                "max_distance": max_distance_to(est.points, A),
                "contained": attractor_containment(est, A, eps),
            }
        (out / "limit_set.json").write_text(dumps(ls, indent=2) + "\n")
        summary["limit_set"] = ls

    if "support_dump" in blocks:
        sd = blocks["support_dump"]
        pts = np.array(sd["points"], dtype=float, ndmin=2)
        D = np.array(sd["dirs"], dtype=float, ndmin=2) if "dirs" in sd else default_dirs(cfg.dim)
        lines = [",".join([f"x_{i}" for i in range(cfg.dim)] + [f"d_{i}" for i in range(cfg.dim)] + ["support"])]
        for x in pts:
            vals = hhat_support_many(am, x, D)
            for d, v in zip(D, vals):
                lines.append(",".join(format(float(c), ".17g") for c in (*x, *d, v)))
        (out / "hhat_support.csv").write_text("\n".join(lines) + "\n")
        summary["support_dump"] = {"points": len(pts), "dirs": len(D)}
    return summary


def marchaud_for_config(cfg: ExperimentConfig, n_x: int = 200, n_dirs: int = 64, seed: int = 0, box: float = 5.0):
    """Marchaud report on ``n_x`` uniform points of ``[-box, box]^d`` and ``n_dirs`` Gaussian directions."""
    am = AveragedMap(cfg.build_drift(), cfg.build_kernel())
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-box, box, size=(n_x, cfg.dim))
    dirs = rng.standard_normal((n_dirs, cfg.dim))
    return marchaud_report(am, xs, dirs, seed=seed)
