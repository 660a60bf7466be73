"""Trajectory-space metric and the empirical asymptotic-pseudotrajectory statistic."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .averaging import AveragedMap, default_dirs, oracle_defect
from .dynamics import best_tracker
from .engine import Trajectory, interpolate
from .errors import HorizonError, ValidationError


@dataclass(frozen=True)
class SampledPath:
    """A path ``R -> R^d`` known on an increasing time grid, linear in between."""

    times: np.ndarray
    values: np.ndarray
    source: str = ""

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if t.ndim != 1 or v.shape[0] != t.shape[0]:
            raise ValidationError("path needs one value row per time")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("path times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    def at(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        return np.column_stack([np.interp(q, self.times, self.values[:, i]) for i in range(self.values.shape[1])])


def metric_D(p1: SampledPath, p2: SampledPath, K_max: int = 20) -> float:
    """``sum_{k=1}^{K_max} 2^{-k} min(sup_{[-k,k]} ||p1 - p2||, 1)``.

    The supremum is taken over the union of both sample grids, where the
    piecewise-linear difference attains its extrema. Truncation at
    ``K_max`` underestimates the full series by at most ``2^{-K_max}``.
    """
    if K_max < 1:
        raise ValidationError(f"K_max must be >= 1, got {K_max}", field="K_max")
    for p in (p1, p2):
        if p.times[0] > -K_max or p.times[-1] < K_max:
            raise ValidationError(
                f"path grid [{p.times[0]}, {p.times[-1]}] does not cover [-{K_max}, {K_max}]", field="K_max"
            )
    q = np.union1d(p1.times, p2.times)
    q = q[(q >= -K_max) & (q <= K_max)]
    q = np.union1d(q, np.arange(-K_max, K_max + 1, dtype=float))
    diff = np.linalg.norm(p1.at(q) - p2.at(q), axis=1)
    aq = np.abs(q)
    total = 0.0
    for k in range(1, K_max + 1):
        sup = float(diff[aq <= k].max())
        total += min(sup, 1.0) / 2.0**k
    return total


def shifted_path(traj: Trajectory, t: float, K: int) -> SampledPath:
    """``q -> x̄(t + q)`` on ``[-K, K]``, sampled at the trajectory's breakpoints.

    ``x̄`` is extended by ``X_0`` for negative times.
    """
    if t + K > traj.horizon:
        raise HorizonError(f"shift t={t} with K={K} exceeds horizon {traj.horizon}")
    bp = traj.t[(traj.t > t - K) & (traj.t < t + K)] - t
    q = np.union1d(bp, [-K, K])
    return SampledPath(q, interpolate(traj, t + q), source=f"trajectory shifted by {t}")


@dataclass
class AptSeries:
    """``e(t)``: sup-distance over ``[t, t+T]`` from ``x̄`` to the best-tracking Euler polygon.

    Each value is an upper bound on the distance to the full solution set.
    """

    t: np.ndarray
    e: np.ndarray
    oracle_defect: np.ndarray
    T: float
    dt: float
    meta: dict = field(default_factory=dict)

    @property
    def last(self) -> float:
        return float(self.e[-1])

    def nonincreasing_tail(self, k: int = 4) -> bool:
        tail = self.e[-k:]
        return bool(np.all(np.diff(tail) <= 0))

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "e", "oracle_defect", "T", "dt"])
        for t, e, od in zip(self.t, self.e, self.oracle_defect):
            w.writerow([format(v, ".17g") for v in (t, e, od, self.T, self.dt)])

    def to_dict(self):
        return {
            "t": self.t.tolist(),
            "e": self.e.tolist(),
            "oracle_defect": self.oracle_defect.tolist(),
            "T": self.T,
            "dt": self.dt,
            **self.meta,
        }


def log_time_grid(traj: Trajectory, T: float, n_points: int = 8, t_min: float = 1.0) -> np.ndarray:
    t_max = traj.horizon - T
    if t_max <= t_min:
        raise HorizonError(f"horizon {traj.horizon} too short for T={T} beyond t_min={t_min}")
    return np.geomspace(t_min, t_max, n_points)


def window_error(traj: Trajectory, am: AveragedMap, t: float, T: float, dt: float, dirs=None):
    """Best-tracker sup error on ``[t, t+T]``; returns ``(e, tracker_path)``."""
    if t + T > traj.horizon:
        raise HorizonError(f"window [{t}, {t + T}] exceeds horizon {traj.horizon}")
    K = int(round(T / dt))
    grid = dt * np.arange(K + 1)
    ref = interpolate(traj, np.minimum(t + grid, traj.horizon))
    path = best_tracker(am, ref, ref[0], dt, K * dt, dirs)
    bp = traj.t[(traj.t > t) & (traj.t < t + K * dt)] - t
    q = np.union1d(grid, bp)
    err = np.linalg.norm(interpolate(traj, t + q) - path.at(q), axis=1)
    return float(err.max()), path


def apt_statistic(
    traj: Trajectory,
    am: AveragedMap,
    T: float,
    t_grid,
    dt: float,
    dirs=None,
    defect_samples: int = 8,
) -> AptSeries:
    """``e(t) = sup_{q in [0,T]} ||x̄(t+q) - z_t(q)||`` for each ``t`` in ``t_grid``.

    ``z_t`` is :func:`best_tracker` started at ``x̄(t)`` following
    ``x̄(t + .)``. The recorded oracle defect is the largest support gap of
    the inner body sampled along each tracker path.
    """
    D = default_dirs(am.dim) if dirs is None else np.asarray(dirs, dtype=float)
    ts = np.asarray(t_grid, dtype=float)
    if np.any(ts + T > traj.horizon):
        raise HorizonError(f"t_grid point {ts.max()} plus T={T} exceeds horizon {traj.horizon}")
    es, defects = [], []
    for t in ts:
        e, path = window_error(traj, am, float(t), T, dt, D)
        idx = np.linspace(0, len(path.Z) - 1, defect_samples).astype(int)
        defects.append(max(oracle_defect(am, path.Z[i], D) for i in idx))
        es.append(e)
    return AptSeries(ts, np.array(es), np.array(defects), float(T), float(dt), {"bound": "upper"})
