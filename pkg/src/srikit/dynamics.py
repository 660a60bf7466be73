"""Euler polygons of the averaged inclusion ``x' ∈ Ĥ(x)`` and limit-set diagnostics."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .averaging import AveragedMap, default_dirs, hhat_body, hhat_extreme_point
from .engine import BLOWUP_DEFAULT, Trajectory
from .errors import StabilityError, ValidationError
from .geometry import ConvexBody, distance, project


@dataclass
class DIPath:
    """Euler polygon: ``Z[k+1] = Z[k] + dt * V[k]`` on the grid ``t[k] = k * dt``."""

    t: np.ndarray
    Z: np.ndarray
    V: np.ndarray
    dt: float
    meta: dict = field(default_factory=dict)

    def at(self, times) -> np.ndarray:
        """Linear interpolation of the polygon (clamped at the ends)."""
        times = np.asarray(times, dtype=float)
        return np.column_stack([np.interp(times, self.t, self.Z[:, i]) for i in range(self.Z.shape[1])])

    def to_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        d = self.Z.shape[1]
        w.writerow(["k", "t"] + [f"Z_{i}" for i in range(d)] + [f"V_{i}" for i in range(d)])
        for k in range(len(self.t)):
            v = self.V[k] if k < len(self.V) else [math.nan] * d
            w.writerow([k, format(self.t[k], ".17g")] + [format(z, ".17g") for z in self.Z[k]] + [format(x, ".17g") for x in v])


def _n_steps(dt, T):
    if not dt > 0:
        raise ValidationError(f"dt must be positive, got {dt}", field="dt")
    if not T >= dt:
        raise ValidationError(f"T must be >= dt, got T={T}, dt={dt}", field="T")
    return int(round(T / dt))


def euler_flow(
    am: AveragedMap,
    x0,
    dt: float,
    T: float,
    selection: str = "least-norm",
    dirs=None,
    seed=0,
    target=None,
    blowup: float = BLOWUP_DEFAULT,
) -> DIPath:
    """Euler polygon with velocities chosen from the inner body of ``Ĥ``.

    ``least-norm`` projects the origin onto the body, ``toward-target``
    takes the extreme point in the direction ``target - z``, and
    ``random-vertex`` picks a generator uniformly.
    """
    K = _n_steps(dt, T)
    if selection not in ("least-norm", "toward-target", "random-vertex"):
        raise ValidationError(f"unknown selection {selection!r}", field="selection")
    if selection == "toward-target" and target is None:
        raise ValidationError("toward-target selection needs a target", field="target")
    D = default_dirs(am.dim) if dirs is None else np.asarray(dirs, dtype=float)
    rng = np.random.default_rng(seed)
    Z = np.empty((K + 1, am.dim))
    V = np.empty((K, am.dim))
    Z[0] = np.asarray(x0, dtype=float)
    for k in range(K):
        z = Z[k]
        if selection == "toward-target":
            v = hhat_extreme_point(am, z, np.asarray(target, dtype=float) - z)
        else:
            body = hhat_body(am, z, D)
            if selection == "least-norm":
                v = project(body, np.zeros(am.dim))
            else:
                v = body.generators[rng.integers(body.generators.shape[0])]
        V[k] = v
        Z[k + 1] = z + dt * v
        if not np.linalg.norm(Z[k + 1]) <= blowup:
            raise StabilityError(f"Euler polygon left the blow-up bound {blowup:.3e} at step {k + 1}", step=k + 1)
    return DIPath(dt * np.arange(K + 1), Z, V, dt, {"selection": selection})


def best_tracker(am: AveragedMap, reference, x_start, dt: float, T: float, dirs=None) -> DIPath:
    """Greedy Euler polygon of ``Ĥ`` following ``reference``.

    At each step the velocity is the projection of
    ``(reference(t_{k+1}) - z_k) / dt`` onto the inner body of ``Ĥ(z_k)``,
    i.e. the feasible velocity that lands closest to the reference.
    ``reference`` is a callable on times or an array of its values on the
    grid ``k * dt``.
    """
    K = _n_steps(dt, T)
    D = default_dirs(am.dim) if dirs is None else np.asarray(dirs, dtype=float)
    grid = dt * np.arange(K + 1)
    if callable(reference):
        R = np.atleast_2d(np.asarray(reference(grid), dtype=float))
        if R.shape[0] != K + 1:
            R = R.T
    else:
        R = np.atleast_2d(np.asarray(reference, dtype=float))
    if R.shape != (K + 1, am.dim):
        raise ValidationError(f"reference must give {K + 1} points of dimension {am.dim}", field="reference")
    Z = np.empty((K + 1, am.dim))
    V = np.empty((K, am.dim))
    Z[0] = np.asarray(x_start, dtype=float)
    for k in range(K):
        z = Z[k]
        body = hhat_body(am, z, D)
        v = project(body, (R[k + 1] - z) / dt)
        V[k] = v
        Z[k + 1] = z + dt * v
    return DIPath(grid, Z, V, dt, {"kind": "best-tracker"})


@dataclass
class LimitSetEstimate:
    points: np.ndarray
    start_index: int
    diameter: float
    mean: np.ndarray

    def to_dict(self):
        return {
            "start_index": self.start_index,
            "n_points": int(self.points.shape[0]),
            "diameter": self.diameter,
            "mean": self.mean.tolist(),
            "min": self.points.min(axis=0).tolist(),
            "max": self.points.max(axis=0).tolist(),
        }


def point_cloud_diameter(P: np.ndarray) -> float:
    P = np.asarray(P, dtype=float)
    if P.shape[0] < 2:
        return 0.0
    if P.shape[1] == 1:
        return float(P.max() - P.min())
    cand = np.unique(P, axis=0)
    if cand.shape[0] > max(P.shape[1] + 1, 64):
        try:
            # QJ joggles flat clouds; returned vertices are still input points
            cand = cand[ConvexHull(cand, qhull_options="QJ").vertices]
        except QhullError:
            pass
    diff = cand[:, None, :] - cand[None, :, :]
    return float(np.sqrt((diff * diff).sum(axis=-1)).max())


def limit_set_estimate(traj: Trajectory, tail_fraction: float = 0.1, min_points: int = 100) -> LimitSetEstimate:
    """Tail cloud ``{X_n : n >= (1 - tail_fraction) N}`` with its diameter and mean."""
    if not 0 < tail_fraction < 1:
        raise ValidationError(f"tail_fraction must lie in (0, 1), got {tail_fraction}", field="tail_fraction")
    N = traj.n_steps
    start = int(math.ceil((1.0 - tail_fraction) * N))
    pts = traj.X[start:]
    if pts.shape[0] < min_points:
        raise ValidationError(
            f"tail has {pts.shape[0]} points (< {min_points}); run longer or raise tail_fraction",
            field="tail_fraction",
        )
    return LimitSetEstimate(pts, start, point_cloud_diameter(pts), pts.mean(axis=0))


def attractor_containment(est: LimitSetEstimate, A: ConvexBody, eps: float, tol: float = 1e-9) -> bool:
    """True iff every tail point is within ``eps`` of ``A``."""
    if eps < 0:
        raise ValidationError(f"eps must be >= 0, got {eps}", field="eps")
    return max_distance_to(est.points, A, tol) <= eps


def max_distance_to(points, A: ConvexBody, tol: float = 1e-9) -> float:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if A.dim == 1:
        lo, hi = A.generators.min() - A.radius, A.generators.max() + A.radius
        return float(np.maximum(np.maximum(lo - P[:, 0], P[:, 0] - hi), 0.0).max())
    # duplicates are common in converged tails
    return max(distance(A, p, tol) for p in np.unique(P, axis=0))
