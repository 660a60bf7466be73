"""The averaged drift ``Ĥ(x) = ∪_{μ ∈ D(x)} Σ_s μ(s) H(x, s)``.

``Ĥ(x)`` is never stored. Its support function is evaluated exactly: for a
fixed direction the averaged support is linear in ``μ``, so its maximum
over the polytope ``D(x)`` sits at a vertex, and since ``Ĥ(x)`` is convex
this maximum is the support function of ``Ĥ(x)`` itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geometry import ConvexBody, direction_grid, distance, minkowski_weighted, norm_bound, support_many
from .markov import MarkovKernel, StationarySet, check_distribution, stationary_set
from .svmap import DriftMap


@dataclass(eq=False)
class AveragedMap:
    drift: DriftMap
    kernel: MarkovKernel
    _cached: StationarySet | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.drift.n_states != self.kernel.n_states:
            raise ValidationError(
                f"drift has {self.drift.n_states} states but kernel has {self.kernel.n_states}",
                field="n_states",
            )

    @property
    def dim(self) -> int:
        return self.drift.dim

    def stationary(self, x) -> StationarySet:
        # an x-independent kernel has one stationary set; caching it never changes results
        if not self.kernel.depends_on_x:
            if self._cached is None:
                self._cached = stationary_set(self.kernel, x)
            return self._cached
        return stationary_set(self.kernel, x)

    def bodies(self, x) -> list[ConvexBody]:
        x = np.asarray(x, dtype=float)
        return [self.drift.eval(x, s) for s in range(self.drift.n_states)]


def averaged_body(am: AveragedMap, x, mu) -> ConvexBody:
    """``Σ_s mu(s) H(x, s)``, exact for finite state spaces."""
    mu = check_distribution(mu, am.drift.n_states, what="mu")
    return minkowski_weighted(am.bodies(x), mu)


def _per_state_support(bodies, D) -> np.ndarray:
    """(n_states, k) matrix of support values."""
    return np.vstack([support_many(b, D) for b in bodies])


def _support_points(body: ConvexBody, D) -> np.ndarray:
    idx = np.argmax(body.generators @ D.T, axis=0)
    pts = body.generators[idx].copy()
    if body.radius > 0:
        n = np.linalg.norm(D, axis=1, keepdims=True)
        unit = np.divide(D, n, out=np.zeros_like(D), where=n > 0)
        pts += body.radius * unit
    return pts


def hhat_support_many(am: AveragedMap, x, dirs) -> np.ndarray:
    D = np.atleast_2d(np.asarray(dirs, dtype=float))
    per_state = _per_state_support(am.bodies(x), D)
    V = am.stationary(x).vertices
    return (V @ per_state).max(axis=0)


def hhat_support(am: AveragedMap, x, direction) -> float:
    """Exact support function of ``Ĥ(x)`` in ``direction``."""
    return float(hhat_support_many(am, x, [np.atleast_1d(direction)])[0])


def hhat_extreme_points(am: AveragedMap, x, dirs) -> np.ndarray:
    """Members of ``Ĥ(x)`` attaining the support value in each row of ``dirs``."""
    D = np.atleast_2d(np.asarray(dirs, dtype=float))
    bodies = am.bodies(x)
    V = am.stationary(x).vertices
    per_state = _per_state_support(bodies, D)
    best = np.argmax(V @ per_state, axis=0)
    pts = np.stack([_support_points(b, D) for b in bodies])  # (n_states, k, d)
    weights = V[best]  # (k, n_states)
    return np.einsum("ks,skd->kd", weights, pts)


def hhat_extreme_point(am: AveragedMap, x, direction) -> np.ndarray:
    return hhat_extreme_points(am, x, [np.atleast_1d(direction)])[0]


def default_dirs(dim: int) -> np.ndarray:
    return direction_grid(dim)


def hhat_body(am: AveragedMap, x, dirs=None) -> ConvexBody:
    """Inner polytope approximation of ``Ĥ(x)`` from extreme points on ``dirs``."""
    D = default_dirs(am.dim) if dirs is None else dirs
    pts = hhat_extreme_points(am, x, D)
    return ConvexBody(np.unique(pts, axis=0), 0.0)


def oracle_defect(am: AveragedMap, x, dirs=None, refine: int = 8) -> float:
    """A-posteriori gap between ``Ĥ(x)`` and its inner body, in support terms.

    Returns ``max_u hhat_support(x, u) - support(inner, u)`` over a grid of
    unit directions ``refine`` times finer than ``dirs``.
    """
    D = default_dirs(am.dim) if dirs is None else np.asarray(dirs, dtype=float)
    if am.dim == 1:
        probe = np.array([[1.0], [-1.0]])
    else:
        probe = direction_grid(am.dim, max(len(D) * refine, 16))
    inner = hhat_body(am, x, D)
    gap = hhat_support_many(am, x, probe) - support_many(inner, probe)
    return max(0.0, float(gap.max()))


# -- Marchaud validation -----------------------------------------------------


@dataclass
class MarchaudReport:
    K: float
    growth_violations: int
    worst_growth_excess: float
    sublinearity_violations: int
    homogeneity_violations: int
    closed_graph_radii: list
    closed_graph_defects: list
    oracle_defect: float

    @property
    def growth_ok(self) -> bool:
        return self.growth_violations == 0

    @property
    def convexity_ok(self) -> bool:
        return self.sublinearity_violations == 0 and self.homogeneity_violations == 0

    @property
    def closed_graph_ok(self) -> bool:
        d = self.closed_graph_defects
        noninc = all(b <= a + 1e-12 for a, b in zip(d, d[1:]))
        return noninc and d[-1] <= 1e-2 + self.oracle_defect

    @property
    def ok(self) -> bool:
        return self.growth_ok and self.convexity_ok and self.closed_graph_ok

    def to_dict(self):
        return {
            "K": self.K,
            "growth_ok": self.growth_ok,
            "growth_violations": self.growth_violations,
            "worst_growth_excess": self.worst_growth_excess,
            "convexity_ok": self.convexity_ok,
            "sublinearity_violations": self.sublinearity_violations,
            "homogeneity_violations": self.homogeneity_violations,
            "closed_graph_ok": self.closed_graph_ok,
            "closed_graph_radii": self.closed_graph_radii,
            "closed_graph_defects": self.closed_graph_defects,
            "oracle_defect": self.oracle_defect,
            "ok": self.ok,
        }


def marchaud_report(
    am: AveragedMap,
    x_samples,
    dir_samples,
    seq_samples: int = 10,
    radii=(1e-1, 1e-2, 1e-3),
    seed=0,
    growth_tol: float = 1e-9,
    sublin_tol: float = 1e-10,
    n_perturb: int = 4,
) -> MarchaudReport:
    """Sampled check of linear growth, convexity (via sublinearity) and closed graph.

    The closed-graph part picks ``seq_samples`` of the ``x_samples``; for
    each radius it perturbs them by ``n_perturb`` points at that distance
    and measures how far the extreme points of ``Ĥ`` at the perturbed point
    sit from the inner body of ``Ĥ`` at the base point.
    """
    X = np.atleast_2d(np.asarray(x_samples, dtype=float))
    D = np.atleast_2d(np.asarray(dir_samples, dtype=float))
    K = am.drift.growth_K
    rng = np.random.default_rng(seed)
    dnorm = np.linalg.norm(D, axis=1)

    growth_bad, worst_excess = 0, -np.inf
    sub_bad = hom_bad = 0
    for x in X:
        h = hhat_support_many(am, x, D)
        excess = h - K * (1.0 + np.linalg.norm(x)) * dnorm
        worst_excess = max(worst_excess, float(excess.max()))
        growth_bad += int(np.sum(excess > growth_tol))
        # pair each direction with a shuffled partner
        perm = rng.permutation(len(D))
        h_sum = hhat_support_many(am, x, D + D[perm])
        sub_bad += int(np.sum(h_sum > h + h[perm] + sublin_tol))
        c = rng.uniform(0.0, 3.0, size=len(D))
        h_scaled = hhat_support_many(am, x, D * c[:, None])
        hom_bad += int(np.sum(np.abs(h_scaled - c * h) > sublin_tol))

    fine = default_dirs(am.dim)
    idx = rng.choice(len(X), size=min(seq_samples, len(X)), replace=False)
    defects = []
    worst_oracle = 0.0
    base_bodies = {int(i): hhat_body(am, X[i], fine) for i in idx}
    for i in idx:
        worst_oracle = max(worst_oracle, oracle_defect(am, X[i], fine))
    for r in radii:
        worst = 0.0
        for i in idx:
            x = X[i]
            base = base_bodies[int(i)]
            offs = rng.standard_normal((n_perturb, am.dim))
            offs /= np.linalg.norm(offs, axis=1, keepdims=True)
            for o in offs:
                for z in hhat_extreme_points(am, x + r * o, fine):
                    worst = max(worst, distance(base, z))
        defects.append(worst)
    return MarchaudReport(
        K,
        growth_bad,
        worst_excess,
        sub_bad,
        hom_bad,
        [float(r) for r in radii],
        defects,
        worst_oracle,
    )


def averaged_norm_bound(am: AveragedMap, x) -> float:
    """Upper bound on ``sup ||z||`` over ``Ĥ(x)`` from the per-state bounds."""
    V = am.stationary(x).vertices
    nb = np.array([norm_bound(b) for b in am.bodies(x)])
    return float((V @ nb).max())
