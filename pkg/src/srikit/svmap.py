"""Set-valued drift maps ``H(x, s)`` and their sampled validators.

A :class:`DriftMap` wraps a pure function ``(x, s) -> ConvexBody`` together
with a declared linear-growth constant ``K``. The constructors below cover
singleton drifts, ball-inflated (approximate) drifts, convex hulls over a
control grid, negated subdifferentials of max-affine functions, and Monte
Carlo Filippov envelopes of discontinuous fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import ValidationError
from .geometry import ConvexBody, direction_grid, distance, norm_bound, support_point

TIE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DriftMap:
    """Set-valued map ``H: R^d x S -> convex bodies`` with growth constant ``growth_K``.

    ``point_fn`` is set for maps whose values are singletons; it lets
    :func:`approximate_drift` and the engine skip body construction.
    """

    eval_fn: Callable[[np.ndarray, int], ConvexBody]
    growth_K: float
    dim: int
    n_states: int
    name: str = "custom"
    point_fn: Callable[[np.ndarray, int], np.ndarray] | None = None
    params: dict = field(default_factory=dict)
    objective: Callable[[np.ndarray, int], float] | None = None

    def __post_init__(self):
        if not self.growth_K > 0:
            raise ValidationError(f"growth_K must be positive, got {self.growth_K}", field="K")
        if self.dim < 1 or self.n_states < 1:
            raise ValidationError("dim and n_states must be >= 1")

    def eval(self, x, s: int) -> ConvexBody:
        return self.eval_fn(np.asarray(x, dtype=float), int(s))

    __call__ = eval


def singleton_map(h, K: float, dim: int, n_states: int, name="singleton") -> DriftMap:
    """``H(x, s) = {h(x, s)}``."""

    def point(x, s):
        return np.atleast_1d(np.asarray(h(x, s), dtype=float))

    def ev(x, s):
        return ConvexBody(point(x, s)[None, :], 0.0)

    return DriftMap(ev, K, dim, n_states, name=name, point_fn=point)


def affine_singleton(b, K: float, slope: float = -1.0, name="linear") -> DriftMap:
    """``h(x, s) = slope * x + b[s]``; ``b`` has one row per state."""
    b = np.array(b, dtype=float, ndmin=2)
    b.setflags(write=False)
    n_states, dim = b.shape

    def point(x, s):
        return slope * x + b[s]

    def ev(x, s):
        return ConvexBody((slope * x + b[s])[None, :], 0.0)

    return DriftMap(ev, K, dim, n_states, name=name, point_fn=point, params={"b": b.tolist(), "slope": slope})


def approximate_drift(base: DriftMap, eps: float) -> DriftMap:
    """``H(x, s) = h(x, s) + eps * U`` for a singleton-valued ``base``."""
    if eps < 0:
        raise ValidationError(f"eps must be >= 0, got {eps}", field="eps")
    if base.point_fn is None:
        raise ValidationError("approximate_drift needs a singleton-valued base map")
    if eps == 0:
        return base
    pf = base.point_fn

    def ev(x, s):
        return ConvexBody(pf(x, s)[None, :], eps)

    return DriftMap(
        ev,
        base.growth_K + eps,
        base.dim,
        base.n_states,
        name=f"approximate({base.name})",
        params={**base.params, "eps": eps},
    )


def controlled_hull(h, controls, K: float, dim: int, n_states: int, name="controlled-hull") -> DriftMap:
    """``H(x, s) = co{h(x, z, s) : z in controls}`` over a finite control grid."""
    controls = list(controls)
    if not controls:
        raise ValidationError("control grid must be nonempty", field="controls")

    def ev(x, s):
        return ConvexBody(np.vstack([np.atleast_1d(h(x, z, s)) for z in controls]), 0.0)

    point_fn = None
    if len(controls) == 1:
        z0 = controls[0]

        def point_fn(x, s):
            return np.atleast_1d(np.asarray(h(x, z0, s), dtype=float))

    return DriftMap(ev, K, dim, n_states, name=name, point_fn=point_fn)


def max_affine_subgradient(pieces, K: float | None = None, tie_tol: float = TIE_TOL, name="max-affine") -> DriftMap:
    """``H(x, s) = -∂J(x, s)`` for ``J(x, s) = max_i <a_i(s), x> + b_i(s)``.

    ``pieces[s]`` is a list of ``(a_i, b_i)``. A piece is active when its
    value is within ``tie_tol`` of the maximum. If ``K`` is omitted, the
    largest slope norm is used, which is a valid growth constant.
    """
    if not tie_tol > 0:
        raise ValidationError(f"tie_tol must be positive, got {tie_tol}", field="tie_tol")
    A, B = [], []
    for s, plist in enumerate(pieces):
        if len(plist) == 0:
            raise ValidationError(f"state {s} has no affine pieces", field="pieces")
        a = np.array([np.atleast_1d(np.asarray(p[0], dtype=float)) for p in plist])
        b = np.array([float(p[1]) for p in plist])
        a.setflags(write=False)
        b.setflags(write=False)
        A.append(a)
        B.append(b)
    dim = A[0].shape[1]
    if any(a.shape[1] != dim for a in A):
        raise ValidationError("all slopes must share one dimension", field="pieces")
    if K is None:
        K = max(float(np.max(np.linalg.norm(a, axis=1))) for a in A) or 1.0

    def ev(x, s):
        vals = A[s] @ x + B[s]
        active = vals >= vals.max() - tie_tol
        return ConvexBody(-A[s][active], 0.0)

    def objective(x, s):
        return float(np.max(A[s] @ np.asarray(x, dtype=float) + B[s]))

    return DriftMap(
        ev,
        K,
        dim,
        len(A),
        name=name,
        params={"pieces": [[[a.tolist(), float(bb)] for a, bb in zip(As, Bs)] for As, Bs in zip(A, B)]},
        objective=objective,
    )


def abs_deviation_pieces(thetas):
    """Pieces of ``J(x, s) = |x - theta_s|`` in one dimension."""
    return [[([1.0], -float(t)), ([-1.0], float(t))] for t in thetas]


def unit_ball_samples(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` points uniform in the closed unit ball of R^dim."""
    g = rng.standard_normal((n, dim))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    r = rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


def filippov_envelope(
    h, eps: float, n_samples: int, rng_seed, K: float, dim: int, n_states: int, offsets=None, name="filippov"
) -> DriftMap:
    """Inner Monte Carlo approximation of the Filippov convexification of ``h``.

    ``H(x, s) = co({h(x, s)} ∪ {h(x + o, s) : o in offsets})`` where the
    offsets are drawn once, uniformly from the ``eps``-ball, so evaluation is
    pure. States carry the discrete metric, so only ``s`` itself enters.
    Pass ``offsets`` explicitly to control nesting across ``eps`` values.
    """
    if not eps > 0:
        raise ValidationError(f"eps must be positive, got {eps}", field="eps")
    if offsets is None:
        if n_samples < 1:
            raise ValidationError(f"n_samples must be >= 1, got {n_samples}", field="n_samples")
        offsets = eps * unit_ball_samples(n_samples, dim, np.random.default_rng(rng_seed))
    offsets = np.array(offsets, dtype=float, ndmin=2)
    if np.any(np.linalg.norm(offsets, axis=1) > eps * (1 + 1e-12)):
        raise ValidationError("offsets must lie in the eps-ball", field="offsets")
    offsets.setflags(write=False)

    def ev(x, s):
        pts = [np.atleast_1d(h(x, s))]
        pts.extend(np.atleast_1d(h(x + o, s)) for o in offsets)
        P = np.unique(np.vstack(pts), axis=0)
        return ConvexBody(P, 0.0)

    return DriftMap(ev, K, dim, n_states, name=name, params={"eps": eps, "n_samples": len(offsets)})


# -- validators --------------------------------------------------------------


@dataclass
class GrowthReport:
    K: float
    checked: int
    violations: list  # (x, s, norm_bound, allowed)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {
            "K": self.K,
            "checked": self.checked,
            "ok": self.ok,
            "violations": [
                {"x": list(map(float, x)), "s": s, "norm_bound": nb, "allowed": al}
                for x, s, nb, al in self.violations
            ],
        }


def check_growth(dm: DriftMap, x_samples, tol: float = 1e-9) -> GrowthReport:
    """Check ``norm_bound(H(x, s)) <= K (1 + ||x||) + tol`` on every sample and state."""
    violations = []
    xs = np.atleast_2d(np.asarray(x_samples, dtype=float))
    for x in xs:
        allowed = dm.growth_K * (1.0 + float(np.linalg.norm(x)))
        for s in range(dm.n_states):
            nb = norm_bound(dm.eval(x, s))
            if nb > allowed + tol:
                violations.append((x.copy(), s, nb, allowed))
    return GrowthReport(dm.growth_K, xs.shape[0] * dm.n_states, violations)


@dataclass
class ClosedGraphReport:
    radii: list
    defects: list
    nonincreasing: bool
    final_tol: float

    @property
    def ok(self) -> bool:
        return self.nonincreasing and self.defects[-1] <= self.final_tol

    def to_dict(self):
        return {
            "radii": self.radii,
            "defects": self.defects,
            "nonincreasing": self.nonincreasing,
            "ok": self.ok,
        }


def _members(body: ConvexBody, probe_dirs) -> np.ndarray:
    pts = [body.generators]
    if body.radius > 0:
        pts.append(np.vstack([support_point(body, d) for d in probe_dirs]))
    return np.vstack(pts)


def check_closed_graph(
    dm: DriftMap,
    x,
    s: int,
    radii=(1e-1, 1e-2, 1e-3),
    probe_dirs=None,
    n_points: int = 8,
    seed=0,
    tol: float = 1e-9,
    final_tol: float = 1e-2,
) -> ClosedGraphReport:
    """Sampled upper-semicontinuity check of ``x' -> H(x', s)`` at ``x``.

    For each radius ``r`` the outer defect is the largest distance from
    ``H(x, s)`` to a sampled member of ``H(x', s)`` with ``||x' - x|| <= r``.
    Closed graph requires these defects to shrink toward zero.
    """
    radii = [float(r) for r in radii]
    if any(b >= a for a, b in zip(radii, radii[1:])) or radii[-1] <= 0:
        raise ValidationError("radii must be strictly decreasing and positive", field="radii")
    x = np.asarray(x, dtype=float)
    if probe_dirs is None:
        probe_dirs = direction_grid(dm.dim, 16 if dm.dim == 2 else None)
    rng = np.random.default_rng(seed)
    base = dm.eval(x, s)
    unit = unit_ball_samples(n_points, dm.dim, rng)
    # include the boundary points along each axis so 1-d kinks are hit from both sides
    unit = np.vstack([unit, np.eye(dm.dim), -np.eye(dm.dim)])
    defects = []
    for r in radii:
        worst = 0.0
        for u in unit:
            body = dm.eval(x + r * u, s)
            for z in _members(body, probe_dirs):
                worst = max(worst, distance(base, z, tol))
        defects.append(worst)
    noninc = all(b <= a + tol for a, b in zip(defects, defects[1:]))
    return ClosedGraphReport(radii, defects, noninc, final_tol)


def jump_fixture(dim: int = 1, n_states: int = 1, at=None) -> DriftMap:
    """Test map without a closed graph: ``{0}`` exactly at ``at``, ``{1}`` elsewhere."""
    at = np.zeros(dim) if at is None else np.asarray(at, dtype=float)

    def point(x, s):
        return np.zeros(dim) if np.array_equal(x, at) else np.ones(dim)

    return singleton_map(point, K=float(np.sqrt(dim)), dim=dim, n_states=n_states, name="jump")
