"""Finitely represented convex bodies: ``hull(generators) + radius * U``.

``U`` is the closed Euclidean unit ball. Every operation here is exact
except the point-to-hull distance, which is computed by a fully corrective
conditional-gradient method (Wolfe's minimum-norm-point algorithm) stopped
on its duality gap.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, GeneratorCapError, ValidationError

DEFAULT_TOL = 1e-9
MAX_ITER = 10_000
GENERATOR_CAP = 100_000


class ConvexBody:
    """Compact convex set ``hull(generators) ⊕ radius·U`` in R^d.

    Instances are immutable; the generator array is read-only.
    """

    __slots__ = ("generators", "radius")

    def __init__(self, generators, radius=0.0):
        g = np.array(generators, dtype=float, ndmin=2)
        if g.ndim != 2 or g.shape[0] == 0 or g.shape[1] == 0:
            raise ValidationError("ConvexBody needs a nonempty (m, d) generator array")
        if not np.all(np.isfinite(g)):
            raise ValidationError("ConvexBody generators must be finite")
        radius = float(radius)
        if not (radius >= 0.0 and math.isfinite(radius)):
            raise ValidationError(f"ConvexBody radius must be finite and >= 0, got {radius}")
        g.setflags(write=False)
        object.__setattr__(self, "generators", g)
        object.__setattr__(self, "radius", radius)

    def __setattr__(self, name, value):
        raise AttributeError("ConvexBody is immutable")

    @classmethod
    def point(cls, p):
        return cls(np.atleast_1d(np.asarray(p, dtype=float))[None, :], 0.0)

    @classmethod
    def ball(cls, center, radius):
        return cls(np.atleast_1d(np.asarray(center, dtype=float))[None, :], radius)

    @property
    def dim(self) -> int:
        return self.generators.shape[1]

    @property
    def is_singleton(self) -> bool:
        return self.radius == 0.0 and self.generators.shape[0] == 1

    def __repr__(self):
        return f"ConvexBody(generators={self.generators.tolist()}, radius={self.radius})"


def _as_vec(v, dim=None) -> np.ndarray:
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if v.ndim != 1:
        raise ValidationError(f"expected a vector, got shape {v.shape}")
    if dim is not None and v.shape[0] != dim:
        raise ValidationError(f"dimension mismatch: expected {dim}, got {v.shape[0]}")
    return v


def support(body: ConvexBody, direction) -> float:
    """Support function ``max_{z in body} <z, direction>``."""
    d = _as_vec(direction, body.dim)
    return float(np.max(body.generators @ d) + body.radius * np.linalg.norm(d))


def support_many(body: ConvexBody, directions) -> np.ndarray:
    """Support values for each row of ``directions`` (k, d)."""
    D = np.asarray(directions, dtype=float)
    return (body.generators @ D.T).max(axis=0) + body.radius * np.linalg.norm(D, axis=1)


def support_point(body: ConvexBody, direction) -> np.ndarray:
    """A member of ``body`` attaining ``support(body, direction)``.

    Ties between generators go to the lowest index. For a zero direction the
    first generator is returned.
    """
    d = _as_vec(direction, body.dim)
    g = body.generators[int(np.argmax(body.generators @ d))]
    n = np.linalg.norm(d)
    if body.radius > 0.0 and n > 0.0:
        return g + body.radius * (d / n)
    return g.copy()


def norm_bound(body: ConvexBody) -> float:
    """Upper bound ``max_g ||g|| + radius`` on the norm of members.

    Exact when ``radius == 0``.
    """
    return float(np.max(np.linalg.norm(body.generators, axis=1)) + body.radius)


def norm_lower_bound(body: ConvexBody) -> float:
    return float(np.max(np.linalg.norm(body.generators, axis=1)))


def _affine_min_norm(P: np.ndarray) -> np.ndarray:
    """Affine weights (sum 1) of the minimum-norm point in aff(rows of P)."""
    k = P.shape[0]
    if k == 1:
        return np.ones(1)
    G = P @ P.T
    A = np.empty((k + 1, k + 1))
    A[:k, :k] = G
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    A[k, k] = 0.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    w = sol[:k]
    return w / w.sum()


def _min_norm_point(P: np.ndarray, tol: float, max_iter: int = MAX_ITER):
    """Wolfe's minimum-norm-point algorithm on the hull of the rows of ``P``.

    Returns ``(x, weights)`` with ``x = weights @ P``. Stops when the
    Frank-Wolfe gap ``||x||^2 - min_i <x, P_i>`` drops to ``tol * ||x||``,
    which certifies ``||x|| - dist(0, hull) <= tol``.
    """
    m = P.shape[0]
    norms2 = np.einsum("ij,ij->i", P, P)
    j0 = int(np.argmin(norms2))
    active = [j0]
    lam = np.ones(1)
    x = P[j0].copy()
    # Corrals shrink strictly in norm, so this bounds the major loop too.
    for _ in range(max_iter):
        xnorm = math.sqrt(float(x @ x))
        if xnorm <= tol:
            break
        scores = P @ x
        j = int(np.argmin(scores))
        gap = float(x @ x) - float(scores[j])
        if gap <= tol * xnorm or j in active:
            break
        active.append(j)
        lam = np.append(lam, 0.0)
        for _ in range(max_iter):
            alpha = _affine_min_norm(P[active])
            if np.all(alpha > 1e-14):
                lam = alpha
                break
            neg = alpha <= 1e-14
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - alpha), np.inf)
            theta = float(min(1.0, np.min(ratios)))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-14
            if not keep.any():
                keep[int(np.argmax(lam))] = True
            active = [a for a, k in zip(active, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        else:
            raise ConvergenceError("min-norm-point minor loop did not converge; input ill-conditioned")
        x = lam @ P[active]
    else:
        raise ConvergenceError(
            f"conditional-gradient projection exceeded {max_iter} iterations; input ill-conditioned"
        )
    w = np.zeros(m)
    w[active] = lam
    return x, w


def _hull_projection(generators: np.ndarray, p: np.ndarray, tol: float) -> np.ndarray:
    m, d = generators.shape
    if m == 1:
        return generators[0].copy()
    if d == 1:
        return np.clip(p, generators.min(axis=0), generators.max(axis=0))
    shifted = generators - p
    x, _ = _min_norm_point(shifted, tol)
    # p is inside the hull up to the solver tolerance: return it exactly
    if np.linalg.norm(x) <= tol * max(1.0, float(np.abs(shifted).max())):
        return p.copy()
    return x + p


def _check_tol(tol):
    if not tol > 0:
        raise ValidationError(f"tol must be positive, got {tol}", field="tol")


def distance(body: ConvexBody, p, tol: float = DEFAULT_TOL) -> float:
    """Euclidean distance from ``p`` to ``body``, accurate to ``tol``."""
    _check_tol(tol)
    p = _as_vec(p, body.dim)
    q = _hull_projection(body.generators, p, tol)
    return max(0.0, float(np.linalg.norm(p - q)) - body.radius)


def project(body: ConvexBody, p, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Nearest member of ``body`` to ``p`` (within ``tol``)."""
    _check_tol(tol)
    p = _as_vec(p, body.dim)
    q = _hull_projection(body.generators, p, tol)
    gap = p - q
    n = float(np.linalg.norm(gap))
    if n <= body.radius:
        return p.copy()
    return q + body.radius * (gap / n)


def contains(body: ConvexBody, p, tol: float = DEFAULT_TOL) -> bool:
    return distance(body, p, tol) <= tol


def minkowski_weighted(bodies, weights, cap: int = GENERATOR_CAP) -> ConvexBody:
    """Exact ``sum_i w_i * body_i``.

    Generators of the result are all sums taking one weighted generator from
    each body with positive weight; radii combine linearly.
    """
    bodies = list(bodies)
    w = np.asarray(weights, dtype=float).ravel()
    if len(bodies) == 0 or len(bodies) != w.shape[0]:
        raise ValidationError("need one weight per body and at least one body")
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValidationError(f"weights must lie on the simplex, got {w.tolist()}")
    dim = bodies[0].dim
    if any(b.dim != dim for b in bodies):
        raise ValidationError("all bodies must share one dimension")
    used = [(wi, b) for wi, b in zip(w, bodies) if wi > 0.0]
    count = 1
    for _, b in used:
        count *= b.generators.shape[0]
    if count > cap:
        raise GeneratorCapError(
            f"weighted Minkowski sum would have {count} generators (cap {cap}); "
            "coarsen the inputs (fewer generators per body or fewer states)"
        )
    radius = float(sum(wi * b.radius for wi, b in used))
    gens = np.zeros((1, dim))
    for wi, b in used:
        # (a + b) broadcast keeps cartesian order: outer loop over earlier bodies
        gens = (gens[:, None, :] + wi * b.generators[None, :, :]).reshape(-1, dim)
    return ConvexBody(_unique_rows(gens), radius)


def _unique_rows(g: np.ndarray) -> np.ndarray:
    if g.shape[0] <= 1:
        return g
    _, idx = np.unique(g, axis=0, return_index=True)
    return g[np.sort(idx)]


def direction_grid(dim: int, n: int | None = None) -> np.ndarray:
    """Unit directions: ±1 for d=1, uniform circle for d=2, Fibonacci sphere for d=3."""
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        n = 64 if n is None else n
        ang = 2.0 * np.pi * np.arange(n) / n
        return np.column_stack([np.cos(ang), np.sin(ang)])
    if dim == 3:
        n = 512 if n is None else n
        k = np.arange(n) + 0.5
        z = 1.0 - 2.0 * k / n
        r = np.sqrt(1.0 - z * z)
        phi = np.pi * (1.0 + 5**0.5) * k
        return np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    n = 2 * dim if n is None else n
    eye = np.eye(dim)
    base = np.vstack([eye, -eye])
    if n <= base.shape[0]:
        return base
    rng = np.random.default_rng(0)
    extra = rng.standard_normal((n - base.shape[0], dim))
    extra /= np.linalg.norm(extra, axis=1, keepdims=True)
    return np.vstack([base, extra])


__all__ = [
    "ConvexBody",
    "support",
    "support_many",
    "support_point",
    "norm_bound",
    "norm_lower_bound",
    "distance",
    "project",
    "contains",
    "minkowski_weighted",
    "direction_grid",
    "DEFAULT_TOL",
]
