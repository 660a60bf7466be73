"""Finite-state Markov noise.

Three kernel variants share one interface, ``row(x, s)``:

* :class:`MatrixKernel` -- iterate-independent, a fixed row-stochastic matrix.
* :class:`IterateKernel` -- rows depend continuously on the iterate ``x``.
* :class:`ControlledKernel` -- per-control kernels averaged by a stationary
  randomized policy ``phi(s)``.

The stationary set ``D(x)`` is represented by its vertices, one per closed
recurrent class of the transition graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NumericalError, ValidationError

ROW_TOL = 1e-12
SUPPORT_TOL = 1e-12
STATIONARY_TOL = 1e-10


def check_distribution(w, n_states=None, what="row") -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or (n_states is not None and w.shape[0] != n_states):
        raise ValidationError(f"{what} must be a vector of length {n_states}, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValidationError(f"{what} has negative or non-finite entries: {w.tolist()}")
    if abs(w.sum() - 1.0) > ROW_TOL:
        raise ValidationError(f"{what} sums to {w.sum()!r}, not 1")
    return w


def check_stochastic(P, what="matrix") -> np.ndarray:
    P = np.array(P, dtype=float, ndmin=2)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError(f"{what} must be square, got shape {P.shape}")
    for i, r in enumerate(P):
        check_distribution(r, P.shape[0], what=f"{what} row {i}")
    return P


class MarkovKernel:
    """Base class. Subclasses implement :meth:`row`."""

    n_states: int
    depends_on_x: bool = True

    def row(self, x, s: int) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, x) -> np.ndarray:
        return np.vstack([self.row(x, s) for s in range(self.n_states)])

    def cumulative(self, x, s: int) -> np.ndarray:
        return np.cumsum(self.row(x, s))


@dataclass(frozen=True, eq=False)
class MatrixKernel(MarkovKernel):
    """Iterate-independent kernel given by a row-stochastic matrix."""

    P: np.ndarray
    depends_on_x = False

    def __post_init__(self):
        P = check_stochastic(self.P, "transition matrix")
        P.setflags(write=False)
        cum = np.cumsum(P, axis=1)
        cum[:, -1] = 1.0
        cum.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "_cum", cum)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    def row(self, x, s):
        return self.P[s]

    def matrix(self, x):
        return self.P

    def cumulative(self, x, s):
        return self._cum[s]


@dataclass(frozen=True, eq=False)
class IterateKernel(MarkovKernel):
    """Kernel whose rows ``row_fn(x, s)`` vary with the iterate."""

    row_fn: Callable[[np.ndarray, int], Sequence[float]]
    n_states: int
    validate: bool = True

    def row(self, x, s):
        r = np.asarray(self.row_fn(np.asarray(x, dtype=float), s), dtype=float)
        if self.validate:
            check_distribution(r, self.n_states, what=f"row({s})")
        return r


@dataclass(frozen=True, eq=False)
class ControlledKernel(MarkovKernel):
    """Controlled kernel averaged over a stationary randomized policy.

    ``kernels[z]`` is the kernel used under control ``z``; ``policy[s]`` is
    the distribution over controls applied in state ``s``. The effective row
    is ``sum_z policy[s, z] * kernels[z].row(x, s)``.
    """

    kernels: tuple
    policy: np.ndarray

    def __post_init__(self):
        kernels = tuple(self.kernels)
        if not kernels:
            raise ValidationError("controlled kernel needs at least one control")
        n = kernels[0].n_states
        if any(k.n_states != n for k in kernels):
            raise ValidationError("all per-control kernels must have the same number of states")
        pol = np.array(self.policy, dtype=float, ndmin=2)
        if pol.shape != (n, len(kernels)):
            raise ValidationError(
                f"policy must have shape (n_states, n_controls) = ({n}, {len(kernels)}), got {pol.shape}"
            )
        for s, r in enumerate(pol):
            check_distribution(r, len(kernels), what=f"policy row {s}")
        pol.setflags(write=False)
        object.__setattr__(self, "kernels", kernels)
        object.__setattr__(self, "policy", pol)

    @property
    def n_states(self) -> int:
        return self.kernels[0].n_states

    @property
    def depends_on_x(self) -> bool:
        return any(k.depends_on_x for k in self.kernels)

    def row(self, x, s):
        out = np.zeros(self.n_states)
        for z, k in enumerate(self.kernels):
            wz = self.policy[s, z]
            if wz > 0.0:
                out += wz * k.row(x, s)
        return out


def effective_row(kernel: MarkovKernel, x, s: int) -> np.ndarray:
    """The transition row actually used from ``(x, s)``, validated."""
    return check_distribution(kernel.row(x, s), kernel.n_states, what=f"effective row({s})")


def sample_next(kernel: MarkovKernel, x, s: int, rng: np.random.Generator) -> int:
    cum = kernel.cumulative(x, s)
    return int(min(np.searchsorted(cum, rng.random(), side="right"), kernel.n_states - 1))


def recurrent_classes(P, support_tol: float = SUPPORT_TOL) -> list[list[int]]:
    """Closed communicating classes of the graph ``{(i, j): P[i, j] > support_tol}``.

    Classes are listed in order of their smallest state.
    """
    P = np.asarray(P, dtype=float)
    adj = P > support_tol
    ncomp, labels = connected_components(adj, directed=True, connection="strong")
    closed = np.ones(ncomp, dtype=bool)
    src, dst = np.nonzero(adj)
    leaving = labels[src] != labels[dst]
    closed[labels[src[leaving]]] = False
    classes = [np.flatnonzero(labels == c).tolist() for c in range(ncomp) if closed[c]]
    return sorted(classes, key=lambda c: c[0])


@dataclass(frozen=True)
class StationarySet:
    """Vertices of the polytope of stationary distributions.

    ``vertices[i]`` is supported on ``classes[i]``; every stationary law is
    a convex combination of the vertices.
    """

    vertices: np.ndarray
    classes: tuple
    residuals: tuple = field(default=())

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def is_unique(self) -> bool:
        return self.vertices.shape[0] == 1


def _solve_block(Q: np.ndarray) -> np.ndarray:
    k = Q.shape[0]
    if k == 1:
        return np.ones(1)
    A = np.vstack([Q.T - np.eye(k), np.ones((1, k))])
    b = np.zeros(k + 1)
    b[-1] = 1.0
    pi = np.linalg.lstsq(A, b, rcond=None)[0]
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def _power_block(Q: np.ndarray, iters: int = 100_000, tol: float = 1e-14) -> np.ndarray:
    # lazy chain removes periodicity without changing the stationary law
    L = 0.5 * (Q + np.eye(Q.shape[0]))
    pi = np.full(Q.shape[0], 1.0 / Q.shape[0])
    for _ in range(iters):
        nxt = pi @ L
        if np.abs(nxt - pi).sum() < tol:
            return nxt / nxt.sum()
        pi = nxt
    return pi / pi.sum()


def stationary_vertices(P, tol: float = STATIONARY_TOL, support_tol: float = SUPPORT_TOL) -> StationarySet:
    """One stationary vertex per closed recurrent class of ``P``.

    Each class is solved directly (least squares on ``pi (Q - I) = 0``,
    ``sum pi = 1``); if the residual ``||pi P - pi||_1`` exceeds ``tol`` the
    block falls back to power iteration on the lazy chain.
    """
    P = check_stochastic(P)
    n = P.shape[0]
    classes = recurrent_classes(P, support_tol)
    verts, residuals = [], []
    for cls in classes:
        Q = P[np.ix_(cls, cls)]
        Q = Q / Q.sum(axis=1, keepdims=True)
        pi_c = _solve_block(Q)
        pi = np.zeros(n)
        pi[cls] = pi_c
        res = float(np.abs(pi @ P - pi).sum())
        if res > tol:
            pi_c = _power_block(Q)
            pi = np.zeros(n)
            pi[cls] = pi_c
            res = float(np.abs(pi @ P - pi).sum())
        if res > tol:
            raise NumericalError(f"stationary solve residual {res:.3e} exceeds tol {tol:.1e} on class {cls}")
        verts.append(pi)
        residuals.append(res)
    V = np.vstack(verts)
    V.setflags(write=False)
    return StationarySet(V, tuple(tuple(c) for c in classes), tuple(residuals))


def stationary_set(kernel: MarkovKernel, x, tol: float = STATIONARY_TOL) -> StationarySet:
    """``D(x)``: stationary laws of the kernel frozen at iterate ``x``."""
    P = np.vstack([effective_row(kernel, x, s) for s in range(kernel.n_states)])
    return stationary_vertices(P, tol)


def continuity_modulus(kernel: MarkovKernel, x_samples, delta: float = 1e-6, rng=None) -> float:
    """Largest sampled ``||row(x+h, s) - row(x, s)||_1 / ||h||`` with ``||h|| = delta``.

    Only a sampled diagnostic of continuity in ``x``; it certifies nothing.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for x in np.atleast_2d(np.asarray(x_samples, dtype=float)):
        h = rng.standard_normal(x.shape[0])
        h *= delta / np.linalg.norm(h)
        for s in range(kernel.n_states):
            diff = np.abs(kernel.row(x + h, s) - kernel.row(x, s)).sum()
            worst = max(worst, float(diff) / delta)
    return worst


def load_matrix(path) -> np.ndarray:
    """Read a whitespace-separated numeric matrix, one row per line.

    Blank lines and ``#`` comments are ignored.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"kernel file not found: {path}", field=str(path))
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split()])
        except ValueError as exc:
            raise ValidationError(f"{path}:{lineno}: non-numeric entry ({exc})", field=str(path)) from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ValidationError(f"{path}: rows must be nonempty and of equal length", field=str(path))
    return np.array(rows)


def sigmoid_switch_kernel(scale: float = 1.0, floor: float = 0.1) -> IterateKernel:
    """Two-state kernel whose switching probabilities depend smoothly on ``x[0]``.

    ``P(0 -> 1) = floor + (1 - 2 floor) * sigmoid(scale * x0)`` and
    ``P(1 -> 0) = floor + (1 - 2 floor) * sigmoid(-scale * x0)``.
    """

    def row(x, s):
        p = floor + (1.0 - 2.0 * floor) / (1.0 + np.exp(-scale * x[0]))
        q = floor + (1.0 - 2.0 * floor) / (1.0 + np.exp(scale * x[0]))
        return (1.0 - p, p) if s == 0 else (q, 1.0 - q)

    return IterateKernel(row, 2)
