"""The stochastic recursive inclusion and its algorithmic timeline.

One step of the recursion::

    V_n in H(X_n, S_n)                 (chosen by a selection policy)
    X_{n+1} = X_n + a(n) (V_n + M_{n+1})
    S_{n+1} ~ kernel.row(X_n, S_n)

Randomness comes from three independent streams spawned from the run seed:
Markov transitions, additive noise, and the selection policy. Changing the
noise model therefore never changes the state sequence of a run with a
fixed seed and x-independent kernel.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import HorizonError, StabilityError, ValidationError
from .geometry import ConvexBody, distance, project, support_point
from .markov import MarkovKernel
from .svmap import DriftMap

BLOWUP_DEFAULT = 1e6


@dataclass(frozen=True)
class StepSchedule:
    """``a(n) = a0 / (n + 1) ** gamma``.

    ``a0 <= 1`` is enforced here; the summability conditions depend on
    ``gamma`` and are reported by :func:`check_A3` rather than rejected, so
    that ill-posed schedules can still be diagnosed.
    """

    a0: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not (0 < self.a0 <= 1):
            raise ValidationError(f"a0 must lie in (0, 1], got {self.a0}", field="schedule.a0")
        if not (self.gamma >= 0 and math.isfinite(self.gamma)):
            raise ValidationError(f"gamma must be finite and >= 0, got {self.gamma}", field="schedule.gamma")

    def __call__(self, n):
        return self.a0 / (np.asarray(n, dtype=float) + 1.0) ** self.gamma

    def steps(self, N: int) -> np.ndarray:
        return self(np.arange(N))


@dataclass(frozen=True)
class NoiseModel:
    """Martingale-difference noise ``M_{n+1}``.

    ``bounded-iid`` draws each coordinate uniformly from ``[-bound, bound]``;
    ``gaussian-md`` draws iid ``N(0, sigma^2)`` coordinates. ``constant`` is a
    test fixture (``M_n = vector`` always) that deliberately breaks the
    noise assumption.
    """

    kind: str = "none"
    bound: float = 0.0
    sigma: float = 0.0
    vector: tuple = ()

    KINDS = ("none", "bounded-iid", "gaussian-md", "constant")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"unknown noise kind {self.kind!r}; expected one of {self.KINDS}", field="noise.kind")
        if self.kind == "bounded-iid" and not self.bound >= 0:
            raise ValidationError(f"noise bound must be >= 0, got {self.bound}", field="noise.bound")
        if self.kind == "gaussian-md" and not self.sigma >= 0:
            raise ValidationError(f"noise sigma must be >= 0, got {self.sigma}", field="noise.sigma")

    def draw(self, rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros((n, dim))
        if self.kind == "bounded-iid":
            return rng.uniform(-self.bound, self.bound, size=(n, dim))
        if self.kind == "gaussian-md":
            return rng.normal(0.0, self.sigma, size=(n, dim))
        v = np.asarray(self.vector, dtype=float)
        if v.shape != (dim,):
            raise ValidationError(f"constant noise vector must have length {dim}", field="noise.vector")
        return np.broadcast_to(v, (n, dim)).copy()


# -- selection policies ------------------------------------------------------


class SelectionPolicy:
    name = "base"

    def select(self, body: ConvexBody, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self):
        return {"kind": self.name}


class RandomVertex(SelectionPolicy):
    """Uniform generator; for bodies with a ball part, plus a uniform boundary offset."""

    name = "random-vertex"

    def select(self, body, rng):
        g = body.generators
        v = g[rng.integers(g.shape[0])] if g.shape[0] > 1 else g[0]
        if body.radius > 0:
            u = rng.standard_normal(body.dim)
            v = v + body.radius * u / np.linalg.norm(u)
        return np.array(v, dtype=float)


class LeastNorm(SelectionPolicy):
    name = "least-norm"

    def select(self, body, rng):
        return project(body, np.zeros(body.dim))


@dataclass
class TowardTarget(SelectionPolicy):
    """Support point of the body in a fixed direction."""

    direction: tuple
    name = "toward-target"

    def select(self, body, rng):
        return support_point(body, np.asarray(self.direction, dtype=float))

    def to_dict(self):
        return {"kind": self.name, "direction": list(self.direction)}


class Singleton(SelectionPolicy):
    name = "singleton"

    def select(self, body, rng):
        if not body.is_singleton:
            raise ValidationError("singleton policy used with a non-singleton drift value", field="policy")
        return np.array(body.generators[0])


def make_policy(spec) -> SelectionPolicy:
    if isinstance(spec, SelectionPolicy):
        return spec
    if isinstance(spec, str):
        spec = {"kind": spec}
    kind = spec.get("kind")
    if kind == "random-vertex":
        return RandomVertex()
    if kind == "least-norm":
        return LeastNorm()
    if kind == "singleton":
        return Singleton()
    if kind == "toward-target":
        if "direction" not in spec:
            raise ValidationError("toward-target policy needs a direction", field="policy.direction")
        return TowardTarget(tuple(float(v) for v in spec["direction"]))
    raise ValidationError(f"unknown selection policy {kind!r}", field="policy.kind")


# -- trajectory --------------------------------------------------------------


@dataclass
class Trajectory:
    """Recorded run.

    ``a``, ``V``, ``M`` have one entry per step (``M[n]`` is ``M_{n+1}``);
    ``t``, ``X``, ``S`` have one entry per iterate, ``N + 1`` in total.
    """

    a: np.ndarray
    t: np.ndarray
    X: np.ndarray
    S: np.ndarray
    V: np.ndarray
    M: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.a.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def horizon(self) -> float:
        return float(self.t[-1])


def run(
    drift: DriftMap,
    kernel: MarkovKernel,
    schedule: StepSchedule,
    noise: NoiseModel,
    policy,
    x0,
    s0: int,
    n_steps: int,
    seed,
    blowup: float = BLOWUP_DEFAULT,
) -> Trajectory:
    """Run ``n_steps`` of the recursion. Deterministic given ``seed``.

    Raises
    ------
    StabilityError
        If some ``||X_n||`` exceeds ``blowup``.
    """
    if n_steps < 1:
        raise ValidationError(f"n_steps must be >= 1, got {n_steps}", field="n_steps")
    if drift.n_states != kernel.n_states:
        raise ValidationError("drift and kernel disagree on the number of states", field="n_states")
    if not 0 <= s0 < kernel.n_states:
        raise ValidationError(f"s0={s0} outside [0, {kernel.n_states})", field="s0")
    policy = make_policy(policy)
    d = drift.dim
    x = np.asarray(x0, dtype=float).copy()
    if x.shape != (d,):
        raise ValidationError(f"x0 must have length {d}", field="x0")

    ss = np.random.SeedSequence(seed)
    rng_markov, rng_noise, rng_select = (np.random.default_rng(s) for s in ss.spawn(3))

    a = schedule.steps(n_steps)
    t = np.empty(n_steps + 1)
    t[0] = 0.0
    np.cumsum(a, out=t[1:])
    M = noise.draw(rng_noise, n_steps, d)
    U = rng_markov.random(n_steps)
    X = np.empty((n_steps + 1, d))
    S = np.empty(n_steps + 1, dtype=np.int64)
    V = np.empty((n_steps, d))
    X[0] = x
    S[0] = s = int(s0)

    point_fn = drift.point_fn if isinstance(policy, (Singleton, RandomVertex, LeastNorm)) else None
    cumulative = kernel.cumulative
    last = kernel.n_states - 1
    for n in range(n_steps):
        if point_fn is not None:
            v = point_fn(x, s)
        else:
            v = policy.select(drift.eval_fn(x, s), rng_select)
        cum = cumulative(x, s)
        s_next = int(np.searchsorted(cum, U[n], side="right"))
        if s_next > last:
            s_next = last
        x = x + a[n] * (v + M[n])
        V[n] = v
        X[n + 1] = x
        S[n + 1] = s = s_next
        nx = math.sqrt(float(x @ x))
        if not nx <= blowup:
            raise StabilityError(
                f"A5 guard: ||X_{n + 1}|| = {nx:.3e} exceeds blow-up bound {blowup:.3e}; "
                "iterates are not bounded",
                step=n + 1,
                norm=nx,
            )
    meta = {"seed": seed, "policy": policy.to_dict(), "blowup": blowup, "drift": drift.name}
    return Trajectory(a, t, X, S, V, M, meta)


def check_inclusion(traj: Trajectory, drift: DriftMap, tol: float = 1e-9, stride: int = 1) -> float:
    """Largest ``distance(H(X_n, S_n), V_n)`` over recorded steps."""
    worst = 0.0
    for n in range(0, traj.n_steps, stride):
        worst = max(worst, distance(drift.eval(traj.X[n], traj.S[n]), traj.V[n], tol))
    return worst


def interpolate(traj: Trajectory, t) -> np.ndarray:
    """Piecewise-linear interpolation ``x̄(t)``; constant ``X_0`` for ``t < 0``.

    Accepts a scalar time (returns a vector) or an array of times (returns
    one row per time).
    """
    ts = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(ts > traj.t[-1]):
        raise HorizonError(f"time {ts.max()} beyond recorded horizon {traj.t[-1]}")
    out = np.empty((ts.shape[0], traj.dim))
    neg = ts < 0
    out[neg] = traj.X[0]
    tt = ts[~neg]
    n = np.searchsorted(traj.t, tt, side="right") - 1
    n = np.clip(n, 0, traj.n_steps - 1)
    t0 = traj.t[n]
    t1 = traj.t[n + 1]
    lam = (tt - t0) / (t1 - t0)
    out[~neg] = (1.0 - lam)[:, None] * traj.X[n] + lam[:, None] * traj.X[n + 1]
    # exact at breakpoints, including the final one
    exact = tt == t0
    out[np.flatnonzero(~neg)[exact]] = traj.X[n[exact]]
    end = tt == traj.t[-1]
    out[np.flatnonzero(~neg)[end]] = traj.X[-1]
    return out[0] if np.ndim(t) == 0 else out


def tau(schedule, n: int, T: float, horizon: int | None = None, chunk: int = 1 << 16) -> int:
    """``min{m > n : sum_{k=n}^{m-1} a(k) >= T}``.

    ``schedule`` is a :class:`StepSchedule`, any callable ``k -> a(k)``, or a
    :class:`Trajectory` (whose recorded steps are used and whose length is
    the horizon).
    """
    if not T > 0:
        raise ValidationError(f"T must be positive, got {T}", field="T")
    if isinstance(schedule, Trajectory):
        steps = schedule.a
        horizon = steps.shape[0] if horizon is None else min(horizon, steps.shape[0])

        def a_of(k):
            return steps[k]
    else:

        def a_of(k):
            return np.asarray(schedule(k), dtype=float)

    limit = horizon if horizon is not None else 1 << 40
    total = 0.0
    start = n
    while start < limit:
        stop = min(start + chunk, limit)
        part = total + np.cumsum(a_of(np.arange(start, stop)))
        hit = np.flatnonzero(part >= T)
        if hit.size:
            return int(start + hit[0] + 1)
        total = float(part[-1])
        start = stop
    raise HorizonError(f"horizon exhausted: sum of steps from n={n} never reaches T={T}")


# -- assumption diagnostics ---------------------------------------------------


@dataclass
class A3Report:
    a0: float
    gamma: float
    monotone: bool
    a0_ok: bool
    divergent: bool
    square_summable: bool
    partial_sum: float
    partial_square_sum: float
    N: int

    @property
    def ok(self) -> bool:
        return self.monotone and self.a0_ok and self.divergent and self.square_summable

    def to_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {"ok": self.ok}


def check_A3(schedule: StepSchedule, N: int = 100_000) -> A3Report:
    """Step-size conditions for the harmonic-power family.

    ``sum a(n)`` diverges iff ``gamma <= 1``; ``sum a(n)^2`` converges iff
    ``gamma > 1/2``. Monotonicity and ``a(0) <= 1`` are checked on the first
    ``N`` steps directly.
    """
    a = schedule.steps(N)
    return A3Report(
        a0=schedule.a0,
        gamma=schedule.gamma,
        monotone=bool(np.all(np.diff(a) <= 0)),
        a0_ok=bool(a[0] <= 1.0),
        divergent=schedule.gamma <= 1.0,
        square_summable=schedule.gamma > 0.5,
        partial_sum=float(a.sum()),
        partial_square_sum=float((a * a).sum()),
        N=N,
    )


@dataclass
class A4Series:
    T: float
    n: np.ndarray
    g: np.ndarray
    slope: float
    flagged: bool

    def to_dict(self):
        return {"T": self.T, "n": self.n.tolist(), "g": self.g.tolist(), "slope": self.slope, "flagged": self.flagged}


def check_A4(traj: Trajectory, T: float, n_points: int = 20, slope_tol: float = -0.05) -> A4Series:
    """Windowed noise sums ``g(n) = sup_{n<=k<=tau(n,T)} ||sum_{m=n}^k a(m) M_{m+1}||``.

    Evaluated on a log-spaced grid of ``n`` for which the window fits in the
    run. The tail is flagged when the log-log slope of ``g`` over the second
    half of the grid is not below ``slope_tol``; identically zero noise is
    never flagged.
    """
    N = traj.n_steps
    C = np.zeros((N + 1, traj.dim))
    np.cumsum(traj.a[:, None] * traj.M, axis=0, out=C[1:])
    n_max = 0
    # largest n whose window closes inside the run
    lo, hi = 0, N - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        try:
            tau(traj, mid, T)
            n_max, lo = mid, mid + 1
        except HorizonError:
            hi = mid - 1
    grid = np.unique(np.geomspace(1, max(n_max, 1), n_points).astype(int))
    g = np.empty(grid.shape[0])
    for i, n in enumerate(grid):
        m = min(tau(traj, int(n), T), N - 1)
        partial = C[n + 1 : m + 2] - C[n]
        g[i] = float(np.sqrt((partial * partial).sum(axis=1)).max())
    half = grid.shape[0] // 2
    tail_n, tail_g = grid[half:], g[half:]
    if np.all(g == 0):
        slope, flagged = 0.0, False
    elif np.any(tail_g <= 0) or tail_n.shape[0] < 2:
        slope, flagged = float("nan"), False
    else:
        slope = float(np.polyfit(np.log(tail_n), np.log(tail_g), 1)[0])
        flagged = slope >= slope_tol
    return A4Series(T, grid, g, slope, flagged)


@dataclass
class A5Report:
    max_norm: float
    guard_triggered: bool
    blowup: float

    @property
    def ok(self) -> bool:
        return not self.guard_triggered

    def to_dict(self):
        return {"max_norm": self.max_norm, "guard_triggered": self.guard_triggered, "blowup": self.blowup, "ok": self.ok}


def check_A5(traj: Trajectory | None = None, error: StabilityError | None = None, blowup=BLOWUP_DEFAULT) -> A5Report:
    if error is not None:
        return A5Report(float(error.norm), True, blowup)
    norms = np.linalg.norm(traj.X, axis=1)
    b = traj.meta.get("blowup", blowup)
    return A5Report(float(norms.max()), bool(norms.max() > b), b)


def euler_reference(h, x0, a) -> np.ndarray:
    """Explicit Euler iterates of ``x' = h(x)`` on step sizes ``a``."""
    X = np.empty((len(a) + 1, len(np.atleast_1d(x0))))
    X[0] = x0
    for n, an in enumerate(a):
        X[n + 1] = X[n] + an * np.asarray(h(X[n]), dtype=float)
    return X


# -- CSV export --------------------------------------------------------------


def _fmt(v) -> str:
    return format(float(v), ".17g")


def trajectory_header(dim: int) -> list[str]:
    return (
        ["n", "t", "a", "S"]
        + [f"X_{i}" for i in range(dim)]
        + [f"V_{i}" for i in range(dim)]
        + [f"M_{i}" for i in range(dim)]
    )


def write_trajectory_csv(traj: Trajectory, fh) -> None:
    """One row per iterate ``n = 0..N``; the terminal row has ``nan`` in a, V, M."""
    w = csv.writer(fh, lineterminator="\n")
    d = traj.dim
    w.writerow(trajectory_header(d))
    nan = ["nan"] * d
    for n in range(traj.n_steps + 1):
        if n < traj.n_steps:
            a, V, M = _fmt(traj.a[n]), [_fmt(v) for v in traj.V[n]], [_fmt(v) for v in traj.M[n]]
        else:
            a, V, M = "nan", nan, nan
        w.writerow([str(n), _fmt(traj.t[n]), a, str(int(traj.S[n]))] + [_fmt(v) for v in traj.X[n]] + V + M)


def trajectory_to_csv(traj: Trajectory) -> str:
    buf = io.StringIO()
    write_trajectory_csv(traj, buf)
    return buf.getvalue()


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[:4] != ["n", "t", "a", "S"]:
        raise ValidationError(f"{path}: not a trajectory CSV (header {header[:4]})", field=str(path))
    d = sum(1 for h in header if h.startswith("X_"))
    data = np.array([[float(v) for v in r] for r in rows])
    t = data[:, 1]
    a = data[:-1, 2]
    S = data[:, 3].astype(np.int64)
    X = data[:, 4 : 4 + d]
    V = data[:-1, 4 + d : 4 + 2 * d]
    M = data[:-1, 4 + 2 * d : 4 + 3 * d]
    return Trajectory(a, t, X, S, V, M, {"source": str(path)})
