import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srikit.apt import AptSeries, SampledPath, apt_statistic, log_time_grid, metric_D, shifted_path, window_error
from srikit.averaging import AveragedMap
from srikit.engine import NoiseModel, StepSchedule, interpolate, run
from srikit.errors import HorizonError, ValidationError
from srikit.markov import MatrixKernel
from srikit.svmap import affine_singleton

K = 20
GRID = np.linspace(-K, K, 401)
ONE = MatrixKernel([[1.0]])


def path(values, times=GRID):
    return SampledPath(times, np.asarray(values, dtype=float).reshape(len(times), -1))


def test_metric_examples():
    base = np.sin(GRID)
    assert metric_D(path(base), path(base)) == 0.0
    assert metric_D(path(base), path(base + 1.0)) == pytest.approx(1 - 2.0**-20, abs=1e-12)
    assert metric_D(path(base), path(base + 5.0)) == pytest.approx(1 - 2.0**-20, abs=1e-12)
    c = 0.37
    assert metric_D(path(base), path(base - c)) == pytest.approx(c * (1 - 2.0**-20), abs=1e-12)


def test_metric_weights_by_window():
    # difference supported only in |q| > 5 is discounted by 2^-5 and beyond
    bump = np.where(np.abs(GRID) > 5.5, 1.0, 0.0)
    smooth = np.clip(np.abs(GRID) - 5.0, 0.0, 1.0)
    d = metric_D(path(np.zeros_like(GRID)), path(smooth))
    assert d == pytest.approx(sum(min(max(k - 5.0, 0.0), 1.0) / 2.0**k for k in range(1, 21)), abs=1e-12)
    assert metric_D(path(np.zeros_like(GRID)), path(bump)) <= 2.0**-5 + 1e-12


def test_metric_requires_coverage():
    short = SampledPath(np.linspace(-5, 5, 11), np.zeros(11))
    with pytest.raises(ValidationError):
        metric_D(short, short)
    with pytest.raises(ValidationError):
        metric_D(path(GRID), path(GRID), K_max=0)


def test_metric_uses_union_grid():
    # a spike on one grid only must still be seen
    t1 = np.array([-20.0, 0.0, 20.0])
    t2 = np.array([-20.0, 0.25, 20.0])
    p1 = SampledPath(t1, np.zeros(3))
    p2 = SampledPath(t2, [0.0, 0.5, 0.0])
    assert metric_D(p1, p2) == pytest.approx(0.5 * (1 - 2.0**-20), abs=1e-12)


paths2 = st.integers(0, 2**16).map(lambda seed: np.random.default_rng(seed).standard_normal((len(GRID), 2)) * 0.5)


@settings(max_examples=80, deadline=None)
@given(paths2, paths2, paths2)
def test_metric_axioms(a, b, c):
    pa, pb, pc = path(a), path(b), path(c)
    assert metric_D(pa, pb) == metric_D(pb, pa)
    assert metric_D(pa, pc) <= metric_D(pa, pb) + metric_D(pb, pc) + 1e-12
    assert 0.0 <= metric_D(pa, pb) <= 1.0
    assert metric_D(pa, pa) == 0.0


@settings(max_examples=60, deadline=None)
@given(paths2, paths2, st.floats(0, 1))
def test_metric_monotone_in_agreement(a, b, lam):
    # p_lam agrees with a pointwise at least as well as b does
    p_lam = a + lam * (b - a)
    assert metric_D(path(a), path(p_lam)) <= metric_D(path(a), path(b)) + 1e-12


def _linear_run(noise=NoiseModel(), n=20_000, seed=0):
    drift = affine_singleton([[0.0]], K=1.0)
    return run(drift, ONE, StepSchedule(1.0, 0.9), noise, "singleton", [2.0], 0, n, seed), AveragedMap(drift, ONE)


def test_shifted_path_matches_interpolation():
    traj, _ = _linear_run(n=5000)
    sp = shifted_path(traj, 8.0, 3)
    q = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(sp.at(q), interpolate(traj, 8.0 + q), atol=1e-14)
    # negative times take the constant extension
    sp0 = shifted_path(traj, 1.0, 3)
    np.testing.assert_array_equal(sp0.at([-3.0, -1.5]), [[2.0], [2.0]])
    with pytest.raises(HorizonError):
        shifted_path(traj, traj.horizon - 1, 3)


def test_apt_noiseless_singleton_is_small():
    traj, am = _linear_run()
    grid = log_time_grid(traj, 1.0, 6, 2.0)
    series = apt_statistic(traj, am, 1.0, grid, 1e-3)
    # the recursion is an Euler scheme of the same ODE; both defects are O(step)
    assert series.e.max() < 0.02
    assert series.last < 0.002
    assert np.all(series.oracle_defect == 0.0)


def test_apt_constant_noise_bounded_away():
    traj, am = _linear_run(NoiseModel("constant", vector=(1.0,)))
    grid = log_time_grid(traj, 1.0, 6, 2.0)
    series = apt_statistic(traj, am, 1.0, grid, 1e-3)
    # x̄ settles at 1 while every solution of x' = -x decays: e ≈ 1 - exp(-1)
    assert series.e.min() > 0.3


def test_apt_monotone_in_T():
    traj, am = _linear_run(NoiseModel("bounded-iid", bound=0.5), seed=3)
    grid = [2.0, 5.0, 9.0]
    short = apt_statistic(traj, am, 0.5, grid, 1e-3)
    long = apt_statistic(traj, am, 1.5, grid, 1e-3)
    assert np.all(long.e >= short.e)


def test_apt_horizon_checks():
    traj, am = _linear_run(n=2000)
    with pytest.raises(HorizonError):
        apt_statistic(traj, am, 1.0, [traj.horizon - 0.5], 1e-3)
    with pytest.raises(HorizonError):
        window_error(traj, am, traj.horizon, 1.0, 1e-2)
    with pytest.raises(HorizonError):
        log_time_grid(traj, traj.horizon, 4)


def test_log_time_grid():
    traj, _ = _linear_run(n=5000)
    g = log_time_grid(traj, 2.0, 5, 1.0)
    assert g[0] == 1.0 and g[-1] == pytest.approx(traj.horizon - 2.0)
    np.testing.assert_allclose(np.diff(np.log(g)), np.log(g[1] / g[0]))


def test_series_export():
    s = AptSeries(np.array([1.0, 2.0]), np.array([0.5, 0.25]), np.array([0.0, 0.0]), 2.0, 1e-3)
    buf = io.StringIO()
    s.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,e,oracle_defect,T,dt"
    assert lines[2] == "2,0.25,0,2,0.001"
    assert s.nonincreasing_tail(2) and s.last == 0.25
    assert s.to_dict()["e"] == [0.5, 0.25]
