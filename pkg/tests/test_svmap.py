import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from srikit.errors import ValidationError
from srikit.geometry import ConvexBody, distance, support
from srikit.svmap import (
    abs_deviation_pieces,
    affine_singleton,
    approximate_drift,
    check_closed_graph,
    check_growth,
    controlled_hull,
    filippov_envelope,
    jump_fixture,
    max_affine_subgradient,
    singleton_map,
    unit_ball_samples,
)

X_SAMPLES = np.linspace(-5, 5, 41)[:, None]


def test_singleton_examples():
    m = singleton_map(lambda x, s: -x, K=1.0, dim=1, n_states=2)
    body = m.eval([2.0], 0)
    np.testing.assert_array_equal(body.generators, [[-2.0]])
    assert body.radius == 0
    assert check_growth(m, X_SAMPLES).ok
    shifted = affine_singleton([[0.0], [1.0]], K=2.0)
    np.testing.assert_array_equal(shifted.eval([0.0], 1).generators, [[1.0]])


def test_approximate_examples():
    base = singleton_map(lambda x, s: -x, K=1.0, dim=1, n_states=1)
    assert approximate_drift(base, 0.0) is base
    m = approximate_drift(base, 0.1)
    b = m.eval([1.0], 0)
    np.testing.assert_array_equal(b.generators, [[-1.0]])
    assert b.radius == 0.1
    assert m.growth_K == pytest.approx(1.1)
    for u in (np.array([2.0]), np.array([-0.5])):
        assert support(b, u) == pytest.approx(-1.0 * u[0] + 0.1 * abs(u[0]), abs=1e-15)


def test_approximate_errors():
    base = singleton_map(lambda x, s: -x, K=1.0, dim=1, n_states=1)
    with pytest.raises(ValidationError):
        approximate_drift(base, -0.1)
    hull = controlled_hull(lambda x, z, s: z * x, [-1, 1], K=1.0, dim=1, n_states=1)
    with pytest.raises(ValidationError):
        approximate_drift(hull, 0.1)


def test_growth_report_flags_ball_inflation():
    # -x leaves slack 1 under K=1, so the 0.1 ball alone cannot violate
    loose = approximate_drift(singleton_map(lambda x, s: -x, K=1.0, dim=1, n_states=1), 0.1)
    assert check_growth(type(loose)(loose.eval_fn, 1.0, 1, 1), X_SAMPLES).ok
    # -x - 1 saturates K=1 for x >= 0; the ball pushes it over
    tight = approximate_drift(singleton_map(lambda x, s: -x - 1.0, K=1.0, dim=1, n_states=1), 0.1)
    report = check_growth(type(tight)(tight.eval_fn, 1.0, 1, 1), X_SAMPLES)
    assert not report.ok
    assert all(v[0][0] >= -0.05 for v in report.violations)
    assert check_growth(tight, X_SAMPLES).ok


def test_controlled_hull_examples():
    single = controlled_hull(lambda x, z, s: z * x, [2.0], K=2.0, dim=1, n_states=1)
    assert single.point_fn is not None
    np.testing.assert_array_equal(single.eval([1.5], 0).generators, [[3.0]])
    m = controlled_hull(lambda x, z, s: z * x, [-1.0, 1.0], K=1.0, dim=1, n_states=1)
    b = m.eval([1.0], 0)
    assert sorted(b.generators.ravel()) == [-1.0, 1.0]
    assert support(b, [1.0]) == 1.0
    with pytest.raises(ValidationError):
        controlled_hull(lambda x, z, s: x, [], K=1.0, dim=1, n_states=1)


def test_max_affine_examples():
    m = max_affine_subgradient([[([1.0], 0.0), ([-1.0], 0.0)]])
    assert sorted(m.eval([0.0], 0).generators.ravel()) == [-1.0, 1.0]
    np.testing.assert_array_equal(m.eval([2.0], 0).generators, [[-1.0]])
    m2 = max_affine_subgradient(abs_deviation_pieces([2.0]), K=1.0)
    np.testing.assert_array_equal(m2.eval([5.0], 0).generators, [[-1.0]])
    assert check_growth(m2, X_SAMPLES).ok
    assert m2.objective([5.0], 0) == 3.0


def test_max_affine_validation():
    with pytest.raises(ValidationError):
        max_affine_subgradient([[]])
    with pytest.raises(ValidationError):
        max_affine_subgradient([[([1.0], 0.0)]], tie_tol=0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3)), min_size=1, max_size=5
    ),
    st.floats(-5, 5),
    st.floats(-5, 5),
)
def test_max_affine_smooth_points_return_negative_gradient(pieces, x0, x1):
    plist = [([a0, a1], b) for a0, a1, b in pieces]
    m = max_affine_subgradient([plist])
    x = np.array([x0, x1])
    vals = np.array([a0 * x0 + a1 * x1 + b for a0, a1, b in pieces])
    order = np.sort(vals)
    if len(vals) > 1 and order[-1] - order[-2] < 1e-6:
        return  # not a smooth point
    i = int(np.argmax(vals))
    b = m.eval(x, 0)
    np.testing.assert_allclose(b.generators, [[-pieces[i][0], -pieces[i][1]]])


def test_filippov_examples():
    def sign(x, s):
        return np.sign(x)

    m = filippov_envelope(sign, 0.1, 4000, rng_seed=0, K=1.0, dim=1, n_states=1)
    # brute-force: sampling the ball around 0 hits both sides, so the hull is [-1, 1]
    g = m.eval([0.0], 0).generators.ravel()
    assert g.min() == -1.0 and g.max() == 1.0
    np.testing.assert_array_equal(m.eval([5.0], 0).generators, [[1.0]])
    with pytest.raises(ValidationError):
        filippov_envelope(sign, 0.0, 10, 0, K=1.0, dim=1, n_states=1)


def test_filippov_shrinks_for_continuous_h():
    def h(x, s):
        return np.array([np.sin(x[0]), x[1] ** 2])

    x = np.array([0.3, -0.7])
    diams = []
    for eps in (0.5, 0.1, 0.01, 0.001):
        G = filippov_envelope(h, eps, 64, 1, K=2.0, dim=2, n_states=1).eval(x, 0).generators
        diams.append(np.max(np.linalg.norm(G[:, None] - G[None], axis=-1)))
    assert all(b < a for a, b in zip(diams, diams[1:]))
    assert diams[-1] < 1e-2


@settings(max_examples=30, deadline=None)
@given(st.floats(0.01, 1.0), st.floats(0.1, 1.0), st.integers(0, 2**16), st.floats(-2, 2), st.floats(-2, 2))
def test_filippov_monotone_in_eps_with_nested_samples(eps1, frac, seed, x0, x1):
    def h(x, s):
        return np.sign(x) + 0.1 * x

    eps2 = eps1 / frac
    base = unit_ball_samples(40, 2, np.random.default_rng(seed))
    small = filippov_envelope(h, eps1, 0, None, 1.2, 2, 1, offsets=eps1 * base)
    big = filippov_envelope(h, eps2, 0, None, 1.2, 2, 1, offsets=np.vstack([eps1 * base, eps2 * base]))
    x = np.array([x0, x1])
    B = big.eval(x, 0)
    for z in small.eval(x, 0).generators:
        assert distance(B, z) <= 1e-9


def test_closed_graph_continuous_singleton():
    m = singleton_map(lambda x, s: -x, K=1.0, dim=2, n_states=1)
    rep = check_closed_graph(m, np.array([0.5, -1.0]), 0)
    assert rep.ok
    assert rep.defects[-1] <= 1e-3 + 1e-12


def test_closed_graph_max_affine_kink():
    # -d|x| at the kink is [-1, 1]; nearby subdifferentials sit inside it
    m = max_affine_subgradient(abs_deviation_pieces([0.0]))
    rep = check_closed_graph(m, np.array([0.0]), 0)
    assert rep.ok
    assert rep.defects == [0.0, 0.0, 0.0]


def test_closed_graph_flags_jump_fixture():
    rep = check_closed_graph(jump_fixture(dim=1), np.array([0.0]), 0)
    assert not rep.ok
    assert rep.defects[-1] == pytest.approx(1.0)


def test_closed_graph_radii_must_decrease():
    m = singleton_map(lambda x, s: -x, K=1.0, dim=1, n_states=1)
    with pytest.raises(ValidationError):
        check_closed_graph(m, np.array([0.0]), 0, radii=(1e-2, 1e-1))


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 1), st.floats(-3, 3))
def test_approximate_zero_eps_matches_base(x, s, d):
    base = affine_singleton([[0.0], [0.4]], K=1.0)
    same = approximate_drift(base, 0.0)
    assert support(same.eval([x], s), [d]) == pytest.approx(support(base.eval([x], s), [d]), abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.floats(-10, 10), st.integers(0, 2))
def test_every_eval_is_a_valid_body(x, s):
    maps = [
        affine_singleton([[0.0], [0.4], [1.0]], K=2.0),
        max_affine_subgradient(abs_deviation_pieces([-1.0, 0.0, 2.0])),
        filippov_envelope(lambda y, t: np.sign(y), 0.1, 16, 0, K=1.0, dim=1, n_states=3),
    ]
    for m in maps:
        assert isinstance(m.eval([x], s), ConvexBody)
